#include <cstdio>

int main() {
  std::puts("advart: not wired up yet");
  return 1;
}
