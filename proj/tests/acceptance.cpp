#include <cstdio>
int main(){ std::puts("acceptance: not wired"); return 1; }
