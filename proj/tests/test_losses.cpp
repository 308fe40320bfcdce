#include <catch2/catch_amalgamated.hpp>

#include "advart/losses.hpp"
#include "support/test_util.hpp"

using namespace advart;
using testutil::grad_check;
using testutil::random_values;

TEST_CASE("detection loss is the batch mean of per-image maxima", "[losses]") {
  // one image with box products {0.9*0.8, 0.5*0.9} -> 0.72
  Graph g;
  Tensor scores = g.leaf({2}, {0.9 * 0.8, 0.5 * 0.9});
  Tensor one = detection_loss({max_all(scores)});
  CHECK(one.item() == Catch::Approx(0.72).margin(1e-15));

  Tensor two = detection_loss({Tensor::scalar(0.72), Tensor::scalar(0.40)});
  CHECK(two.item() == Catch::Approx(0.56).margin(1e-15));

  CHECK(detection_loss({Tensor::scalar(0.0), Tensor::scalar(0.0)}).item() == 0.0);
  CHECK_THROWS_WITH(detection_loss({}), Catch::Matchers::ContainsSubstring("empty"));
}

TEST_CASE("similarity mse", "[losses]") {
  Rng rng(2);
  Tensor p = Tensor::from({3, 4, 4}, random_values(rng, 48, 0.0, 1.0));
  CHECK(similarity_mse(p, p).item() == 0.0);

  Tensor ones = Tensor::full({3, 4, 4}, 1.0);
  Tensor zeros = Tensor::full({3, 4, 4}, 0.0);
  CHECK(similarity_mse(ones, zeros).item() == 1.0);

  // direct recomputation
  Tensor q = Tensor::from({3, 4, 4}, random_values(rng, 48, 0.0, 1.0));
  double manual = 0.0;
  for (int i = 0; i < 48; ++i) manual += (p[i] - q[i]) * (p[i] - q[i]);
  manual /= 48.0;
  CHECK(similarity_mse(p, q).item() == Catch::Approx(manual).margin(1e-12));

  CHECK_THROWS(similarity_mse(p, Tensor::full({3, 5, 5}, 0.5)));
}

TEST_CASE("similarity cosine", "[losses]") {
  Rng rng(3);
  auto vals = random_values(rng, 48, 0.1, 1.0);
  Tensor p = Tensor::from({3, 4, 4}, vals);
  CHECK(similarity_cosine(p, p).item() == Catch::Approx(-1.0).margin(1e-12));

  // disjoint supports are orthogonal
  std::vector<double> a(48, 0.0), b(48, 0.0);
  for (int i = 0; i < 24; ++i) a[static_cast<std::size_t>(i)] = 0.5;
  for (int i = 24; i < 48; ++i) b[static_cast<std::size_t>(i)] = 0.5;
  CHECK(similarity_cosine(Tensor::from({3, 4, 4}, a), Tensor::from({3, 4, 4}, b)).item() == 0.0);

  // scale invariance
  auto doubled = vals;
  for (auto& v : doubled) v *= 2.0;
  Tensor p2 = Tensor::from({3, 4, 4}, doubled);
  Tensor n = Tensor::from({3, 4, 4}, random_values(rng, 48, 0.1, 1.0));
  CHECK(std::abs(similarity_cosine(p2, n).item() - similarity_cosine(p, n).item()) < 1e-12);

  CHECK_THROWS_WITH(similarity_cosine(Tensor::full({3, 4, 4}, 0.0), n),
                    Catch::Matchers::ContainsSubstring("near-zero norm"));
}

TEST_CASE("tv loss", "[losses]") {
  // constant patch: every term is sqrt(eps)
  Tensor flat = Tensor::full({3, 8, 8}, 0.42);
  CHECK(tv_loss(flat).item() <= 8 * 8 * 3 * 1e-4 * (1 + 1e-9));

  // single-channel 2x2 [[0,1],[0,1]]: terms 1, 0, 1, 0 under the boundary rule
  Tensor steps = Tensor::from({1, 2, 2}, {0.0, 1.0, 0.0, 1.0});
  CHECK(tv_loss(steps).item() == Catch::Approx(2.0).margin(1e-3));

  // direct recomputation on a random patch
  Rng rng(4);
  auto vals = random_values(rng, 3 * 5 * 5, 0.0, 1.0);
  Tensor p = Tensor::from({3, 5, 5}, vals);
  double manual = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        auto at = [&](int y, int x) { return vals[static_cast<std::size_t>((c * 5 + y) * 5 + x)]; };
        const double dv = i + 1 < 5 ? at(i + 1, j) - at(i, j) : 0.0;
        const double dh = j + 1 < 5 ? at(i, j + 1) - at(i, j) : 0.0;
        manual += std::sqrt(dv * dv + dh * dh + 1e-8);
      }
  CHECK(tv_loss(p).item() == Catch::Approx(manual).margin(1e-9));
}

TEST_CASE("total loss composition", "[losses]") {
  LossWeights w;  // alpha 1, beta 8, gamma 0.5
  w.sim_metric = SimMetric::Mse;
  LossBreakdown mse_case = total_loss(0.5, 0.2, 2.0, w);
  CHECK(mse_case.sim_effective == Catch::Approx(0.04).margin(1e-15));
  CHECK(mse_case.total == Catch::Approx(1.82).margin(1e-12));

  w.sim_metric = SimMetric::Cosine;
  LossBreakdown cos_case = total_loss(0.5, -0.8, 2.0, w);
  CHECK(cos_case.sim_effective == Catch::Approx(-0.64).margin(1e-15));
  CHECK(cos_case.total == Catch::Approx(-3.62).margin(1e-12));

  LossWeights nobeta = w;
  nobeta.beta = 0.0;
  CHECK(total_loss(0.5, -0.8, 2.0, nobeta).total == total_loss(0.5, -0.1, 2.0, nobeta).total);

  // graph-side composition agrees with the numeric breakdown
  LossBreakdown bd = total_loss(0.37, -0.61, 1.23, w);
  Tensor node = total_loss_node(Tensor::scalar(0.37), Tensor::scalar(-0.61),
                                Tensor::scalar(1.23), w);
  CHECK(node.item() == bd.total);
  CHECK(bd.total ==
        Catch::Approx(w.alpha * bd.det + w.beta * bd.sim_effective + w.gamma * bd.tv)
            .margin(1e-12));
}

TEST_CASE("total loss is linear in each weight", "[losses]") {
  LossWeights w;
  w.sim_metric = SimMetric::Cosine;
  const double det = 0.4, sim = -0.7, tv = 3.1;
  LossBreakdown base = total_loss(det, sim, tv, w);
  LossWeights w2 = w;
  w2.beta = 2.0 * w.beta;
  LossBreakdown dbl = total_loss(det, sim, tv, w2);
  CHECK(dbl.total - w.alpha * det - w.gamma * tv ==
        Catch::Approx(2.0 * (base.total - w.alpha * det - w.gamma * tv)).margin(1e-12));
}

TEST_CASE("loss gradients match finite differences on random patches", "[losses]") {
  Rng rng(5);
  const Shape shape{3, 8, 8};
  const std::size_t n = 3 * 8 * 8;
  Tensor target = Tensor::from(shape, random_values(rng, n, 0.05, 0.95));
  for (int inst = 0; inst < 3; ++inst) {
    auto x0 = random_values(rng, n, 0.05, 0.95);
    CHECK(grad_check(shape, x0, [&](Graph&, const Tensor& t) {
            return similarity_mse(t, target);
          }) < 1e-5);
    CHECK(grad_check(shape, x0, [&](Graph&, const Tensor& t) {
            return similarity_cosine(t, target);
          }) < 1e-5);
    CHECK(grad_check(shape, x0, [&](Graph&, const Tensor& t) { return tv_loss(t); }) < 1e-5);
    LossWeights w;
    w.sim_metric = inst % 2 ? SimMetric::Mse : SimMetric::Cosine;
    CHECK(grad_check(shape, x0, [&](Graph&, const Tensor& t) {
            return total_loss_node(mean(square(t)), similarity_loss(w.sim_metric, t, target),
                                   tv_loss(t), w);
          }) < 1e-5);
  }
}

TEST_CASE("ranges and descent probe", "[losses]") {
  Rng rng(6);
  const Shape shape{3, 6, 6};
  const std::size_t n = 3 * 6 * 6;
  for (int inst = 0; inst < 5; ++inst) {
    Tensor p = Tensor::from(shape, random_values(rng, n, 0.0, 1.0));
    Tensor t = Tensor::from(shape, random_values(rng, n, 0.05, 1.0));
    CHECK(similarity_mse(p, t).item() >= 0.0);
    double cosv = similarity_cosine(add(p, 0.01), t).item();
    CHECK(cosv >= -1.0 - 1e-12);
    CHECK(cosv <= 0.0);
    CHECK(tv_loss(p).item() >= 0.0);
  }

  // one gradient step along -grad(mse) strictly decreases mse
  for (int inst = 0; inst < 5; ++inst) {
    auto x0 = random_values(rng, n, 0.1, 0.9);
    Tensor target = Tensor::from(shape, random_values(rng, n, 0.1, 0.9));
    Graph g;
    Tensor leaf = g.leaf(shape, x0);
    Tensor loss = similarity_mse(leaf, target);
    g.backward(loss);
    auto grad = g.grad(leaf);
    for (double step : {1e-3, 1e-4}) {
      auto moved = x0;
      for (std::size_t i = 0; i < n; ++i) moved[i] -= step * grad[i];
      Graph g2;
      double after = similarity_mse(g2.leaf(shape, moved), target).item();
      CHECK(after < loss.item());
    }
  }
}
