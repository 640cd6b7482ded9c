#include "darn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "darn/rng.hpp"
#include "doctest.h"

using namespace darn;

namespace {

bool close(double a, double b, double tol = 1e-12) {
  return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& d : t.v) d = scale * rng.normal();
  return t;
}

// Builds leaves for every parameter, runs `build`, optionally backpropagates.
template <typename BuildFn>
LossProbe run_graph(std::vector<Tensor>& params, BuildFn&& build, std::vector<Tensor>* grads) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (Tensor& p : params) leaves.push_back(g.leaf(p, true));
  Var loss = build(g, leaves);
  if (grads) {
    g.backward(loss);
    grads->clear();
    for (Var v : leaves) grads->push_back(v.grad());
  }
  return {loss.value().v[0], g.fd_hazard_margin(), g.region_signature()};
}

template <typename BuildFn>
GradCheckReport fd_check(std::vector<Tensor>& params, BuildFn&& build, std::uint64_t seed = 1,
                         std::size_t coords = 8) {
  std::vector<Tensor> grads;
  run_graph(params, build, &grads);
  std::vector<ParamGrad> pg;
  pg.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) pg.emplace_back(&params[i], &grads[i]);
  GradCheckOptions opt;
  opt.seed = seed;
  opt.coords_per_tensor = coords;
  return finite_difference_check([&]() { return run_graph(params, build, nullptr); }, pg, opt);
}

// ---------------------------------------------------------------------------
// Independent oracles, deliberately structured differently from the library
// implementations.

// Convolution by input-scatter: each (input element, weight element) pair is
// routed to the output cell it aligns with, if any.
Tensor conv_scatter_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                           int pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor out({N, F, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t o = 0; o < Ho * Wo; ++o) out.v[(n * F + f) * Ho * Wo + o] = b.v[f];
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx)
          for (std::size_t f = 0; f < F; ++f)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long oy_num = long(y) + pad - long(i);
                const long ox_num = long(xx) + pad - long(j);
                if (oy_num < 0 || ox_num < 0) continue;
                if (oy_num % stride || ox_num % stride) continue;
                const std::size_t oy = std::size_t(oy_num) / stride;
                const std::size_t ox = std::size_t(ox_num) / stride;
                if (oy >= Ho || ox >= Wo) continue;
                out.v[out.at4(n, f, oy, ox)] +=
                    x.v[x.at4(n, c, y, xx)] * w.v[w.at4(f, c, i, j)];
              }
  return out;
}

// Max pooling by gathering each window into a list and scanning it.
Tensor maxpool_scan_oracle(const Tensor& x, int window, int stride) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = (H - window) / stride + 1;
  const std::size_t Wo = (W - window) / stride + 1;
  Tensor out({N, C, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          std::vector<double> vals;
          for (int dy = 0; dy < window; ++dy)
            for (int dx = 0; dx < window; ++dx)
              vals.push_back(x.v[x.at4(n, c, oy * stride + dy, ox * stride + dx)]);
          out.v[out.at4(n, c, oy, ox)] = *std::max_element(vals.begin(), vals.end());
        }
  return out;
}

// Adaptive 3x3 pooling by assigning every input cell to its bin.
Tensor adaptive_bin_oracle(const Tensor& x) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = Tensor::full({N, C, 3, 3}, -std::numeric_limits<double>::infinity());
  auto bin_of = [](std::size_t pos, std::size_t extent) {
    for (std::size_t i = 0; i < 3; ++i)
      if (pos >= i * extent / 3 && pos < (i + 1) * extent / 3) return i;
    return std::size_t(2);
  };
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const std::size_t by = bin_of(y, H), bx = bin_of(xx, W);
          double& slot = out.v[out.at4(n, c, by, bx)];
          slot = std::max(slot, x.v[x.at4(n, c, y, xx)]);
        }
  return out;
}

// Cross entropy without log-sum-exp rearrangement (safe for small logits).
double ce_naive_oracle(const Tensor& z, const std::vector<int>& labels) {
  const std::size_t N = z.dim(0), K = z.dim(1);
  double total = 0.0;
  std::size_t live = 0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] == kMissingLabel) continue;
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(z.v[n * K + k]);
    total += -std::log(std::exp(z.v[n * K + labels[n]]) / denom);
    ++live;
  }
  return live ? total / double(live) : 0.0;
}

double triplet_naive_oracle(const Tensor& a, const Tensor& b, const Tensor& c, double margin,
                            Distance dist) {
  const std::size_t T = a.dim(0), D = a.dim(1);
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    double sab = 0.0, sac = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      sab += (a.v[t * D + d] - b.v[t * D + d]) * (a.v[t * D + d] - b.v[t * D + d]);
      sac += (a.v[t * D + d] - c.v[t * D + d]) * (a.v[t * D + d] - c.v[t * D + d]);
    }
    double dab = dist == Distance::Euclidean ? std::sqrt(sab) : sab;
    double dac = dist == Distance::Euclidean ? std::sqrt(sac) : sac;
    total += std::max(0.0, margin + dab - dac);
  }
  return total / double(T);
}

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("conv2d worked example: ones kernel sums the window") {
  Graph g;
  Var x = g.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
  Var w = g.leaf(Tensor::full({1, 1, 2, 2}, 1.0));
  Var b = g.leaf(Tensor::zeros({1}));
  Var y = g.conv2d(x, w, b, 1, 0);
  CHECK(y.value().shape == std::vector<std::size_t>{1, 1, 2, 2});
  for (double d : y.value().v) CHECK(d == 4.0);
}

TEST_CASE("conv2d matches the scatter oracle across configs") {
  struct Cfg {
    std::size_t N, C, H, W, F, k;
    int stride, pad;
  };
  for (Cfg cfg : {Cfg{2, 3, 7, 7, 4, 3, 1, 1}, Cfg{1, 2, 8, 6, 3, 3, 2, 1},
                  Cfg{2, 1, 5, 5, 2, 1, 1, 0}, Cfg{1, 4, 6, 6, 5, 5, 1, 2}}) {
    Tensor x = random_tensor({cfg.N, cfg.C, cfg.H, cfg.W}, 100 + cfg.k);
    Tensor w = random_tensor({cfg.F, cfg.C, cfg.k, cfg.k}, 200 + cfg.k);
    Tensor b = random_tensor({cfg.F}, 300 + cfg.k);
    Graph g;
    Var y = g.conv2d(g.leaf(x), g.leaf(w), g.leaf(b), cfg.stride, cfg.pad);
    Tensor ref = conv_scatter_oracle(x, w, b, cfg.stride, cfg.pad);
    REQUIRE(y.value().shape == ref.shape);
    for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(close(y.value().v[i], ref.v[i]));
  }
}

TEST_CASE("conv2d shape errors") {
  Graph g;
  Var x3 = g.leaf(Tensor::zeros({1, 3, 3}));
  Var w = g.leaf(Tensor::zeros({1, 1, 2, 2}));
  Var b = g.leaf(Tensor::zeros({1}));
  CHECK_THROWS_AS(g.conv2d(x3, w, b), Error);
  Var x = g.leaf(Tensor::zeros({1, 2, 3, 3}));  // C mismatch
  CHECK_THROWS_AS(g.conv2d(x, w, b), Error);
  Var xs = g.leaf(Tensor::zeros({1, 1, 3, 3}));
  Var wbig = g.leaf(Tensor::zeros({1, 1, 5, 5}));  // kernel larger than input
  Var b2 = g.leaf(Tensor::zeros({1}));
  CHECK_THROWS_AS(g.conv2d(xs, wbig, b2), Error);
  try {
    g.conv2d(x3, w, b);
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::Dimension);
  }
}

TEST_CASE("conv2d gradients pass finite differences") {
  std::vector<Tensor> params;
  params.push_back(random_tensor({2, 2, 5, 5}, 1));
  params.push_back(random_tensor({3, 2, 3, 3}, 2, 0.5));
  params.push_back(random_tensor({3}, 3, 0.1));
  auto build = [](Graph& g, std::vector<Var>& L) {
    return g.sum(g.conv2d(L[0], L[1], L[2], 1, 1));
  };
  auto report = fd_check(params, build);
  CHECK(report.coords_checked == 8 + 8 + 3);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("maxpool worked example on an index ramp") {
  Tensor x({1, 1, 6, 6});
  for (std::size_t i = 0; i < 36; ++i) x.v[i] = double(i);
  Graph g;
  Var y = g.maxpool(g.leaf(x), 2, 2);
  const std::vector<double> expect{7, 9, 11, 19, 21, 23, 31, 33, 35};
  REQUIRE(y.value().v.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) CHECK(y.value().v[i] == expect[i]);
}

TEST_CASE("maxpool matches the scan oracle") {
  for (auto [window, stride] : std::vector<std::pair<int, int>>{{2, 2}, {3, 1}, {3, 3}, {2, 1}}) {
    Tensor x = random_tensor({2, 3, 6, 6}, 40 + window * 10 + stride);
    Graph g;
    Var y = g.maxpool(g.leaf(x), window, stride);
    Tensor ref = maxpool_scan_oracle(x, window, stride);
    REQUIRE(y.value().shape == ref.shape);
    for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(y.value().v[i] == ref.v[i]);
  }
}

TEST_CASE("maxpool routes gradient to the first maximum under ties") {
  Tensor x = Tensor::full({1, 1, 2, 2}, 5.0);
  Graph g;
  Var xv = g.leaf(x, true);
  Var y = g.maxpool(xv, 2, 2);
  g.backward(g.sum(y));
  Tensor gx = xv.grad();
  CHECK(gx.v == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  // A tied window means the evaluation sits exactly on a kink.
  CHECK(g.min_kink_margin() == 0.0);
}

TEST_CASE("maxpool gradients pass finite differences") {
  std::vector<Tensor> params;
  params.push_back(random_tensor({2, 2, 6, 6}, 77));
  auto build = [](Graph& g, std::vector<Var>& L) { return g.sum(g.maxpool(L[0], 2, 2)); };
  auto report = fd_check(params, build);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("adaptive pooling matches the bin-assignment oracle") {
  for (std::size_t hw : {3, 4, 5, 6, 7, 16}) {
    Tensor x = random_tensor({2, 2, hw, hw}, 500 + hw);
    Graph g;
    Var y = g.adaptive_maxpool_3x3(g.leaf(x));
    Tensor ref = adaptive_bin_oracle(x);
    REQUIRE(y.value().shape == ref.shape);
    for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(y.value().v[i] == ref.v[i]);
  }
}

TEST_CASE("adaptive pooling of a 3x3 map is the identity") {
  Tensor x = random_tensor({1, 2, 3, 3}, 9);
  Graph g;
  Var y = g.adaptive_maxpool_3x3(g.leaf(x));
  CHECK(y.value().v == x.v);
}

TEST_CASE("adaptive pooling gradients pass finite differences") {
  std::vector<Tensor> params;
  params.push_back(random_tensor({1, 2, 7, 7}, 31));
  auto build = [](Graph& g, std::vector<Var>& L) {
    return g.sum(g.adaptive_maxpool_3x3(L[0]));
  };
  auto report = fd_check(params, build);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("fully_connected worked example and errors") {
  Graph g;
  Var x = g.leaf(Tensor::from({1, 2}, {1.0, 2.0}));
  Var w = g.leaf(Tensor::from({2, 2}, {1.0, 3.0, 2.0, 4.0}));
  Var b = g.leaf(Tensor::from({2}, {0.5, -0.5}));
  Var y = g.fully_connected(x, w, b);
  CHECK(close(y.value().v[0], 1 * 1 + 2 * 2 + 0.5));
  CHECK(close(y.value().v[1], 1 * 3 + 2 * 4 - 0.5));

  Var wbad = g.leaf(Tensor::zeros({3, 2}));
  CHECK_THROWS_AS(g.fully_connected(x, wbad, b), Error);
}

TEST_CASE("fully_connected gradients pass finite differences") {
  std::vector<Tensor> params;
  params.push_back(random_tensor({3, 4}, 21));
  params.push_back(random_tensor({4, 5}, 22));
  params.push_back(random_tensor({5}, 23));
  auto build = [](Graph& g, std::vector<Var>& L) {
    return g.sum(g.relu(g.fully_connected(L[0], L[1], L[2])));
  };
  auto report = fd_check(params, build);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("relu clamps and uses subgradient zero at the kink") {
  Graph g;
  Var x = g.leaf(Tensor::from({1, 4}, {-2.0, 0.0, 3.0, -0.5}), true);
  Var y = g.relu(x);
  CHECK(y.value().v == std::vector<double>{0.0, 0.0, 3.0, 0.0});
  g.backward(g.sum(y));
  CHECK(x.grad().v == std::vector<double>{0.0, 0.0, 1.0, 0.0});
  CHECK(g.min_kink_margin() == 0.0);  // the exact zero sits on the kink
}

TEST_CASE("min_kink_margin tracks the closest relu input") {
  Graph g;
  Var x = g.leaf(Tensor::from({1, 3}, {0.25, -0.125, 2.0}));
  g.relu(x);
  CHECK(g.min_kink_margin() == 0.125);
}

TEST_CASE("flatten reshapes and routes gradients through") {
  Graph g;
  Var x = g.leaf(random_tensor({2, 3, 2, 2}, 5), true);
  Var y = g.flatten(x);
  CHECK(y.value().shape == std::vector<std::size_t>{2, 12});
  CHECK(y.value().v == x.value().v);
  g.backward(g.sum(y));
  for (double d : x.grad().v) CHECK(d == 1.0);
}

TEST_CASE("concat layout and gradient slicing") {
  Graph g;
  Var a = g.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}), true);
  Var b = g.leaf(Tensor::from({2, 1}, {5, 6}), true);
  Var y = g.concat({a, b});
  CHECK(y.value().shape == std::vector<std::size_t>{2, 3});
  CHECK(y.value().v == std::vector<double>{1, 2, 5, 3, 4, 6});

  // Weight the columns so slices are distinguishable.
  Var w = g.leaf(Tensor::from({3, 1}, {1.0, 10.0, 100.0}));
  Var bias = g.leaf(Tensor::zeros({1}));
  g.backward(g.sum(g.fully_connected(y, w, bias)));
  CHECK(a.grad().v == std::vector<double>{1, 10, 1, 10});
  CHECK(b.grad().v == std::vector<double>{100, 100});

  Var c = g.leaf(Tensor::zeros({3, 2}));
  CHECK_THROWS_AS(g.concat({a, c}), Error);
}

TEST_CASE("gather_rows selects and scatter-adds, duplicates accumulate") {
  Graph g;
  Var x = g.leaf(Tensor::from({3, 2}, {0, 1, 10, 11, 20, 21}), true);
  Var y = g.gather_rows(x, {2, 0, 2});
  CHECK(y.value().v == std::vector<double>{20, 21, 0, 1, 20, 21});
  g.backward(g.sum(y));
  CHECK(x.grad().v == std::vector<double>{1, 1, 0, 0, 2, 2});
  CHECK_THROWS_AS(g.gather_rows(x, {3}), Error);
}

TEST_CASE("row normalization: unit norms, zero rows pass through with identity gradient") {
  Graph g;
  Var x = g.leaf(Tensor::from({3, 2}, {3, 4, 0, 0, 0, -2}), true);
  Var y = g.l2_normalize_rows(x);
  CHECK(y.value().v == std::vector<double>{0.6, 0.8, 0.0, 0.0, 0.0, -1.0});

  g.backward(g.sum(y));
  // d sum(x/|x|) / dx = 1/n - x (sum x)/n^3 per row; the zero row is identity
  CHECK(close(x.grad().v[0], 1.0 / 5.0 - 3.0 * 7.0 / 125.0));
  CHECK(close(x.grad().v[1], 1.0 / 5.0 - 4.0 * 7.0 / 125.0));
  CHECK(x.grad().v[2] == 1.0);
  CHECK(x.grad().v[3] == 1.0);
  CHECK(close(x.grad().v[4], 0.5));
  CHECK(close(x.grad().v[5], 0.0));

  Graph g2;
  CHECK_THROWS_AS(g2.l2_normalize_rows(g2.leaf(Tensor::zeros({4}))), Error);
}

TEST_CASE("row normalization produces unit rows on random input") {
  Tensor t = random_tensor({6, 5}, 88);
  Graph g;
  Var y = g.l2_normalize_rows(g.leaf(t));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += y.value().v[r * 5 + c] * y.value().v[r * 5 + c];
    CHECK(close(std::sqrt(s), 1.0));
  }
}

TEST_CASE("row normalization gradients pass finite differences") {
  std::vector<Tensor> params;
  params.push_back(random_tensor({4, 3}, 89));
  auto build = [](Graph& g, std::vector<Var>& L) { return g.sum(g.l2_normalize_rows(L[0])); };
  auto report = fd_check(params, build);
  CHECK(report.max_rel_error < 1e-6);
  CHECK(report.coords_checked > 0);
}

// ---------------------------------------------------------------------------

TEST_CASE("cross entropy worked example: uniform logits give log K") {
  Graph g;
  Var z = g.leaf(Tensor::zeros({1, 4}));
  Var loss = g.softmax_cross_entropy(z, {0});
  CHECK(close(loss.value().v[0], std::log(4.0)));
  CHECK(loss.value().v[0] == doctest::Approx(1.3863).epsilon(1e-4));
}

TEST_CASE("cross entropy matches the naive oracle with missing labels") {
  Tensor z = random_tensor({6, 5}, 61);
  std::vector<int> labels{0, kMissingLabel, 4, 2, kMissingLabel, 1};
  Graph g;
  Var loss = g.softmax_cross_entropy(g.leaf(z), labels);
  CHECK(close(loss.value().v[0], ce_naive_oracle(z, labels)));
}

TEST_CASE("cross entropy is exactly zero with no gradient when all labels are missing") {
  Tensor z = random_tensor({3, 4}, 62);
  Graph g;
  Var zv = g.leaf(z, true);
  Var loss = g.softmax_cross_entropy(zv, {kMissingLabel, kMissingLabel, kMissingLabel});
  CHECK(loss.value().v[0] == 0.0);
  g.backward(loss);
  CHECK(!zv.grad_live());
  for (double d : zv.grad().v) CHECK(d == 0.0);
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  Graph g;
  Var z = g.leaf(Tensor::zeros({2, 3}));
  CHECK_THROWS_AS(g.softmax_cross_entropy(z, {0, 3}), Error);
  CHECK_THROWS_AS(g.softmax_cross_entropy(z, {-2, 0}), Error);
  try {
    g.softmax_cross_entropy(z, {0, 5});
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::LabelRange);
  }
}

TEST_CASE("cross entropy is stable for extreme logits") {
  Tensor z = Tensor::from({1, 3}, {1000.0, -1000.0, 999.0});
  Graph g;
  Var loss = g.softmax_cross_entropy(g.leaf(z), {0});
  // exact: log(1 + e^-1 + e^-2000) ~= 0.313262
  CHECK(loss.value().v[0] == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));
  CHECK(std::isfinite(loss.value().v[0]));
}

TEST_CASE("cross entropy gradients pass finite differences") {
  std::vector<Tensor> params;
  params.push_back(random_tensor({5, 4}, 71));
  std::vector<int> labels{2, kMissingLabel, 0, 3, 1};
  auto build = [&labels](Graph& g, std::vector<Var>& L) {
    return g.softmax_cross_entropy(L[0], labels);
  };
  auto report = fd_check(params, build);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("cross entropy missing rows get bitwise-zero gradients") {
  Tensor z = random_tensor({4, 3}, 72);
  std::vector<int> with{1, kMissingLabel, 2, 0};
  Graph g;
  Var zv = g.leaf(z, true);
  g.backward(g.softmax_cross_entropy(zv, with));
  Tensor gz = zv.grad();
  for (std::size_t k = 0; k < 3; ++k) CHECK(gz.v[1 * 3 + k] == 0.0);
  // Present rows do receive gradient.
  double mass = 0.0;
  for (std::size_t k = 0; k < 3; ++k) mass += std::fabs(gz.v[k]);
  CHECK(mass > 0.0);
}

// ---------------------------------------------------------------------------

TEST_CASE("triplet worked examples: inactive, active, coincident") {
  const double m = 0.3;
  auto eval = [m](std::vector<double> a, std::vector<double> b, std::vector<double> c) {
    Graph g;
    Var av = g.leaf(Tensor::from({1, 2}, std::move(a)));
    Var bv = g.leaf(Tensor::from({1, 2}, std::move(b)));
    Var cv = g.leaf(Tensor::from({1, 2}, std::move(c)));
    return g.triplet_ranking(av, bv, cv, m, Distance::Euclidean).value().v[0];
  };
  // positive close, negative far: hinge fully satisfied
  CHECK(eval({0, 0}, {0, 0}, {1, 0}) == 0.0);
  // dist(a,b)=1, dist(a,c)=0.8 -> 0.3 + 1 - 0.8
  CHECK(close(eval({0, 0}, {1, 0}, {0.8, 0}), 0.5));
  // all three coincide -> loss equals the margin
  CHECK(close(eval({0.4, 0.7}, {0.4, 0.7}, {0.4, 0.7}), 0.3));
}

TEST_CASE("triplet matches the naive oracle for both distances") {
  Tensor a = random_tensor({6, 8}, 81);
  Tensor b = random_tensor({6, 8}, 82);
  Tensor c = random_tensor({6, 8}, 83);
  for (Distance d : {Distance::Euclidean, Distance::SquaredEuclidean}) {
    Graph g;
    Var loss = g.triplet_ranking(g.leaf(a), g.leaf(b), g.leaf(c), 0.3, d);
    CHECK(close(loss.value().v[0], triplet_naive_oracle(a, b, c, 0.3, d)));
  }
}

TEST_CASE("triplet coincident points use subgradient zero") {
  Tensor same = Tensor::full({1, 3}, 1.5);
  Graph g;
  Var av = g.leaf(same, true);
  Var bv = g.leaf(same, true);
  Var cv = g.leaf(same, true);
  Var loss = g.triplet_ranking(av, bv, cv, 0.3, Distance::Euclidean);
  g.backward(loss);
  for (double d : av.grad().v) CHECK(d == 0.0);
  for (double d : bv.grad().v) CHECK(d == 0.0);
  for (double d : cv.grad().v) CHECK(d == 0.0);
  CHECK(g.min_kink_margin() == 0.0);  // sqrt kink at zero distance
}

TEST_CASE("inactive triplet rows contribute no gradient") {
  // Row 0 far-negative (inactive), row 1 active with non-collinear points so
  // the anchor gradient does not cancel.
  Tensor a = Tensor::from({2, 2}, {0, 0, 0, 0});
  Tensor b = Tensor::from({2, 2}, {0.1, 0, 0.9, 0});
  Tensor c = Tensor::from({2, 2}, {5, 0, 0, 1.0});
  Graph g;
  Var av = g.leaf(a, true);
  g.backward(g.triplet_ranking(av, g.leaf(b), g.leaf(c), 0.3, Distance::Euclidean));
  Tensor ga = av.grad();
  CHECK(ga.v[0] == 0.0);
  CHECK(ga.v[1] == 0.0);
  CHECK(std::fabs(ga.v[2]) + std::fabs(ga.v[3]) > 0.0);
}

TEST_CASE("triplet gradients pass finite differences") {
  for (Distance dist : {Distance::Euclidean, Distance::SquaredEuclidean}) {
    std::vector<Tensor> params;
    params.push_back(random_tensor({5, 6}, 91));
    params.push_back(random_tensor({5, 6}, 92));
    params.push_back(random_tensor({5, 6}, 93));
    auto build = [dist](Graph& g, std::vector<Var>& L) {
      return g.triplet_ranking(L[0], L[1], L[2], 0.3, dist);
    };
    auto report = fd_check(params, build);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("triplet validates shapes and margin") {
  Graph g;
  Var a = g.leaf(Tensor::zeros({2, 3}));
  Var b = g.leaf(Tensor::zeros({2, 3}));
  Var c = g.leaf(Tensor::zeros({3, 3}));
  CHECK_THROWS_AS(g.triplet_ranking(a, b, c, 0.3, Distance::Euclidean), Error);
  Var c2 = g.leaf(Tensor::zeros({2, 3}));
  CHECK_THROWS_AS(g.triplet_ranking(a, b, c2, 0.0, Distance::Euclidean), Error);
}

// ---------------------------------------------------------------------------

TEST_CASE("fan-out gradients sum: d(x+x)/dx = 2") {
  Graph g;
  Var x = g.leaf(Tensor::scalar(3.0), true);
  Var y = g.add(x, x);
  g.backward(y);
  CHECK(x.grad().v[0] == 2.0);
}

TEST_CASE("scale and sum compose") {
  Graph g;
  Var x = g.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}), true);
  Var y = g.scale(x, 2.5);
  Var total = g.sum(y);
  CHECK(total.value().v[0] == 25.0);
  g.backward(total);
  for (double d : x.grad().v) CHECK(d == 2.5);
}

TEST_CASE("backward requires a scalar loss") {
  Graph g;
  Var x = g.leaf(Tensor::zeros({2, 2}), true);
  Var y = g.relu(x);
  CHECK_THROWS_AS(g.backward(y), Error);
  try {
    g.backward(y);
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::Contract);
  }
}

TEST_CASE("branches outside the loss keep bitwise-untouched gradients") {
  // Shared trunk, two heads; backward through head A only.
  Graph g;
  Var x = g.leaf(random_tensor({2, 3}, 11), true);
  Var wa = g.leaf(random_tensor({3, 2}, 12), true);
  Var wb = g.leaf(random_tensor({3, 2}, 13), true);
  Var bias = g.leaf(Tensor::zeros({2}), true);
  Var head_a = g.fully_connected(x, wa, bias);
  Var head_b = g.fully_connected(x, wb, bias);
  (void)head_b;
  g.backward(g.sum(head_a));

  CHECK(wa.grad_live());
  CHECK(x.grad_live());
  CHECK(!wb.grad_live());
  for (double d : wb.grad().v) CHECK(d == 0.0);
}

TEST_CASE("forward evaluation is deterministic") {
  Tensor x = random_tensor({2, 2, 6, 6}, 1234);
  Tensor w = random_tensor({3, 2, 3, 3}, 1235);
  Tensor b = random_tensor({3}, 1236);
  auto run = [&]() {
    Graph g;
    Var y = g.sum(g.maxpool(g.relu(g.conv2d(g.leaf(x), g.leaf(w), g.leaf(b), 1, 1)), 2, 2));
    return y.value().v[0];
  };
  double first = run();
  for (int i = 0; i < 3; ++i) {
    double again = run();
    CHECK(std::memcmp(&first, &again, sizeof(double)) == 0);
  }
}

// ---------------------------------------------------------------------------

TEST_CASE("finite differences on a quadratic recover the exact derivative") {
  // loss = margin + w^2 via a squared-distance triplet with zero anchor and
  // negative: d/dw = 2w = 6 at w = 3.
  std::vector<Tensor> params;
  params.push_back(Tensor::from({1, 1}, {3.0}));
  auto build = [](Graph& g, std::vector<Var>& L) {
    Var zero_a = g.leaf(Tensor::zeros({1, 1}));
    Var zero_c = g.leaf(Tensor::zeros({1, 1}));
    return g.triplet_ranking(zero_a, L[0], zero_c, 0.3, Distance::SquaredEuclidean);
  };
  std::vector<Tensor> grads;
  LossProbe probe = run_graph(params, build, &grads);
  CHECK(close(probe.loss, 9.3));
  CHECK(grads[0].v[0] == 6.0);
  auto report = fd_check(params, build);
  CHECK(report.coords_checked == 1);
  CHECK(close(report.worst_numeric, 6.0, 1e-6));
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("gradient checker discards probe pairs that straddle a kink") {
  std::vector<Tensor> params;
  // A relu input hugging its kink: the +eps/-eps probes land on opposite
  // sides, so their region signatures disagree on every draw.
  params.push_back(Tensor::scalar(1e-9));
  auto build = [](Graph& g, std::vector<Var>& L) { return g.sum(g.relu(L[0])); };
  std::vector<Tensor> grads;
  run_graph(params, build, &grads);
  std::vector<ParamGrad> pg{{&params[0], &grads[0]}};
  GradCheckOptions opt;
  opt.coords_per_tensor = 4;
  auto report = finite_difference_check(
      [&]() { return run_graph(params, build, nullptr); }, pg, opt);
  CHECK(report.coords_checked == 0);
  CHECK(report.kink_exhausted == 1);  // single scalar coordinate, abandoned
  CHECK(report.kink_resamples >= 1);
}

TEST_CASE("gradient checker validates epsilon") {
  std::vector<Tensor> params;
  params.push_back(Tensor::scalar(1.0));
  std::vector<Tensor> grads{Tensor::scalar(0.0)};
  std::vector<ParamGrad> pg{{&params[0], &grads[0]}};
  GradCheckOptions opt;
  opt.epsilon = 0.5;
  CHECK_THROWS_AS(
      finite_difference_check([]() { return LossProbe{0.0, 1.0}; }, pg, opt), Error);
}

TEST_CASE("gradient check of a small composite network") {
  // conv -> relu -> pool -> flatten -> fc -> concat heads -> losses combined
  std::vector<Tensor> params;
  params.push_back(random_tensor({2, 2, 6, 6}, 301));        // images
  params.push_back(random_tensor({2, 2, 3, 3}, 302, 0.5));   // conv w
  params.push_back(random_tensor({2}, 303, 0.1));            // conv b
  params.push_back(random_tensor({18, 4}, 304, 0.5));        // fc w
  params.push_back(random_tensor({4}, 305, 0.1));            // fc b
  std::vector<int> labels{1, kMissingLabel};
  auto build = [&labels](Graph& g, std::vector<Var>& L) {
    Var conv = g.relu(g.conv2d(L[0], L[1], L[2], 1, 1));
    Var pooled = g.maxpool(conv, 2, 2);
    Var flat = g.flatten(pooled);
    Var logits = g.fully_connected(flat, L[3], L[4]);
    Var ce = g.softmax_cross_entropy(logits, labels);
    Var anchor = g.gather_rows(logits, {0});
    Var pos = g.gather_rows(logits, {1});
    Var neg = g.scale(g.gather_rows(logits, {1}), 0.5);
    Var rank = g.triplet_ranking(anchor, pos, neg, 0.3, Distance::Euclidean);
    return g.add(ce, rank);
  };
  auto report = fd_check(params, build, 9, 6);
  CHECK(report.coords_checked >= 20);
  CHECK(report.max_rel_error < 1e-4);
}
