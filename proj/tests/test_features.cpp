#include "darn/features.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "darn/rng.hpp"
#include "doctest.h"

using namespace darn;
namespace fs = std::filesystem;

namespace {

// Independent eigensolver: power iteration with Gram-Schmidt deflation on
// the population covariance.  Only used as an oracle.
struct EigenPair {
  double value;
  std::vector<double> vec;
};

std::vector<EigenPair> power_eigen(const std::vector<double>& cov, std::size_t n,
                                   std::size_t count) {
  std::vector<EigenPair> found;
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> v(n, 0.0);
    v[k % n] = 1.0;
    v[(k + 1) % n] = 0.5;
    for (int iter = 0; iter < 200000; ++iter) {
      // deflate
      for (const EigenPair& e : found) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += v[i] * e.vec[i];
        for (std::size_t i = 0; i < n; ++i) v[i] -= dot * e.vec[i];
      }
      std::vector<double> w(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w[i] += cov[i * n + j] * v[j];
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-200) {  // null space: keep the deflated direction itself
        double vn = 0.0;
        for (double x : v) vn += x * x;
        vn = std::sqrt(vn);
        for (double& x : v) x /= vn;
        break;
      }
      double delta = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double next = w[i] / norm;
        delta = std::max(delta, std::fabs(next - v[i]));
        v[i] = next;
      }
      if (delta < 1e-15 && iter > 10) break;
    }
    double lambda = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) row += cov[i * n + j] * v[j];
      lambda += v[i] * row;
    }
    found.push_back({lambda, v});
  }
  return found;
}

std::vector<double> covariance_of(const Tensor& rows) {
  const std::size_t N = rows.dim(0), D = rows.dim(1);
  std::vector<double> mean(D, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < D; ++j) mean[j] += rows.v[i * D + j];
  for (double& m : mean) m /= double(N);
  std::vector<double> cov(D * D, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t p = 0; p < D; ++p)
      for (std::size_t q = 0; q < D; ++q)
        cov[p * D + q] += (rows.v[i * D + p] - mean[p]) * (rows.v[i * D + q] - mean[q]);
  for (double& c : cov) c /= double(N);
  return cov;
}

double frob_delta(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("segment normalization") {
  Tensor rows = Tensor::from({2, 5}, {3, 4, 1, 2, 2,  // two segments: [3,4] and [1,2,2]
                                      0, 0, 0, 3, 0});
  const std::vector<std::size_t> widths{2, 3};
  std::size_t zeros = l2_normalize_segments(rows, widths);
  CHECK(zeros == 1);  // row 1's first segment
  CHECK(rows.v[0] == 0.6);
  CHECK(rows.v[1] == 0.8);
  CHECK(rows.v[2] == doctest::Approx(1.0 / 3.0));
  CHECK(rows.v[5] == 0.0);
  CHECK(rows.v[6] == 0.0);
  CHECK(rows.v[8] == 1.0);

  double norm_b = 0.0, whole = 0.0;
  for (int j = 2; j < 5; ++j) norm_b += rows.v[j] * rows.v[j];
  for (int j = 0; j < 5; ++j) whole += rows.v[j] * rows.v[j];
  CHECK(norm_b == doctest::Approx(1.0));
  CHECK(whole == doctest::Approx(2.0));  // two unit segments

  const std::vector<std::size_t> bad{2, 2};
  CHECK_THROWS_AS(l2_normalize_segments(rows, bad), Error);
}

TEST_CASE("pca on collinear points finds the line") {
  Tensor rows = Tensor::from({4, 2}, {0, 0, 1, 2, 2, 4, 3, 6});  // y = 2x
  PcaModel m = fit_pca(rows, 2);
  const double inv = 1.0 / std::sqrt(5.0);
  CHECK(m.basis.v[0 * 2 + 0] == doctest::Approx(inv).epsilon(1e-10));
  CHECK(m.basis.v[1 * 2 + 0] == doctest::Approx(2.0 * inv).epsilon(1e-10));
  CHECK(m.variances.v[1] == doctest::Approx(0.0));
  CHECK(m.variances.v[0] >= m.variances.v[1]);
}

TEST_CASE("pca of constant data maps everything to zero") {
  Tensor rows = Tensor::full({5, 3}, 7.5);
  PcaModel m = fit_pca(rows, 2);
  for (double v : m.variances.v) CHECK(v == 0.0);
  Tensor proj = m.project(rows);
  for (double v : proj.v) CHECK(v == doctest::Approx(0.0));
  // columns still orthonormal
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < 3; ++j) dot += m.basis.v[j * 2 + a] * m.basis.v[j * 2 + b];
      CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-10));
    }
}

TEST_CASE("pca matches the power-iteration oracle") {
  Rng rng(40);
  Tensor rows({20, 6});
  for (double& v : rows.v) v = rng.normal() + 0.3;
  PcaModel m = fit_pca(rows, 6);

  // orthonormal columns
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = 0; b < 6; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < 6; ++j) dot += m.basis.v[j * 6 + a] * m.basis.v[j * 6 + b];
      CHECK(std::fabs(dot - (a == b ? 1.0 : 0.0)) < 1e-8);
    }

  // non-increasing variances summing to the covariance trace
  std::vector<double> cov = covariance_of(rows);
  double trace = 0.0;
  for (std::size_t j = 0; j < 6; ++j) trace += cov[j * 6 + j];
  double total = 0.0;
  for (std::size_t k = 0; k < 6; ++k) {
    if (k) CHECK(m.variances.v[k] <= m.variances.v[k - 1] + 1e-12);
    total += m.variances.v[k];
  }
  CHECK(std::fabs(total - trace) < 1e-8);

  // eigenpairs agree with the oracle up to column sign
  std::vector<EigenPair> oracle = power_eigen(cov, 6, 6);
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(std::fabs(m.variances.v[k] - oracle[k].value) < 1e-8);
    double dot = 0.0;
    for (std::size_t j = 0; j < 6; ++j) dot += m.basis.v[j * 6 + k] * oracle[k].vec[j];
    CHECK(std::fabs(std::fabs(dot) - 1.0) < 1e-7);
  }

  // projections agree up to per-column sign
  Tensor mine = m.project(rows);
  for (std::size_t k = 0; k < 6; ++k) {
    double sign = 0.0;
    for (std::size_t i = 0; i < 20 && sign == 0.0; ++i) {
      double orc = 0.0;
      for (std::size_t j = 0; j < 6; ++j)
        orc += (rows.v[i * 6 + j] - m.mean.v[j]) * oracle[k].vec[j];
      if (std::fabs(orc) > 1e-9) sign = mine.v[i * 6 + k] / orc > 0 ? 1.0 : -1.0;
    }
    if (sign == 0.0) continue;  // zero column both ways
    for (std::size_t i = 0; i < 20; ++i) {
      double orc = 0.0;
      for (std::size_t j = 0; j < 6; ++j)
        orc += (rows.v[i * 6 + j] - m.mean.v[j]) * oracle[k].vec[j];
      CHECK(std::fabs(mine.v[i * 6 + k] - sign * orc) < 1e-7);
    }
  }
}

TEST_CASE("full-rank projection preserves pairwise distances") {
  Rng rng(41);
  Tensor rows({12, 5});
  for (double& v : rows.v) v = 2.0 * rng.uniform() - 1.0;
  PcaModel m = fit_pca(rows, 5);
  Tensor proj = m.project(rows);
  for (std::size_t a = 0; a < 12; ++a)
    for (std::size_t b = a + 1; b < 12; ++b) {
      double da = 0.0, db = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        const double d0 = rows.v[a * 5 + j] - rows.v[b * 5 + j];
        const double d1 = proj.v[a * 5 + j] - proj.v[b * 5 + j];
        da += d0 * d0;
        db += d1 * d1;
      }
      CHECK(std::fabs(std::sqrt(da) - std::sqrt(db)) < 1e-8);
    }
}

TEST_CASE("pca guards and sign rule") {
  Rng rng(42);
  Tensor rows({6, 4});
  for (double& v : rows.v) v = rng.normal();
  CHECK_THROWS_AS(fit_pca(rows, 0), Error);
  CHECK_THROWS_AS(fit_pca(rows, 5), Error);  // > min(N-1, D) = 4
  Tensor thin({3, 8});
  for (double& v : thin.v) v = rng.normal();
  CHECK_THROWS_AS(fit_pca(thin, 3), Error);  // > N-1 = 2

  // dominant direction (-1, 3): the sign rule turns the big coordinate positive
  Tensor line({10, 2});
  for (std::size_t i = 0; i < 10; ++i) {
    const double t = double(i) - 4.5;
    line.v[i * 2 + 0] = -t;
    line.v[i * 2 + 1] = 3.0 * t;
  }
  PcaModel m = fit_pca(line, 1);
  CHECK(m.basis.v[1] > 0.0);
  CHECK(m.basis.v[0] == doctest::Approx(-1.0 / std::sqrt(10.0)).epsilon(1e-10));

  PcaModel mm = fit_pca(line, 1);
  CHECK(mm.basis.v == m.basis.v);  // refitting is bitwise stable

  Tensor wrong({3, 3});
  CHECK_THROWS_AS(m.project(wrong), Error);
  // projecting the mean itself gives zeros
  Tensor mean_row({1, 2});
  mean_row.v = {m.mean.v[0], m.mean.v[1]};
  Tensor z = m.project(mean_row);
  CHECK(z.v[0] == 0.0);
}

TEST_CASE("pca model file round trip") {
  Rng rng(43);
  Tensor rows({9, 4});
  for (double& v : rows.v) v = rng.normal();
  PcaModel m = fit_pca(rows, 3);
  fs::path p = fs::temp_directory_path() / "darn_pca_model.tnsr";
  save_pca(p, m);
  PcaModel back = load_pca(p);
  CHECK(back.mean.v == m.mean.v);
  CHECK(back.basis.v == m.basis.v);
  CHECK(back.variances.v == m.variances.v);

  // a model file missing a tensor is rejected
  NamedTensors nt;
  nt.add("mean", m.mean);
  nt.add("basis", m.basis);
  {
    std::ofstream out(p, std::ios::binary);
    write_named_tensors(out, nt);
  }
  CHECK_THROWS_AS(load_pca(p), Error);
  fs::remove(p);
}

TEST_CASE("feature set files") {
  FeatureSet fsend;
  fsend.ids = {"a", "b#0", "c"};
  fsend.rows = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  fs::path base = fs::temp_directory_path() / "darn_feats";
  save_feature_set(base, fsend);
  FeatureSet back = load_feature_set(base);
  CHECK(back.ids == fsend.ids);
  CHECK(back.rows.v == fsend.rows.v);

  FeatureSet bad = fsend;
  bad.ids.pop_back();
  CHECK_THROWS_AS(save_feature_set(base, bad), Error);
  FeatureSet evil = fsend;
  evil.ids[0] = "two\nlines";
  CHECK_THROWS_AS(save_feature_set(base, evil), Error);
  fs::remove(fs::path(base) += ".tnsr");
  fs::remove(fs::path(base) += ".ids");
}

namespace {

struct NetFixture {
  SubNetworkConfig cfg;
  AttributeSchema schema{{{"color", 3}}};
  DualNetwork net;

  NetFixture() : net(make()) {}
  DualNetwork make() {
    cfg.image_h = cfg.image_w = 8;
    cfg.stages = {{4, 3, 1, 1, 1, 2, 2}, {4, 3, 1, 1, 1, 0, 0}};
    cfg.fc1 = 6;
    cfg.fc2 = 6;
    cfg.head_hidden = 4;
    return DualNetwork(NetworkKind::Dual, cfg, schema, 17);
  }

  std::vector<BatchEntry> samples(std::size_t n) const {
    Rng rng(5 + n);
    std::vector<BatchEntry> out;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor img({3, 8, 8});
      for (double& v : img.v) v = rng.uniform();
      out.push_back({"s" + std::to_string(i), i % 2 ? Domain::Offline : Domain::Online,
                     std::move(img), {}});
    }
    return out;
  }
};

}  // namespace

TEST_CASE("extraction is deterministic and chunk-invariant") {
  NetFixture fx;
  auto samples = fx.samples(7);
  FeatureSpec spec = FeatureSpec::parse("fc1+c4+c5");
  FeatureSet a = extract_features(fx.net, samples, spec);
  FeatureSet b = extract_features(fx.net, samples, spec);
  CHECK(a.rows.v == b.rows.v);
  CHECK(a.ids.size() == 7);
  CHECK(a.rows.dim(1) == 6 + 36 + 36);

  FeatureSet tiny_chunks = extract_features(fx.net, samples, spec, nullptr, 2);
  CHECK(tiny_chunks.rows.v == a.rows.v);  // batching cannot change values

  // every layer segment has unit norm (or is flagged zero)
  const std::vector<std::size_t> widths = spec.segment_widths(fx.cfg);
  for (std::size_t i = 0; i < a.rows.dim(0); ++i) {
    std::size_t off = 0;
    for (std::size_t w : widths) {
      double sq = 0.0;
      for (std::size_t j = 0; j < w; ++j)
        sq += a.rows.v[i * a.rows.dim(1) + off + j] * a.rows.v[i * a.rows.dim(1) + off + j];
      if (sq != 0.0) CHECK(sq == doctest::Approx(1.0).epsilon(1e-10));
      off += w;
    }
  }
}

TEST_CASE("extraction routes each domain through its own tower") {
  NetFixture fx;
  auto samples = fx.samples(5);
  FeatureSpec spec = FeatureSpec::parse("fc1");
  FeatureSet mixed = extract_features(fx.net, samples, spec);

  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<BatchEntry> solo{samples[i]};
    FeatureSet one = extract_features(fx.net, solo, spec);
    for (std::size_t j = 0; j < mixed.rows.dim(1); ++j)
      CHECK(one.rows.v[j] == mixed.rows.v[i * mixed.rows.dim(1) + j]);
  }
}

TEST_CASE("extraction with a pca model reduces the width") {
  NetFixture fx;
  auto samples = fx.samples(9);
  FeatureSpec spec = FeatureSpec::parse("fc1+c5");
  FeatureSet raw = extract_features(fx.net, samples, spec);
  PcaModel pca = fit_pca(raw.rows, 4);
  FeatureSet red = extract_features(fx.net, samples, spec, &pca);
  CHECK(red.rows.shape == std::vector<std::size_t>{9, 4});
  Tensor expect = pca.project(raw.rows);
  CHECK(red.rows.v == expect.v);

  PcaModel mismatched = fit_pca(Tensor::full({5, 3}, 1.5), 1);
  CHECK_THROWS_AS(extract_features(fx.net, samples, spec, &mismatched), Error);
}

TEST_CASE("dataset sample lists carry domains and view ids") {
  Dataset ds;
  ds.schema = AttributeSchema{{{"c", 2}}};
  for (int i = 0; i < 2; ++i) {
    TrainExample ex;
    ex.item_id = "item-" + std::to_string(i);
    ex.labels = {i};
    ex.online = Tensor::full({3, 4, 4}, 0.5);
    ex.offlines = {Tensor::full({3, 4, 4}, 0.25), Tensor::full({3, 4, 4}, 0.75)};
    ds.items.push_back(std::move(ex));
  }
  auto on = online_samples(ds);
  auto off = offline_samples(ds);
  CHECK(on.size() == 2);
  CHECK(off.size() == 4);
  CHECK(on[0].id == "item-0");
  CHECK(on[0].domain == Domain::Online);
  CHECK(off[1].id == "item-0#1");
  CHECK(off[2].id == "item-1#0");
  CHECK(off[0].domain == Domain::Offline);
  CHECK(offline_query_item("item-1#0") == "item-1");
  CHECK(offline_query_item("plain") == "plain");
}
