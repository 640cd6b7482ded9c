#include "darn/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace darn {

std::size_t l2_normalize_segments(Tensor& rows, std::span<const std::size_t> widths) {
  check(rows.ndim() == 2, ErrorCategory::Dimension, "expected feature rows, got ",
        rows.shape_str());
  check(!widths.empty(), ErrorCategory::Dimension, "no feature segments given");
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t(0));
  check(total == rows.dim(1), ErrorCategory::Dimension, "segments cover ", total,
        " columns, rows have ", rows.dim(1));

  std::size_t zero_segments = 0;
  const std::size_t D = rows.dim(1);
  for (std::size_t i = 0; i < rows.dim(0); ++i) {
    double* row = rows.v.data() + i * D;
    std::size_t off = 0;
    for (std::size_t w : widths) {
      double sq = 0.0;
      for (std::size_t j = 0; j < w; ++j) sq += row[off + j] * row[off + j];
      if (sq == 0.0) {
        ++zero_segments;  // left as zeros
      } else {
        const double norm = std::sqrt(sq);
        for (std::size_t j = 0; j < w; ++j) row[off + j] /= norm;
      }
      off += w;
    }
  }
  return zero_segments;
}

// ---------------------------------------------------------------------------
// PCA via cyclic Jacobi eigendecomposition of the covariance.

namespace {

// In-place Jacobi on symmetric a (n x n, row-major); v receives eigenvectors
// as columns.  Classic cyclic sweeps; plenty for desk-scale dimensions.
void jacobi_eigen(std::vector<double>& a, std::size_t n, std::vector<double>& v) {
  v.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::fabs(a[i * n + i]));
  scale = std::max(scale, 1e-300);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off <= 1e-30 * scale * scale) return;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::fabs(apq) <= 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
}

}  // namespace

PcaModel fit_pca(const Tensor& rows, std::size_t dims) {
  check(rows.ndim() == 2, ErrorCategory::Dimension, "PCA wants a data matrix, got ",
        rows.shape_str());
  const std::size_t N = rows.dim(0), D = rows.dim(1);
  check(N >= 2, ErrorCategory::Config, "PCA needs at least 2 rows, got ", N);
  const std::size_t cap = std::min(N - 1, D);
  check(dims >= 1 && dims <= cap, ErrorCategory::Config, "PCA dimension ", dims,
        " outside [1,", cap, "] for a ", N, "x", D, " matrix");

  PcaModel model;
  model.mean = Tensor::zeros({D});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < D; ++j) model.mean.v[j] += rows.v[i * D + j];
  for (double& m : model.mean.v) m /= double(N);

  // population covariance of the centered rows
  std::vector<double> cov(D * D, 0.0);
  std::vector<double> cx(D);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < D; ++j) cx[j] = rows.v[i * D + j] - model.mean.v[j];
    for (std::size_t p = 0; p < D; ++p)
      for (std::size_t q = p; q < D; ++q) cov[p * D + q] += cx[p] * cx[q];
  }
  for (std::size_t p = 0; p < D; ++p)
    for (std::size_t q = p; q < D; ++q) {
      cov[p * D + q] /= double(N);
      cov[q * D + p] = cov[p * D + q];
    }

  std::vector<double> vecs;
  jacobi_eigen(cov, D, vecs);

  std::vector<std::size_t> order(D);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return cov[x * D + x] > cov[y * D + y];
  });

  model.basis = Tensor::zeros({D, dims});
  model.variances = Tensor::zeros({dims});
  for (std::size_t k = 0; k < dims; ++k) {
    const std::size_t src = order[k];
    model.variances.v[k] = std::max(cov[src * D + src], 0.0);
    std::size_t peak = 0;
    for (std::size_t j = 1; j < D; ++j)
      if (std::fabs(vecs[j * D + src]) > std::fabs(vecs[peak * D + src])) peak = j;
    const double flip = vecs[peak * D + src] < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < D; ++j) model.basis.v[j * dims + k] = flip * vecs[j * D + src];
  }
  return model;
}

Tensor PcaModel::project(const Tensor& rows) const {
  check(rows.ndim() == 2 && rows.dim(1) == in_dim(), ErrorCategory::Dimension,
        "cannot project ", rows.shape_str(), " rows with a ", in_dim(), "-dim PCA model");
  const std::size_t N = rows.dim(0), D = in_dim(), d = out_dim();
  Tensor out = Tensor::zeros({N, d});
  std::vector<double> cx(D);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < D; ++j) cx[j] = rows.v[i * D + j] - mean.v[j];
    for (std::size_t j = 0; j < D; ++j) {
      const double x = cx[j];
      if (x == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) out.v[i * d + k] += x * basis.v[j * d + k];
    }
  }
  return out;
}

void save_pca(const std::filesystem::path& path, const PcaModel& model) {
  NamedTensors nt;
  nt.add("mean", model.mean);
  nt.add("basis", model.basis);
  nt.add("variances", model.variances);
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorCategory::Io, "cannot write ", path.string());
  write_named_tensors(out, nt);
  check(out.good(), ErrorCategory::Io, "short write to ", path.string());
}

PcaModel load_pca(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorCategory::Io, "cannot open ", path.string());
  NamedTensors nt = read_named_tensors(in);
  PcaModel model;
  for (const char* name : {"mean", "basis", "variances"})
    check(nt.find(name) != nullptr, ErrorCategory::Validation, path.string(),
          ": PCA model lacks tensor '", name, "'");
  model.mean = *nt.find("mean");
  model.basis = *nt.find("basis");
  model.variances = *nt.find("variances");
  check(model.mean.ndim() == 1 && model.basis.ndim() == 2 && model.variances.ndim() == 1 &&
            model.basis.dim(0) == model.mean.dim(0) &&
            model.basis.dim(1) == model.variances.dim(0),
        ErrorCategory::Validation, path.string(), ": inconsistent PCA tensor shapes");
  return model;
}

// ---------------------------------------------------------------------------

void save_feature_set(const std::filesystem::path& base, const FeatureSet& fs) {
  check(fs.rows.ndim() == 2 && fs.rows.dim(0) == fs.ids.size(), ErrorCategory::Validation,
        "feature rows ", fs.rows.shape_str(), " do not line up with ", fs.ids.size(), " ids");
  std::filesystem::path tnsr = base;
  tnsr += ".tnsr";
  std::filesystem::path idsp = base;
  idsp += ".ids";
  save_tnsr(tnsr, fs.rows);
  std::ofstream out(idsp, std::ios::binary);
  check(out.good(), ErrorCategory::Io, "cannot write ", idsp.string());
  for (const std::string& id : fs.ids) {
    check(!id.empty() && id.find('\n') == std::string::npos, ErrorCategory::Validation,
          "feature id '", id, "' cannot be stored one-per-line");
    out << id << "\n";
  }
  check(out.good(), ErrorCategory::Io, "short write to ", idsp.string());
}

FeatureSet load_feature_set(const std::filesystem::path& base) {
  std::filesystem::path tnsr = base;
  tnsr += ".tnsr";
  std::filesystem::path idsp = base;
  idsp += ".ids";
  FeatureSet fs;
  fs.rows = load_tnsr(tnsr);
  check(fs.rows.ndim() == 2, ErrorCategory::Validation, tnsr.string(),
        ": feature file must hold a matrix, got ", fs.rows.shape_str());
  std::ifstream in(idsp, std::ios::binary);
  check(in.good(), ErrorCategory::Io, "cannot open ", idsp.string());
  std::string line;
  while (std::getline(in, line)) {
    check(!line.empty(), ErrorCategory::Validation, idsp.string(), ": blank id line");
    fs.ids.push_back(line);
  }
  check(fs.ids.size() == fs.rows.dim(0), ErrorCategory::Validation, idsp.string(), ": ",
        fs.ids.size(), " ids for ", fs.rows.dim(0), " feature rows");
  return fs;
}

FeatureSet extract_features(const DualNetwork& net, const std::vector<BatchEntry>& samples,
                            const FeatureSpec& spec, const PcaModel* pca,
                            std::size_t chunk_rows) {
  spec.validate();
  check(!samples.empty(), ErrorCategory::Contract, "no samples to extract from");
  check(chunk_rows >= 1, ErrorCategory::Config, "chunk size must be positive");
  const std::vector<std::size_t> widths = spec.segment_widths(net.config());
  const std::size_t D = std::accumulate(widths.begin(), widths.end(), std::size_t(0));

  FeatureSet out;
  out.rows = Tensor::zeros({samples.size(), D});
  for (const BatchEntry& s : samples) out.ids.push_back(s.id);

  for (std::size_t begin = 0; begin < samples.size(); begin += chunk_rows) {
    const std::size_t end = std::min(begin + chunk_rows, samples.size());
    std::vector<BatchEntry> chunk(samples.begin() + std::ptrdiff_t(begin),
                                  samples.begin() + std::ptrdiff_t(end));
    Graph g;
    NetworkBinding binding = bind_network(g, net, false);
    RoutedBatch routed = forward_batch(g, net, binding, chunk);
    for (const RoutedPart& part : routed.parts) {
      const Tensor& feat = ranking_feature(g, part.out, spec).value();
      for (std::size_t r = 0; r < part.positions.size(); ++r) {
        const std::size_t dst = begin + part.positions[r];
        std::copy_n(feat.v.data() + r * D, D, out.rows.v.data() + dst * D);
      }
    }
  }

  l2_normalize_segments(out.rows, widths);
  if (pca) {
    check(pca->in_dim() == D, ErrorCategory::Config, "PCA model expects ", pca->in_dim(),
          "-dim features, extractor produced ", D);
    out.rows = pca->project(out.rows);
  }
  return out;
}

std::vector<BatchEntry> online_samples(const Dataset& ds) {
  std::vector<BatchEntry> out;
  out.reserve(ds.items.size());
  for (const TrainExample& ex : ds.items)
    out.push_back({ex.item_id, Domain::Online, ex.online, ex.labels});
  return out;
}

std::vector<BatchEntry> offline_samples(const Dataset& ds) {
  std::vector<BatchEntry> out;
  for (const TrainExample& ex : ds.items)
    for (std::size_t k = 0; k < ex.offlines.size(); ++k)
      out.push_back({ex.item_id + "#" + std::to_string(k), Domain::Offline, ex.offlines[k],
                     ex.labels});
  return out;
}

std::string offline_query_item(const std::string& query_id) {
  return query_id.substr(0, query_id.find('#'));
}

}  // namespace darn
