#include "darn/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "darn/rng.hpp"

namespace darn {

Var Graph::make(Tensor value, std::vector<ad::Node*> inputs) {
  auto n = std::make_unique<ad::Node>();
  n->value = std::move(value);
  for (ad::Node* in : inputs)
    if (in->requires_grad) n->requires_grad = true;
  ad::Node* raw = n.get();
  nodes_.push_back(std::move(n));
  return Var(raw);
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  Var v = make(std::move(value), {});
  v.n_->requires_grad = requires_grad;
  return v;
}

void Graph::note_region(std::uint64_t bits) { region_sig_ = Rng::mix(region_sig_, bits); }

// ---------------------------------------------------------------------------

Var Graph::conv2d(Var input, Var weight, Var bias, int stride, int pad) {
  ad::Node* in = node(input);
  ad::Node* wn = node(weight);
  ad::Node* bn = node(bias);
  const Tensor& x = in->value;
  const Tensor& w = wn->value;
  const Tensor& b = bn->value;

  check(x.ndim() == 4, ErrorCategory::Dimension, "conv2d input must be [N,C,H,W], got ",
        x.shape_str());
  check(w.ndim() == 4, ErrorCategory::Dimension, "conv2d weight must be [F,C,kh,kw], got ",
        w.shape_str());
  check(stride >= 1, ErrorCategory::Dimension, "conv2d stride must be >= 1, got ", stride);
  check(pad >= 0, ErrorCategory::Dimension, "conv2d pad must be >= 0, got ", pad);

  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check(w.dim(1) == C, ErrorCategory::Dimension, "conv2d channel mismatch: input axis 1 = ", C,
        ", weight axis 1 = ", w.dim(1));
  check(b.ndim() == 1 && b.dim(0) == F, ErrorCategory::Dimension,
        "conv2d bias must be [", F, "], got ", b.shape_str());
  check(kh <= H + 2 * std::size_t(pad) && kw <= W + 2 * std::size_t(pad),
        ErrorCategory::Dimension, "conv2d kernel ", kh, "x", kw,
        " exceeds padded input ", H + 2 * pad, "x", W + 2 * pad);

  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;

  Tensor out({N, F, Ho, Wo});
  const double* xd = x.v.data();
  const double* wd = w.v.data();
  double* od = out.v.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t f = 0; f < F; ++f) {
      double* op = od + (n * F + f) * Ho * Wo;
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = b.v[f];
          const long y0 = long(oy) * stride - pad;
          const long x0 = long(ox) * stride - pad;
          for (std::size_t c = 0; c < C; ++c) {
            const double* xp = xd + (n * C + c) * H * W;
            const double* wp = wd + (f * C + c) * kh * kw;
            for (std::size_t i = 0; i < kh; ++i) {
              const long iy = y0 + long(i);
              if (iy < 0 || iy >= long(H)) continue;
              const double* xrow = xp + std::size_t(iy) * W;
              const double* wrow = wp + i * kw;
              for (std::size_t j = 0; j < kw; ++j) {
                const long ix = x0 + long(j);
                if (ix < 0 || ix >= long(W)) continue;
                acc += xrow[std::size_t(ix)] * wrow[j];
              }
            }
          }
          op[oy * Wo + ox] = acc;
        }
      }
    }
  }

  Var result = make(std::move(out), {in, wn, bn});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [in, wn, bn, outn, N, C, H, W, F, kh, kw, Ho, Wo, stride, pad]() {
      const double* g = outn->grad.v.data();
      const double* xd = in->value.v.data();
      const double* wd = wn->value.v.data();
      const bool need_x = in->requires_grad;
      const bool need_w = wn->requires_grad;
      const bool need_b = bn->requires_grad;
      double* gx = need_x ? in->grad_data() : nullptr;
      double* gw = need_w ? wn->grad_data() : nullptr;
      double* gb = need_b ? bn->grad_data() : nullptr;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t f = 0; f < F; ++f) {
          const double* gp = g + (n * F + f) * Ho * Wo;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const double go = gp[oy * Wo + ox];
              if (go == 0.0) continue;
              if (need_b) gb[f] += go;
              if (!need_x && !need_w) continue;
              const long y0 = long(oy) * stride - pad;
              const long x0 = long(ox) * stride - pad;
              for (std::size_t c = 0; c < C; ++c) {
                const std::size_t xoff = (n * C + c) * H * W;
                const std::size_t woff = (f * C + c) * kh * kw;
                for (std::size_t i = 0; i < kh; ++i) {
                  const long iy = y0 + long(i);
                  if (iy < 0 || iy >= long(H)) continue;
                  const std::size_t xrow = xoff + std::size_t(iy) * W;
                  const std::size_t wrow = woff + i * kw;
                  for (std::size_t j = 0; j < kw; ++j) {
                    const long ix = x0 + long(j);
                    if (ix < 0 || ix >= long(W)) continue;
                    if (need_w) gw[wrow + j] += go * xd[xrow + std::size_t(ix)];
                    if (need_x) gx[xrow + std::size_t(ix)] += go * wd[wrow + j];
                  }
                }
              }
            }
          }
        }
      }
    };
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace detail {

// Shared pooling kernel: arbitrary per-axis bin boundaries.
struct PoolPlan {
  std::size_t Ho, Wo;
  // per output cell: y0,y1,x0,x1 half-open ranges
  std::vector<std::array<std::size_t, 4>> cells;
};

}  // namespace detail

namespace {
using detail::PoolPlan;

PoolPlan window_plan(std::size_t H, std::size_t W, std::size_t window, std::size_t stride) {
  PoolPlan p;
  p.Ho = (H - window) / stride + 1;
  p.Wo = (W - window) / stride + 1;
  p.cells.reserve(p.Ho * p.Wo);
  for (std::size_t oy = 0; oy < p.Ho; ++oy)
    for (std::size_t ox = 0; ox < p.Wo; ++ox)
      p.cells.push_back({oy * stride, oy * stride + window, ox * stride, ox * stride + window});
  return p;
}

PoolPlan adaptive_plan(std::size_t H, std::size_t W) {
  PoolPlan p;
  p.Ho = 3;
  p.Wo = 3;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      p.cells.push_back({i * H / 3, (i + 1) * H / 3, j * W / 3, (j + 1) * W / 3});
  return p;
}

}  // namespace

Var Graph::maxpool(Var input, int window, int stride) {
  const Tensor& x = node(input)->value;
  check(x.ndim() == 4, ErrorCategory::Dimension, "maxpool input must be [N,C,H,W], got ",
        x.shape_str());
  check(window >= 1 && stride >= 1, ErrorCategory::Dimension,
        "maxpool window and stride must be >= 1");
  const std::size_t H = x.dim(2), W = x.dim(3);
  check(std::size_t(window) <= H && std::size_t(window) <= W, ErrorCategory::Dimension,
        "maxpool window ", window, " exceeds spatial extent ", H, "x", W);
  return pool_impl_(input, window_plan(H, W, window, stride));
}

Var Graph::adaptive_maxpool_3x3(Var input) {
  const Tensor& x = node(input)->value;
  check(x.ndim() == 4, ErrorCategory::Dimension,
        "adaptive_maxpool_3x3 input must be [N,C,H,W], got ", x.shape_str());
  const std::size_t H = x.dim(2), W = x.dim(3);
  check(H >= 3 && W >= 3, ErrorCategory::Dimension,
        "adaptive_maxpool_3x3 needs H,W >= 3, got ", H, "x", W);
  return pool_impl_(input, adaptive_plan(H, W));
}

Var Graph::pool_impl_(Var input, const detail::PoolPlan& plan) {
  ad::Node* in = node(input);
  const Tensor& x = in->value;
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = plan.Ho, Wo = plan.Wo;

  Tensor out({N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.numel());
  const double* xd = x.v.data();
  double worst_margin = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t plane = (n * C + c) * H * W;
      double* op = out.v.data() + (n * C + c) * Ho * Wo;
      std::size_t* ap = argmax.data() + (n * C + c) * Ho * Wo;
      for (std::size_t cell = 0; cell < plan.cells.size(); ++cell) {
        const auto [y0, y1, x0, x1] = plan.cells[cell];
        double best = -std::numeric_limits<double>::infinity();
        double second = -std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t y = y0; y < y1; ++y) {
          for (std::size_t xx = x0; xx < x1; ++xx) {
            const double val = xd[plane + y * W + xx];
            if (val > best) {
              second = best;
              best = val;
              arg = plane + y * W + xx;
            } else if (val > second) {
              second = val;
            }
          }
        }
        op[cell] = best;
        ap[cell] = arg;
        note_region(arg);
        if ((y1 - y0) * (x1 - x0) > 1) worst_margin = std::min(worst_margin, best - second);
      }
    }
  }
  note_margin(worst_margin);

  Var result = make(std::move(out), {in});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [in, outn, args = std::move(argmax)]() {
      double* gx = in->grad_data();
      const double* g = outn->grad.v.data();
      for (std::size_t k = 0; k < args.size(); ++k) gx[args[k]] += g[k];
    };
  }
  return result;
}

// ---------------------------------------------------------------------------

Var Graph::fully_connected(Var input, Var weight, Var bias) {
  ad::Node* in = node(input);
  ad::Node* wn = node(weight);
  ad::Node* bn = node(bias);
  const Tensor& x = in->value;
  const Tensor& w = wn->value;
  const Tensor& b = bn->value;
  check(x.ndim() == 2, ErrorCategory::Dimension, "fully_connected input must be [N,D], got ",
        x.shape_str());
  check(w.ndim() == 2, ErrorCategory::Dimension, "fully_connected weight must be [D,M], got ",
        w.shape_str());
  const std::size_t N = x.dim(0), D = x.dim(1), M = w.dim(1);
  check(w.dim(0) == D, ErrorCategory::Dimension, "fully_connected inner dims disagree: input ",
        x.shape_str(), " vs weight ", w.shape_str());
  check(b.ndim() == 1 && b.dim(0) == M, ErrorCategory::Dimension,
        "fully_connected bias must be [", M, "], got ", b.shape_str());

  Tensor out({N, M});
  for (std::size_t n = 0; n < N; ++n) {
    double* orow = out.v.data() + n * M;
    std::copy(b.v.begin(), b.v.end(), orow);
    const double* xrow = x.v.data() + n * D;
    for (std::size_t d = 0; d < D; ++d) {
      const double a = xrow[d];
      if (a == 0.0) continue;
      const double* wrow = w.v.data() + d * M;
      for (std::size_t m = 0; m < M; ++m) orow[m] += a * wrow[m];
    }
  }

  Var result = make(std::move(out), {in, wn, bn});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [in, wn, bn, outn, N, D, M]() {
      const double* g = outn->grad.v.data();
      const double* xd = in->value.v.data();
      const double* wd = wn->value.v.data();
      if (in->requires_grad) {
        double* gx = in->grad_data();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t d = 0; d < D; ++d) {
            const double* wrow = wd + d * M;
            const double* grow = g + n * M;
            double acc = 0.0;
            for (std::size_t m = 0; m < M; ++m) acc += grow[m] * wrow[m];
            gx[n * D + d] += acc;
          }
      }
      if (wn->requires_grad) {
        double* gw = wn->grad_data();
        for (std::size_t n = 0; n < N; ++n) {
          const double* xrow = xd + n * D;
          const double* grow = g + n * M;
          for (std::size_t d = 0; d < D; ++d) {
            const double a = xrow[d];
            if (a == 0.0) continue;
            double* gwrow = gw + d * M;
            for (std::size_t m = 0; m < M; ++m) gwrow[m] += a * grow[m];
          }
        }
      }
      if (bn->requires_grad) {
        double* gb = bn->grad_data();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t m = 0; m < M; ++m) gb[m] += g[n * M + m];
      }
    };
  }
  return result;
}

Var Graph::relu(Var x) {
  ad::Node* in = node(x);
  Tensor out = in->value;
  double margin = std::numeric_limits<double>::infinity();
  std::uint64_t word = 0;
  unsigned packed = 0;
  for (double& d : out.v) {
    margin = std::min(margin, std::fabs(d));
    word = (word << 1) | std::uint64_t(d > 0.0);
    if (++packed == 64) {
      note_region(word);
      word = 0;
      packed = 0;
    }
    if (d < 0.0) d = 0.0;
  }
  if (packed) note_region(Rng::mix(word, packed));
  note_margin(margin);
  Var result = make(std::move(out), {in});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [in, outn]() {
      double* gx = in->grad_data();
      const double* g = outn->grad.v.data();
      const double* xd = in->value.v.data();
      for (std::size_t i = 0; i < in->value.numel(); ++i)
        if (xd[i] > 0.0) gx[i] += g[i];
    };
  }
  return result;
}

Var Graph::flatten(Var x) {
  ad::Node* in = node(x);
  const Tensor& t = in->value;
  check(t.ndim() >= 1, ErrorCategory::Dimension, "flatten of empty tensor");
  const std::size_t N = t.dim(0);
  Tensor out = Tensor::from({N, t.numel() / N}, t.v);
  Var result = make(std::move(out), {in});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [in, outn]() {
      double* gx = in->grad_data();
      const double* g = outn->grad.v.data();
      for (std::size_t i = 0; i < in->value.numel(); ++i) gx[i] += g[i];
    };
  }
  return result;
}

Var Graph::concat(const std::vector<Var>& xs) {
  check(!xs.empty(), ErrorCategory::Dimension, "concat of zero tensors");
  if (xs.size() == 1) return xs[0];
  std::vector<ad::Node*> ins;
  std::size_t N = 0, total = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ad::Node* n = node(xs[i]);
    const Tensor& t = n->value;
    check(t.ndim() == 2, ErrorCategory::Dimension, "concat input ", i, " must be [N,d], got ",
          t.shape_str());
    if (i == 0) N = t.dim(0);
    check(t.dim(0) == N, ErrorCategory::Dimension, "concat leading extents differ: ", N, " vs ",
          t.dim(0), " at input ", i);
    total += t.dim(1);
    ins.push_back(n);
  }
  Tensor out({N, total});
  std::size_t offset = 0;
  for (ad::Node* n : ins) {
    const std::size_t d = n->value.dim(1);
    for (std::size_t r = 0; r < N; ++r)
      std::copy_n(n->value.v.begin() + r * d, d, out.v.begin() + r * total + offset);
    offset += d;
  }
  Var result = make(std::move(out), ins);
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [ins, outn, N, total]() {
      const double* g = outn->grad.v.data();
      std::size_t offset = 0;
      for (ad::Node* n : ins) {
        const std::size_t d = n->value.dim(1);
        if (n->requires_grad) {
          double* gx = n->grad_data();
          for (std::size_t r = 0; r < N; ++r)
            for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[r * total + offset + c];
        }
        offset += d;
      }
    };
  }
  return result;
}

Var Graph::gather_rows(Var x, std::vector<std::size_t> rows) {
  ad::Node* in = node(x);
  const Tensor& t = in->value;
  check(t.ndim() == 2, ErrorCategory::Dimension, "gather_rows input must be [N,D], got ",
        t.shape_str());
  check(!rows.empty(), ErrorCategory::Contract, "gather_rows with empty row list");
  const std::size_t N = t.dim(0), D = t.dim(1);
  for (std::size_t r : rows)
    check(r < N, ErrorCategory::Contract, "gather_rows index ", r, " out of range [0,", N, ")");
  Tensor out({rows.size(), D});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(t.v.begin() + rows[i] * D, D, out.v.begin() + i * D);
  Var result = make(std::move(out), {in});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [in, outn, rows = std::move(rows), D]() {
      double* gx = in->grad_data();
      const double* g = outn->grad.v.data();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < D; ++c) gx[rows[i] * D + c] += g[i * D + c];
    };
  }
  return result;
}

Var Graph::l2_normalize_rows(Var x) {
  ad::Node* in = node(x);
  const Tensor& v = in->value;
  check(v.ndim() == 2, ErrorCategory::Dimension, "l2_normalize_rows input must be [N,D], got ",
        v.shape_str());
  const std::size_t N = v.dim(0), D = v.dim(1);
  Tensor out = v;
  std::vector<double> norms(N);
  for (std::size_t r = 0; r < N; ++r) {
    const double* row = v.v.data() + r * D;
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += row[d] * row[d];
    const double n = std::sqrt(s);
    norms[r] = n;
    // the zero-row pass-through is a region boundary, and a tiny norm means a
    // steep 1/n Jacobian: both poison finite differences
    note_region(Rng::mix(r, std::uint64_t(n > 0.0)));
    if (n > 0.0) {
      note_hazard(n);
      double* orow = out.v.data() + r * D;
      for (std::size_t d = 0; d < D; ++d) orow[d] /= n;
    }
  }
  Var result = make(std::move(out), {in});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [in, outn, norms = std::move(norms), N, D]() {
      double* gx = in->grad_data();
      const double* g = outn->grad.v.data();
      const double* xd = in->value.v.data();
      for (std::size_t r = 0; r < N; ++r) {
        const double n = norms[r];
        const double* grow = g + r * D;
        const double* xrow = xd + r * D;
        double* gxrow = gx + r * D;
        if (n == 0.0) {
          for (std::size_t d = 0; d < D; ++d) gxrow[d] += grow[d];
          continue;
        }
        double dot = 0.0;
        for (std::size_t d = 0; d < D; ++d) dot += grow[d] * xrow[d];
        const double inv = 1.0 / n, inv3 = inv * inv * inv;
        for (std::size_t d = 0; d < D; ++d) gxrow[d] += grow[d] * inv - xrow[d] * dot * inv3;
      }
    };
  }
  return result;
}

// ---------------------------------------------------------------------------

Var Graph::softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
  ad::Node* in = node(logits);
  const Tensor& z = in->value;
  check(z.ndim() == 2, ErrorCategory::Dimension, "softmax_cross_entropy logits must be [N,K], got ",
        z.shape_str());
  const std::size_t N = z.dim(0), K = z.dim(1);
  check(labels.size() == N, ErrorCategory::Dimension, "label count ", labels.size(),
        " does not match batch ", N);
  std::size_t live = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const int l = labels[n];
    if (l == kMissingLabel) continue;
    check(l >= 0 && std::size_t(l) < K, ErrorCategory::LabelRange, "label ", l,
          " out of range for ", K, " classes at row ", n);
    ++live;
  }

  if (live == 0) {
    // All-missing batch: exact zero, no gradient path.
    return make(Tensor::scalar(0.0), {in});
  }

  // Softmax rows cached for backward; only non-missing rows are filled.
  std::vector<double> probs(N * K, 0.0);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] == kMissingLabel) continue;
    const double* zrow = z.v.data() + n * K;
    double zmax = zrow[0];
    for (std::size_t k = 1; k < K; ++k) zmax = std::max(zmax, zrow[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += std::exp(zrow[k] - zmax);
    const double lse = zmax + std::log(sum);
    for (std::size_t k = 0; k < K; ++k) probs[n * K + k] = std::exp(zrow[k] - lse);
    total += lse - zrow[labels[n]];
  }
  total /= double(live);

  Var result = make(Tensor::scalar(total), {in});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [in, outn, labels, probs = std::move(probs), N, K, live]() {
      double* gx = in->grad_data();
      const double g = outn->grad.v[0] / double(live);
      for (std::size_t n = 0; n < N; ++n) {
        if (labels[n] == kMissingLabel) continue;
        const double* prow = probs.data() + n * K;
        double* grow = gx + n * K;
        for (std::size_t k = 0; k < K; ++k) grow[k] += g * prow[k];
        grow[std::size_t(labels[n])] -= g;
      }
    };
  }
  return result;
}

Var Graph::triplet_ranking(Var anchors, Var positives, Var negatives, double margin,
                           Distance distance) {
  ad::Node* an = node(anchors);
  ad::Node* pn = node(positives);
  ad::Node* nn = node(negatives);
  check(margin > 0.0, ErrorCategory::Config, "triplet margin must be > 0, got ", margin);
  const Tensor& a = an->value;
  check(a.ndim() == 2, ErrorCategory::Dimension, "triplet features must be [T,D], got ",
        a.shape_str());
  check_same_shape(a, pn->value, "triplet anchor/positive");
  check_same_shape(a, nn->value, "triplet anchor/negative");
  const std::size_t T = a.dim(0), D = a.dim(1);

  std::vector<double> dab(T), dac(T);
  double total = 0.0;
  double worst_margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < T; ++t) {
    const double* av = a.v.data() + t * D;
    const double* bv = pn->value.v.data() + t * D;
    const double* cv = nn->value.v.data() + t * D;
    double sab = 0.0, sac = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double db = av[d] - bv[d];
      const double dc = av[d] - cv[d];
      sab += db * db;
      sac += dc * dc;
    }
    if (distance == Distance::Euclidean) {
      dab[t] = std::sqrt(sab);
      dac[t] = std::sqrt(sac);
      worst_margin = std::min({worst_margin, dab[t], dac[t]});
    } else {
      dab[t] = sab;
      dac[t] = sac;
    }
    const double h = margin + dab[t] - dac[t];
    worst_margin = std::min(worst_margin, std::fabs(h));
    const bool active = h > 0.0;
    note_region(Rng::mix(t, (std::uint64_t(active) << 2) | (std::uint64_t(dab[t] > 0.0) << 1) |
                                std::uint64_t(dac[t] > 0.0)));
    if (active) {
      total += h;
      // Steep sqrt slope near coincident points is an FD hazard even when no
      // kink is crossed.
      if (distance == Distance::Euclidean) note_hazard(std::min(dab[t], dac[t]));
    }
  }
  total /= double(T);
  note_margin(worst_margin);

  Var result = make(Tensor::scalar(total), {an, pn, nn});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [an, pn, nn, outn, dab = std::move(dab), dac = std::move(dac), margin,
                      distance, T, D]() {
      const double coef = outn->grad.v[0] / double(T);
      const bool need_a = an->requires_grad, need_p = pn->requires_grad,
                 need_n = nn->requires_grad;
      double* ga = need_a ? an->grad_data() : nullptr;
      double* gp = need_p ? pn->grad_data() : nullptr;
      double* gn = need_n ? nn->grad_data() : nullptr;
      for (std::size_t t = 0; t < T; ++t) {
        if (margin + dab[t] - dac[t] <= 0.0) continue;  // inactive or boundary
        const double* av = an->value.v.data() + t * D;
        const double* bv = pn->value.v.data() + t * D;
        const double* cv = nn->value.v.data() + t * D;
        if (distance == Distance::Euclidean) {
          const double iab = dab[t] > 0.0 ? 1.0 / dab[t] : 0.0;
          const double iac = dac[t] > 0.0 ? 1.0 / dac[t] : 0.0;
          for (std::size_t d = 0; d < D; ++d) {
            const double uab = (av[d] - bv[d]) * iab;
            const double uac = (av[d] - cv[d]) * iac;
            if (need_a) ga[t * D + d] += coef * (uab - uac);
            if (need_p) gp[t * D + d] -= coef * uab;
            if (need_n) gn[t * D + d] += coef * uac;
          }
        } else {
          for (std::size_t d = 0; d < D; ++d) {
            const double db = av[d] - bv[d];
            const double dc = av[d] - cv[d];
            if (need_a) ga[t * D + d] += coef * 2.0 * (db - dc);
            if (need_p) gp[t * D + d] -= coef * 2.0 * db;
            if (need_n) gn[t * D + d] += coef * 2.0 * dc;
          }
        }
      }
    };
  }
  return result;
}

// ---------------------------------------------------------------------------

Var Graph::add(Var a, Var b) {
  ad::Node* an = node(a);
  ad::Node* bn = node(b);
  check_same_shape(an->value, bn->value, "add");
  Tensor out = an->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] += bn->value.v[i];
  Var result = make(std::move(out), {an, bn});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [an, bn, outn]() {
      const double* g = outn->grad.v.data();
      const std::size_t n = outn->value.numel();
      if (an->requires_grad) {
        double* ga = an->grad_data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        double* gb = bn->grad_data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    };
  }
  return result;
}

Var Graph::scale(Var x, double factor) {
  ad::Node* in = node(x);
  Tensor out = in->value;
  for (double& d : out.v) d *= factor;
  Var result = make(std::move(out), {in});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [in, outn, factor]() {
      double* gx = in->grad_data();
      const double* g = outn->grad.v.data();
      for (std::size_t i = 0; i < outn->value.numel(); ++i) gx[i] += factor * g[i];
    };
  }
  return result;
}

Var Graph::sum(Var x) {
  ad::Node* in = node(x);
  double total = 0.0;
  for (double d : in->value.v) total += d;
  Var result = make(Tensor::scalar(total), {in});
  ad::Node* outn = node(result);
  if (outn->requires_grad) {
    outn->backprop = [in, outn]() {
      double* gx = in->grad_data();
      const double g = outn->grad.v[0];
      for (std::size_t i = 0; i < in->value.numel(); ++i) gx[i] += g;
    };
  }
  return result;
}

void Graph::backward(Var loss) {
  check(loss.defined(), ErrorCategory::Contract, "backward on undefined loss");
  ad::Node* ln = node(loss);
  check(ln->value.is_scalar(), ErrorCategory::Contract, "backward requires a scalar loss, got ",
        ln->value.shape_str());
  ln->grad_data()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    ad::Node* n = it->get();
    if (n->grad_live && n->backprop) n->backprop();
  }
}

// ---------------------------------------------------------------------------

GradCheckReport finite_difference_check(const std::function<LossProbe()>& forward,
                                        const std::vector<ParamGrad>& params,
                                        const GradCheckOptions& opt) {
  check(opt.epsilon > 0.0 && opt.epsilon <= 1e-2, ErrorCategory::Contract,
        "gradient-check epsilon must lie in (0, 1e-2], got ", opt.epsilon);
  Rng rng(Rng::mix(opt.seed, 0x6fd1c3a5u));
  GradCheckReport report;
  const double eps = opt.epsilon;

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* value = params[pi].first;
    const Tensor* grad = params[pi].second;
    check_same_shape(*value, *grad, "gradient-check parameter/grad");
    const std::size_t n = value->numel();
    const std::size_t want = std::min(n, opt.coords_per_tensor);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    std::size_t taken = 0, cursor = 0;
    while (taken < want && cursor < n) {
      const std::size_t c = order[cursor++];
      const double w0 = value->v[c];
      value->v[c] = w0 + eps;
      const LossProbe hi = forward();
      value->v[c] = w0 - eps;
      const LossProbe lo = forward();
      value->v[c] = w0;

      if (hi.region_signature != lo.region_signature ||
          std::min(hi.hazard_margin, lo.hazard_margin) < opt.hazard_margin) {
        ++report.kink_resamples;
        continue;
      }
      const double numeric = (hi.loss - lo.loss) / (2.0 * eps);
      const double analytic = grad->v[c];
      const double denom =
          std::max({std::fabs(analytic), std::fabs(numeric), opt.denom_floor});
      const double rel = std::fabs(analytic - numeric) / denom;
      ++taken;
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_coord = c;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
    report.kink_exhausted += want - taken;
  }
  return report;
}

}  // namespace darn
