#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "darn/tensor.hpp"

namespace darn {

// Sentinel for an unannotated attribute label.
constexpr int kMissingLabel = -1;

enum class Distance { Euclidean, SquaredEuclidean };

class Graph;

namespace detail {
struct PoolPlan;  // shared kernel for fixed-window and adaptive max pooling
}

namespace ad {
struct Node {
  Tensor value;
  Tensor grad;                      // allocated on first accumulation
  bool requires_grad = false;
  bool grad_live = false;           // true once any gradient reached this node
  std::function<void()> backprop;   // empty for leaves

  double* grad_data() {
    if (grad.v.empty()) grad = Tensor::zeros(value.shape);
    grad_live = true;
    return grad.v.data();
  }
};
}  // namespace ad

// Lightweight handle into a Graph-owned node. Valid while the graph lives.
class Var {
 public:
  Var() = default;

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  bool requires_grad() const { return n_->requires_grad; }

  // Gradient after backward(); zeros if no gradient reached this node.
  Tensor grad() const {
    if (!n_->grad_live) return Tensor::zeros(n_->value.shape);
    return n_->grad;
  }
  bool grad_live() const { return n_->grad_live; }

 private:
  friend class Graph;
  explicit Var(ad::Node* n) : n_(n) {}
  ad::Node* n_ = nullptr;
};

// Define-by-run tape. Ops append nodes in topological (creation) order;
// backward() walks the tape in reverse. A graph and its tensors are confined
// to one thread; independent graphs may run on independent threads.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);

  // Cross-correlation with zero padding. input [N,C,H,W], weight [F,C,kh,kw],
  // bias [F] -> [N,F,H',W'] with H' = floor((H+2p-kh)/stride)+1.
  Var conv2d(Var input, Var weight, Var bias, int stride = 1, int pad = 0);

  // Valid-region max pooling; ties take the first position in scan order.
  Var maxpool(Var input, int window, int stride);

  // Pools [N,C,H,W] to [N,C,3,3]; bin i spans [floor(i*H/3), floor((i+1)*H/3)).
  Var adaptive_maxpool_3x3(Var input);

  // input [N,D] x weight [D,M] + bias [M] -> [N,M]
  Var fully_connected(Var input, Var weight, Var bias);

  Var relu(Var x);

  // [N, ...] -> [N, product(rest)]
  Var flatten(Var x);

  // Concatenates [N, d_i] matrices along the feature axis.
  Var concat(const std::vector<Var>& xs);

  // Selects rows of a [N,D] matrix; backward scatter-adds.
  Var gather_rows(Var x, std::vector<std::size_t> rows);

  // Scales each row of a [N,D] matrix to unit Euclidean norm. All-zero rows
  // pass through unchanged (with an identity gradient), mirroring the
  // retrieval pipeline's convention for dead segments.
  Var l2_normalize_rows(Var x);

  // Mean over non-missing rows of -log softmax(logits)[label].
  // labels[i] in [0,K) or kMissingLabel; missing rows contribute no loss and
  // no gradient. All-missing batches yield exactly zero for both.
  Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);

  // Mean over rows of max(0, margin + dist(a_i,b_i) - dist(a_i,c_i)).
  // Inactive rows and the hinge boundary get zero gradient; for Euclidean
  // distance the derivative at coincident points uses subgradient 0.
  Var triplet_ranking(Var anchors, Var positives, Var negatives, double margin,
                      Distance distance);

  Var add(Var a, Var b);
  Var scale(Var x, double factor);
  Var sum(Var x);  // scalar sum of all elements

  // Reverse accumulation from a scalar loss. Fan-out gradients sum; nodes
  // never reached by a gradient keep grad_live() == false.
  void backward(Var loss);

  // Smallest observed distance to a ReLU / max-pool-tie / hinge kink during
  // forward evaluation. Diagnostic only: a ReLU feeding a max pool produces
  // exact ties between clamped zeros, so this is 0 for most realistic nets.
  double min_kink_margin() const { return kink_margin_; }

  // Fingerprint of the smooth region this evaluation landed in: ReLU sign
  // patterns, pooling argmax choices, hinge and sqrt activity. Two forwards
  // with equal signatures lie on the same smooth piece, so their central
  // difference is trustworthy even when ties or clamped zeros are present.
  std::uint64_t region_signature() const { return region_sig_; }

  // Smallest curvature hazard: an active Euclidean distance near zero makes
  // the analytic gradient steep and finite differences unreliable without
  // leaving the smooth region. Infinity when no such term was evaluated.
  double fd_hazard_margin() const { return hazard_margin_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  Var make(Tensor value, std::vector<ad::Node*> inputs);
  Var pool_impl_(Var input, const detail::PoolPlan& plan);
  ad::Node* node(Var v) { return v.n_; }
  void note_margin(double m) {
    if (m < kink_margin_) kink_margin_ = m;
  }
  void note_region(std::uint64_t bits);
  void note_hazard(double m) {
    if (m < hazard_margin_) hazard_margin_ = m;
  }

  std::vector<std::unique_ptr<ad::Node>> nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
  double hazard_margin_ = std::numeric_limits<double>::infinity();
  std::uint64_t region_sig_ = 0;
};

// ---------------------------------------------------------------------------
// Central-difference gradient checking.

struct LossProbe {
  double loss = 0.0;
  double hazard_margin = std::numeric_limits<double>::infinity();
  std::uint64_t region_signature = 0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;             // must lie in (0, 1e-2]
  std::size_t coords_per_tensor = 8; // sampled coordinates per parameter
  double hazard_margin = 1e-6;       // probe pairs with a curvature hazard
                                     // below this are discarded and resampled
  double denom_floor = 1e-8;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kink_resamples = 0;    // probe pairs that straddled a kink
  std::size_t kink_exhausted = 0;    // coordinates abandoned near a kink
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// (tensor to perturb in place, analytic gradient of the same shape)
using ParamGrad = std::pair<Tensor*, const Tensor*>;

// `forward` must rebuild the computation from the current parameter values and
// report the loss together with the region signature and hazard margin of that
// evaluation. A +eps/-eps probe pair is kept only when both evaluations share
// one smooth region and neither carries a curvature hazard; otherwise the
// coordinate is discarded and another is drawn. Relative error per coordinate
// uses max(|analytic|, |numeric|, denom_floor).
GradCheckReport finite_difference_check(const std::function<LossProbe()>& forward,
                                        const std::vector<ParamGrad>& params,
                                        const GradCheckOptions& options = {});

}  // namespace darn
