#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace p2s::nn {

/// Storage aligned to the widest SIMD packet. Eigen reductions peel
/// leading elements by runtime alignment, so a fixed base alignment keeps
/// results bit-identical from run to run.
template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

/// Dense NCHW tensor.
template <typename S>
struct Tensor {
  std::array<int, 4> shape{0, 0, 0, 0};
  AlignedVector<S> data;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, S fill = S(0)) : shape{n, c, h, w} {
    data.assign(static_cast<std::size_t>(n) * c * h * w, fill);
  }
  explicit Tensor(std::array<int, 4> s, S fill = S(0)) : Tensor(s[0], s[1], s[2], s[3], fill) {}

  int n() const { return shape[0]; }
  int c() const { return shape[1]; }
  int h() const { return shape[2]; }
  int w() const { return shape[3]; }
  std::size_t numel() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(shape[2]) * shape[3]; }

  S& at(int n_, int c_, int h_, int w_) {
    return data[((static_cast<std::size_t>(n_) * shape[1] + c_) * shape[2] + h_) * shape[3] + w_];
  }
  S at(int n_, int c_, int h_, int w_) const {
    return data[((static_cast<std::size_t>(n_) * shape[1] + c_) * shape[2] + h_) * shape[3] + w_];
  }
  S* slice(int n_, int c_ = 0) {
    return data.data() + (static_cast<std::size_t>(n_) * shape[1] + c_) * plane();
  }
  const S* slice(int n_, int c_ = 0) const {
    return data.data() + (static_cast<std::size_t>(n_) * shape[1] + c_) * plane();
  }
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

std::string shape_string(const std::array<int, 4>& s);

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
/// tape backwards visits every node after all of its consumers.
template <typename S>
class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  Var leaf(Tensor<S> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }
  Var push(Tensor<S> value, bool requires_grad, Backward backward) {
    nodes_.push_back({std::move(value), {}, std::move(backward), requires_grad});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<S>& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer, zero-initialised on first access.
  Tensor<S>& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.shape != n.value.shape) n.grad = Tensor<S>(n.value.shape);
    return n.grad;
  }
  bool has_grad(Var v) const { return nodes_[v.id].grad.shape == nodes_[v.id].value.shape; }

  /// Seeds d(root)/d(root) = 1 for a one-element root and back-propagates.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Operators. Each records its backward on the tape when any input requires
// a gradient. Convolutions use "same" replicate padding.

/// x (N,C,H,W), weight (O,C,k,k) with odd k, bias (1,O,1,1).
template <typename S>
Var conv2d(Tape<S>& t, Var x, Var weight, Var bias);

/// Non-overlapping transposed convolution, kernel == stride.
/// x (N,C,H,W), weight (C,O,s,s), bias (1,O,1,1) -> (N,O,H*s,W*s).
template <typename S>
Var conv_transpose2d(Tape<S>& t, Var x, Var weight, Var bias, int stride);

/// Nearest-neighbour upsampling by an integer factor.
template <typename S>
Var upsample_nearest(Tape<S>& t, Var x, int factor);

/// k x k window, stride k; H and W must be divisible by k.
template <typename S>
Var maxpool2d(Tape<S>& t, Var x, int k);

template <typename S>
Var relu(Tape<S>& t, Var x);

template <typename S>
Var sigmoid(Tape<S>& t, Var x);

template <typename S>
Var concat_channels(Tape<S>& t, Var a, Var b);

/// Per-channel statistics over (N, H, W) of the batch.
template <typename S>
struct BatchStats {
  std::vector<S> mean;
  std::vector<S> var;  ///< biased variance used for normalisation
  long count = 0;
};

/// Normalises each channel with the batch mean and variance, then applies
/// gamma (1,C,1,1) and beta (1,C,1,1). Fills `stats` when non-null.
template <typename S>
Var batch_stats_norm(Tape<S>& t, Var x, Var gamma, Var beta, S eps, BatchStats<S>* stats = nullptr);

/// Inference-time normalisation with fixed statistics.
template <typename S>
Var fixed_stats_norm(Tape<S>& t, Var x, Var gamma, Var beta, const std::vector<S>& mean,
                     const std::vector<S>& var, S eps);

inline constexpr double kBceClip = 1e-7;

enum class LossWeighting { per_polygon, per_pixel };

/// Masked binary cross-entropy. `label` holds 0/1 for labelled pixels and a
/// negative value elsewhere; `polygon_id` groups labelled pixels. With
/// per_polygon weighting the loss is the mean over (example, polygon) groups
/// of each group's mean BCE; per_pixel is the plain mean over labelled pixels.
template <typename S>
Var masked_polygon_bce(Tape<S>& t, Var pred, const Tensor<S>& label, const Tensor<S>& polygon_id,
                       LossWeighting weighting = LossWeighting::per_polygon);

/// Sum of all elements times fixed coefficients; used by gradient checks.
template <typename S>
Var weighted_sum(Tape<S>& t, Var x, const Tensor<S>& coeff);

}  // namespace p2s::nn
