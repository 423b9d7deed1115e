#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mgan/tensor.hpp"

namespace mgan {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient of the last backward() root with respect to this value.
  std::span<const double> grad() const;
  bool needs_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Explicit operation tape for reverse-mode differentiation.
///
/// A tape is built fresh for every forward pass. Parameters enter as leaves
/// bound to their owning Tensor; backward() accumulates into Tensor::grad.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient stays on the tape (read back through Var::grad).
  Var input(Tensor value);
  /// Leaf bound to a parameter. With track == false it behaves as a constant.
  Var parameter(const Tensor& param, bool track = true);

  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);

  void backward(const Var& root);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  std::span<const double> grad(int id) const;
  /// Gradient accumulator for a parent node, or nullptr when it needs none.
  double* grad_sink(int id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    bool needs_grad = false;
    const Tensor* param = nullptr;
  };
  std::vector<Node> nodes_;
};

namespace ops {

Var add(const Var& a, const Var& b);
/// scale * x + shift, elementwise with scalar coefficients.
Var affine(const Var& x, double scale, double shift);
Var mean(const Var& x);
Var sum(const Var& x);
Var reshape(const Var& x, Shape shape);
/// Tiles a leading-axis-1 tensor to batch size n.
Var repeat_batch(const Var& x, Index n);

Var leaky_relu(const Var& x, double slope = 0.2);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var square(const Var& x);
/// log(max(x, floor)); gradient is zero where the floor is active.
Var log_clamped(const Var& x, double floor = 1e-7);

/// [N,D] x [D,E] + [E] -> [N,E]
Var dense(const Var& input, const Var& weight, const Var& bias);
/// [N,C,H,W] * [F,C,kh,kw] -> [N,F,H',W'], no bias.
Var conv2d(const Var& input, const Var& kernel, int stride, int pad);
/// Adds a per-channel bias [C] to an [N,C,H,W] tensor.
Var add_channel_bias(const Var& x, const Var& bias);
/// Nearest-neighbour 2x upsampling of [N,C,H,W].
Var upsample2x(const Var& x);
/// x + gain[c] * noise[n,0,h,w]; noise is a fixed input.
Var add_noise(const Var& x, const Tensor& noise, const Var& gain);
/// Instance-normalises each channel then applies (1 + scale) and shift from style [N,2C].
Var adaptive_instance_norm(const Var& x, const Var& style, double eps = 1e-8);

}  // namespace ops

}  // namespace mgan
