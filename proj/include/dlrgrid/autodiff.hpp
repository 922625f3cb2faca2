#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dlrgrid/matrix.hpp"

// Reverse-mode differentiation over dense matrices. A Tape records every
// primitive eagerly (values are available immediately) together with its
// vector-Jacobian product; backward() replays the records in reverse.

namespace dlrgrid::autodiff {

struct Param {
  std::string name;
  Matrix value;
  bool trainable = true;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Matrix value);
  /// Leaf that receives a gradient (retained after backward).
  Var variable(Matrix value);
  /// Leaf bound to a parameter. Registering the same parameter twice returns
  /// the same node.
  Var param(Param& p);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Populates gradients of `loss` (must be 1x1) for every leaf that needs one.
  void backward(Var loss);

  /// Gradient of the last backward() with respect to a leaf variable.
  Matrix grad(Var leaf) const;
  /// Gradient with respect to a parameter; zeros if it never reached the loss.
  Matrix gradient(const Param& p) const;

  /// Sign of (y - yhat) for every element recorded by pinball_elem, in order.
  /// Used to detect kink crossings during finite-difference checks.
  const std::vector<signed char>& kink_signs() const noexcept { return kink_signs_; }

  // Primitive plumbing.
  Var record(Matrix value, std::vector<std::size_t> inputs, Backward backward);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Matrix& grad_of(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient buffer of an input, zero-allocated on first use.
  Matrix& grad_buffer(std::size_t id);
  void note_kink_sign(signed char s) { kink_signs_.push_back(s); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
    bool leaf = true;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> param_nodes_;
  std::vector<signed char> kink_signs_;
};

// Primitive set. All throw ShapeMismatch naming both shapes on bad input.
Var matmul(Var a, Var b);
/// `s` must outlive the tape.
Var sparse_dense_matmul(const CsrMatrix& s, Var x);
Var add(Var a, Var b);
/// a (m x n) plus b (1 x n) added to every row.
Var row_broadcast_add(Var a, Var b);
Var sigmoid(Var a);
Var tanh(Var a);
Var hadamard(Var a, Var b);
Var concat_columns(std::span<const Var> parts);
Var slice_columns(Var a, std::size_t first, std::size_t count);
Var slice_rows(Var a, std::size_t first, std::size_t count);
Var scalar_scale(Var a, double s);
Var sum(Var a);
Var mean(Var a);
/// Elementwise pinball loss of prediction `pred` against constant `target`.
Var pinball_elem(Var pred, const Matrix& target, double level);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

enum class Stencil {
  Central,    // (f(x+e) - f(x-e)) / 2e
  FivePoint,  // fourth-order central stencil; allows a larger e for tiny gradients
};

/// Central-difference check of tape gradients. `loss_fn` must build the loss on
/// the tape it is given, reading the current values of `params`. Coordinates
/// whose perturbation moves any pinball element across its kink are skipped.
/// Relative error falls back to absolute when both magnitudes are below 1e-8.
GradCheckReport grad_check(const std::function<Var(Tape&)>& loss_fn,
                           std::span<Param* const> params, double epsilon,
                           Stencil stencil = Stencil::Central);

struct AdamWConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamWState {
  std::size_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// One AdamW update with decoupled weight decay. Parameters and gradients are
/// matched by position. A non-finite gradient aborts before anything changes.
void adamw_step(std::span<Param> params, std::span<const Matrix> grads, AdamWState& state,
                const AdamWConfig& config);

}  // namespace dlrgrid::autodiff
