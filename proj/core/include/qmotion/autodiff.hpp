#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qmotion/rotmath.hpp"

namespace qmotion::ad {

using Shape = std::vector<std::size_t>;

/// Dense row-major array of doubles.
///
/// Most primitives view a tensor as a matrix of `rows() x cols()` where
/// `cols()` is the last dimension; quaternion primitives expect cols() == 4.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// The only element of a size-1 tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string shape_string(const Shape& s);

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient after Tape::backward; zero tensor when the node did not receive any.
  Tensor grad() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitives in creation order (which is a topological order) and
/// replays their backward rules in reverse. A tape supports one backward
/// pass; afterwards it is consumed and refuses further use.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  void backward(Var output);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of `id` for accumulation, or nullptr when `id` needs none.
  Tensor* grad_target(std::size_t id);
  /// Incoming gradient of `id` during backward (may be empty when unused).
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Adds a node. `parents` decide whether the result requires a gradient;
  /// `fn` is dropped when none of them does.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void check_live() const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Primitives. Shapes must agree exactly unless stated otherwise.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a[rows, cols] + b[cols], broadcast over rows.
Var add_bias(Var a, Var b);
Var add_scalar(Var a, double s);
Var scale(Var a, double s);
Var neg(Var a);

/// [n, k] x [k, m] -> [n, m].
Var matmul(Var a, Var b);

/// Concatenates along the last axis; inputs must have equal row counts.
Var concat(const std::vector<Var>& parts);
/// Columns [begin, end) of the last axis.
Var slice(Var a, std::size_t begin, std::size_t end);
/// Stacks along the first axis; trailing dimensions must match.
Var concat_rows(const std::vector<Var>& parts);
/// Indices [begin, end) of the first axis.
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);
/// Same value, no gradient path.
Var detach(Var a);

Var sum(Var a);
Var mean(Var a);
/// Sum over the last axis: [..., c] -> [..., 1].
Var sum_last(Var a);

Var square(Var a);
/// sqrt of a non-negative input; derivative uses max(sqrt(x), 1e-12).
Var sqrt(Var a);
Var abs(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var leaky_relu(Var a, double slope);
Var sin(Var a);
Var cos(Var a);
Var atan2(Var y, Var x);
/// Maps angles into [-π, π] by subtracting 2πk; gradient is the identity.
Var wrap_angle(Var a);

/// Euclidean norm over the last axis: [..., c] -> [..., 1]. The derivative
/// divides by max(norm, 1e-12).
Var l2norm(Var a);
/// a / ‖a‖ over the last axis (quaternions, 2D versors, ...).
Var normalize(Var a);

/// Batched Hamilton product over rows of [..., 4] tensors.
Var qmul(Var a, Var b);
/// Batched rotation of [..., 3] vectors by [..., 4] unit quaternions (row counts match).
Var qrot(Var q, Var v);

inline constexpr double kNormEpsilon = 1e-12;

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Rotation-parameterization conversions built from the primitives above.

/// [..., 3] exponential maps -> [..., 4] quaternions, with the small-angle
/// series expansion below 1e-8.
Var expmap_to_quat(Var e);
/// [..., 3] Euler angles in `order` -> [..., 4] quaternions.
Var euler_to_quat(Var e, rot::EulerOrder order);
/// [..., 4] unit quaternions -> [..., 3] Euler angles in `order`.
Var quat_to_euler(Var q, rot::EulerOrder order);

// ---------------------------------------------------------------------------
// Trainable parameters.

/// Ordered set of named parameter tensors with gradient buffers.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  std::size_t add(std::string name, Tensor init);
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  Tensor& value(std::size_t i) { return entries_[i].value; }
  const Tensor& value(std::size_t i) const { return entries_[i].value; }
  Tensor& value(std::string_view name) { return value(index_of(name)); }
  const Tensor& value(std::string_view name) const { return value(index_of(name)); }
  Tensor& grad(std::size_t i) { return entries_[i].grad; }
  const Tensor& grad(std::size_t i) const { return entries_[i].grad; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  /// Total number of scalars.
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Places every parameter of a set on a tape, either as a differentiable
/// leaf or as a constant.
class Binding {
 public:
  Binding(Tape& tape, ParameterSet& params, bool trainable = true);
  /// Uses existing vars (one per parameter, same shapes) in place of the
  /// parameter values, e.g. the inputs of a gradient check.
  Binding(ParameterSet& params, std::vector<Var> vars);

  Var operator[](std::size_t i) const { return vars_[i]; }
  Var operator[](std::string_view name) const { return vars_[params_->index_of(name)]; }
  Tape& tape() const { return *tape_; }

  /// Adds leaf gradients into the parameter gradient buffers (after backward).
  void accumulate_grads() const;

 private:
  Tape* tape_;
  ParameterSet* params_;
  std::vector<Var> vars_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

struct GradCheckOptions {
  double step = 1e-5;
  double rtol = 1e-5;
  double atol = 1e-8;
  /// When non-zero, only this many randomly chosen coordinates are checked.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
  /// Re-examines a failing coordinate for a kink (such as leaky ReLU) inside
  /// the step. It is excused when the one-sided differences disagree by more
  /// than `kink_rtol` while the analytic gradient matches one of them within
  /// `kink_rtol`, or when a central difference with step / 100 passes.
  bool skip_kinks = false;
  double kink_rtol = 1e-3;
};

struct GradCheckResult {
  bool passed = true;
  std::size_t checked = 0;
  double max_abs_error = 0.0;
  /// Largest relative error over coordinates outside the absolute tolerance.
  double max_rel_error = 0.0;
  /// Coordinates excused by the kink re-examination.
  std::size_t kinks = 0;
  std::string worst;  // description of the worst coordinate
};

using ScalarFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares tape gradients of `f` at `inputs` with central differences
/// evaluated on fresh tapes. A coordinate passes when the absolute error is
/// below `atol` or the relative error below `rtol`.
GradCheckResult check_gradients(const ScalarFunction& f, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options = {});

}  // namespace qmotion::ad
