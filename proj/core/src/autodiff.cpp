#include "qmotion/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "qmotion/error.hpp"
#include "qmotion/random.hpp"

namespace qmotion::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::size_t product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_cols(const char* op, const Tensor& a, std::size_t cols) {
  if (a.rank() == 0 || a.cols() != cols) {
    throw ShapeError(std::string(op) + ": expected last dimension " + std::to_string(cols) +
                     ", got " + shape_string(a.shape()));
  }
}

Shape with_last(Shape s, std::size_t last) {
  if (s.empty()) return {last};
  s.back() = last;
  return s;
}

/// Elementwise map with a derivative expressed through (x, y).
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, dfdx](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_)) {
    throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("Tensor::item on " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (product(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }

Tensor Var::grad() const {
  const Tensor& g = tape_->grad(id_);
  if (g.size() == 0) return Tensor(value().shape());
  return g;
}

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

void Tape::check_live() const {
  if (consumed_) throw InputError("tape already consumed by backward()");
}

Var Tape::constant(Tensor value) {
  check_live();
  if (!value.all_finite()) throw NumericalError("non-finite value entering the tape");
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  check_live();
  if (!value.all_finite()) throw NumericalError("non-finite value entering the tape");
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  check_live();
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  check_live();
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_target(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

void Tape::backward(Var output) {
  check_live();
  if (&output.tape() != this) throw InputError("backward: variable from another tape");
  const Node& out = nodes_[output.id()];
  if (out.value.size() != 1) {
    throw ShapeError("backward: output must be scalar, got " + shape_string(out.value.shape()));
  }
  if (!out.value.all_finite()) throw NumericalError("backward: non-finite loss value");
  consumed_ = true;
  if (!out.requires_grad) return;
  nodes_[output.id()].grad = Tensor(out.value.shape(), 1.0);
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, i);
  }
  for (const Node& n : nodes_) {
    if (n.requires_grad && !n.backward && n.grad.size() != 0 && !n.grad.all_finite()) {
      throw NumericalError("backward: non-finite gradient reached a leaf");
    }
  }
}

// ---------------------------------------------------------------------------
// Arithmetic

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t id : {ia, ib}) {
      if (Tensor* gp = t.grad_target(id)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
      }
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_target(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(ia)) {
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_target(ib)) {
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var add_bias(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.size() != av.cols()) {
    throw ShapeError("add_bias: bias " + shape_string(bv.shape()) + " vs input " +
                     shape_string(av.shape()));
  }
  Tensor y = av;
  const std::size_t rows = av.rows(), cols = av.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += bv[c];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_target(ib)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g[r * cols + c];
      }
    }
  });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  const auto n = static_cast<Eigen::Index>(av.dim(0));
  const auto k = static_cast<Eigen::Index>(av.dim(1));
  const auto m = static_cast<Eigen::Index>(bv.dim(1));
  Tensor y({av.dim(0), bv.dim(1)});
  MatrixMap(y.data(), n, m).noalias() = ConstMatrixMap(av.data(), n, k) * ConstMatrixMap(bv.data(), k, m);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
    ConstMatrixMap g(t.grad(self).data(), n, m);
    if (Tensor* ga = t.grad_target(ia)) {
      MatrixMap(ga->data(), n, k).noalias() += g * ConstMatrixMap(t.value(ib).data(), k, m).transpose();
    }
    if (Tensor* gb = t.grad_target(ib)) {
      MatrixMap(gb->data(), k, m).noalias() += ConstMatrixMap(t.value(ia).data(), n, k).transpose() * g;
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rows = parts.front().value().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) throw ShapeError("concat: row count mismatch");
    widths.push_back(p.value().cols());
    ids.push_back(p.id());
    total += p.value().cols();
  }
  Tensor y(with_last(parts.front().shape(), total));
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data() + r * w, w, y.data() + r * total + offset);
    }
    offset += w;
  }
  return parts.front().tape().record(
      std::move(y), parts, [ids, widths, rows, total](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (Tensor* gp = t.grad_target(ids[p])) {
            const std::size_t w = widths[p];
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < w; ++c) (*gp)[r * w + c] += g[r * total + off + c];
            }
          }
          off += widths[p];
        }
      });
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  const std::size_t cols = av.cols(), rows = av.rows();
  if (begin >= end || end > cols) {
    throw ShapeError("slice: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside " + shape_string(av.shape()));
  }
  const std::size_t w = end - begin;
  Tensor y(with_last(av.shape(), w));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * cols + begin, w, y.data() + r * w);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, rows, cols, begin, w](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) (*ga)[r * cols + begin + c] += g[r * w + c];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape tail(parts.front().shape().begin() + 1, parts.front().shape().end());
  std::size_t lead = 0;
  std::vector<std::size_t> ids, sizes;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.empty() || Shape(s.begin() + 1, s.end()) != tail) {
      throw ShapeError("concat_rows: trailing shape mismatch");
    }
    lead += s[0];
    ids.push_back(p.id());
    sizes.push_back(p.value().size());
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor y(shape);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(), y.data() + off);
    off += p.value().size();
  }
  return parts.front().tape().record(std::move(y), parts, [ids, sizes](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t o = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (Tensor* gp = t.grad_target(ids[p])) {
        for (std::size_t i = 0; i < sizes[p]; ++i) (*gp)[i] += g[o + i];
      }
      o += sizes[p];
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (av.rank() == 0 || begin >= end || end > av.dim(0)) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside " + shape_string(av.shape()));
  }
  const std::size_t stride = av.size() / av.dim(0);
  Shape shape = av.shape();
  shape[0] = end - begin;
  Tensor y(shape, std::vector<double>(av.data() + begin * stride, av.data() + end * stride));
  const std::size_t ia = a.id();
  const std::size_t off = begin * stride;
  return a.tape().record(std::move(y), {a}, [ia, off](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[off + i] += g[i];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const double g = t.grad(self)[0];
    for (double& v : ga->values()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s / static_cast<double>(n)), {a},
                         [ia, n](Tape& t, std::size_t self) {
                           Tensor* ga = t.grad_target(ia);
                           if (ga == nullptr) return;
                           const double g = t.grad(self)[0] / static_cast<double>(n);
                           for (double& v : ga->values()) v += g;
                         });
}

Var sum_last(Var a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor y(with_last(av.shape(), 1));
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += av[r * cols + c];
    y[r] = s;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, rows, cols](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += g[r];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise functions

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  return unary(
      a, [](double x) { return std::sqrt(std::max(x, 0.0)); },
      [](double, double y) { return 0.5 / std::max(y, kNormEpsilon); });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var leaky_relu(Var a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sin(Var a) {
  return unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var cos(Var a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Var wrap_angle(Var a) {
  return unary(
      a, [](double x) { return std::remainder(x, 2.0 * std::numbers::pi); },
      [](double, double) { return 1.0; });
}

Var atan2(Var y, Var x) {
  require_same_shape("atan2", y.value(), x.value());
  const Tensor& yv = y.value();
  const Tensor& xv = x.value();
  Tensor out(yv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::atan2(yv[i], xv[i]);
  const std::size_t iy = y.id(), ix = x.id();
  return y.tape().record(std::move(out), {y, x}, [iy, ix](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& yv = t.value(iy);
    const Tensor& xv = t.value(ix);
    Tensor* gy = t.grad_target(iy);
    Tensor* gx = t.grad_target(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double r2 = std::max(xv[i] * xv[i] + yv[i] * yv[i], kNormEpsilon * kNormEpsilon);
      if (gy) (*gy)[i] += g[i] * xv[i] / r2;
      if (gx) (*gx)[i] -= g[i] * yv[i] / r2;
    }
  });
}

// ---------------------------------------------------------------------------
// Norms and quaternions

Var l2norm(Var a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor y(with_last(av.shape(), 1));
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += av[r * cols + c] * av[r * cols + c];
    y[r] = std::sqrt(s);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, rows, cols](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& n = t.value(self);
    for (std::size_t r = 0; r < rows; ++r) {
      const double k = g[r] / std::max(n[r], kNormEpsilon);
      for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += k * av[r * cols + c];
    }
  });
}

Var normalize(Var a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor y(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += av[r * cols + c] * av[r * cols + c];
    const double n = std::max(std::sqrt(s), kNormEpsilon);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = av[r * cols + c] / n;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, rows, cols](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& yv = t.value(self);
    // d(x/|x|) = (I - y y^T) / |x|
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0, gy = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        s += av[r * cols + c] * av[r * cols + c];
        gy += g[r * cols + c] * yv[r * cols + c];
      }
      const double n = std::max(std::sqrt(s), kNormEpsilon);
      for (std::size_t c = 0; c < cols; ++c) {
        (*ga)[r * cols + c] += (g[r * cols + c] - gy * yv[r * cols + c]) / n;
      }
    }
  });
}

Var qmul(Var a, Var b) {
  require_cols("qmul", a.value(), 4);
  require_same_shape("qmul", a.value(), b.value());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t rows = av.rows();
  Tensor y(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = av.data() + 4 * r;
    const double* q = bv.data() + 4 * r;
    const rot::Quat o = rot::qmul({p[0], p[1], p[2], p[3]}, {q[0], q[1], q[2], q[3]});
    double* d = y.data() + 4 * r;
    d[0] = o.w;
    d[1] = o.x;
    d[2] = o.y;
    d[3] = o.z;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib, rows](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    Tensor* ga = t.grad_target(ia);
    Tensor* gb = t.grad_target(ib);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* p = av.data() + 4 * r;
      const double* q = bv.data() + 4 * r;
      const double* d = g.data() + 4 * r;
      // o = p ⊗ q is bilinear: dL/dp = d ⊗ conj(q), dL/dq = conj(p) ⊗ d.
      if (ga) {
        const rot::Quat gp = rot::qmul({d[0], d[1], d[2], d[3]}, {q[0], -q[1], -q[2], -q[3]});
        double* o = ga->data() + 4 * r;
        o[0] += gp.w;
        o[1] += gp.x;
        o[2] += gp.y;
        o[3] += gp.z;
      }
      if (gb) {
        const rot::Quat gq = rot::qmul({p[0], -p[1], -p[2], -p[3]}, {d[0], d[1], d[2], d[3]});
        double* o = gb->data() + 4 * r;
        o[0] += gq.w;
        o[1] += gq.x;
        o[2] += gq.y;
        o[3] += gq.z;
      }
    }
  });
}

Var qrot(Var q, Var v) {
  require_cols("qrot", q.value(), 4);
  require_cols("qrot", v.value(), 3);
  const Tensor& qv = q.value();
  const Tensor& vv = v.value();
  if (qv.rows() != vv.rows()) throw ShapeError("qrot: row count mismatch");
  const std::size_t rows = qv.rows();
  Tensor y(vv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* a = qv.data() + 4 * r;
    const double* x = vv.data() + 3 * r;
    // v + 2w (u x v) + 2 u x (u x v), evaluated without a unit-norm check.
    const rot::Vec3 u{a[1], a[2], a[3]};
    const rot::Vec3 vec{x[0], x[1], x[2]};
    const rot::Vec3 tt = 2.0 * rot::cross(u, vec);
    const rot::Vec3 o = vec + a[0] * tt + rot::cross(u, tt);
    double* d = y.data() + 3 * r;
    d[0] = o.x;
    d[1] = o.y;
    d[2] = o.z;
  }
  const std::size_t iq = q.id(), iv = v.id();
  return q.tape().record(std::move(y), {q, v}, [iq, iv, rows](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& qv = t.value(iq);
    const Tensor& vv = t.value(iv);
    Tensor* gq = t.grad_target(iq);
    Tensor* gv = t.grad_target(iv);
    for (std::size_t r = 0; r < rows; ++r) {
      const double w = qv[4 * r];
      const rot::Vec3 u{qv[4 * r + 1], qv[4 * r + 2], qv[4 * r + 3]};
      const rot::Vec3 x{vv[3 * r], vv[3 * r + 1], vv[3 * r + 2]};
      const rot::Vec3 d{g[3 * r], g[3 * r + 1], g[3 * r + 2]};
      // o = v + 2w (u x v) + 2 u x (u x v) = v + 2w (u x v) + 2 (u·v) u - 2 (u·u) v
      if (gv) {
        // (do/dv)^T d = d + 2w (d x u) + 2 (u·d) u - 2 (u·u) d
        const rot::Vec3 back =
            d + 2.0 * w * rot::cross(d, u) + 2.0 * rot::dot(u, d) * u - 2.0 * rot::dot(u, u) * d;
        (*gv)[3 * r] += back.x;
        (*gv)[3 * r + 1] += back.y;
        (*gv)[3 * r + 2] += back.z;
      }
      if (gq) {
        // do/dw = 2 (u x v)
        (*gq)[4 * r] += 2.0 * rot::dot(d, rot::cross(u, x));
        // d/du of 2w (u x v): 2w (v x d); of 2 (u·v) u: 2 (u·d) v + 2 (u·v) d;
        // of -2 (u·u) v: -4 (v·d) u
        const rot::Vec3 gu = 2.0 * w * rot::cross(x, d) + 2.0 * rot::dot(u, d) * x +
                             2.0 * rot::dot(u, x) * d - 4.0 * rot::dot(x, d) * u;
        (*gq)[4 * r + 1] += gu.x;
        (*gq)[4 * r + 2] += gu.y;
        (*gq)[4 * r + 3] += gu.z;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Parameterization conversions

Var expmap_to_quat(Var e) {
  require_cols("expmap_to_quat", e.value(), 3);
  const Tensor& ev = e.value();
  const std::size_t rows = ev.rows();
  Tensor y(with_last(ev.shape(), 4));
  for (std::size_t r = 0; r < rows; ++r) {
    const rot::Quat q = rot::expmap_to_quat({ev[3 * r], ev[3 * r + 1], ev[3 * r + 2]});
    y[4 * r] = q.w;
    y[4 * r + 1] = q.x;
    y[4 * r + 2] = q.y;
    y[4 * r + 3] = q.z;
  }
  const std::size_t ie = e.id();
  return e.tape().record(std::move(y), {e}, [ie, rows](Tape& t, std::size_t self) {
    Tensor* ge = t.grad_target(ie);
    if (ge == nullptr) return;
    const Tensor& g = t.grad(self);
    const Tensor& ev = t.value(ie);
    for (std::size_t r = 0; r < rows; ++r) {
      const double ex[3] = {ev[3 * r], ev[3 * r + 1], ev[3 * r + 2]};
      const double th2 = ex[0] * ex[0] + ex[1] * ex[1] + ex[2] * ex[2];
      const double th = std::sqrt(th2);
      // s = sin(θ/2)/θ and ds/dθ / θ, with series expansions near zero.
      double s, ds_over_th;
      if (th < 1e-3) {
        s = 0.5 - th2 / 48.0 + th2 * th2 / 3840.0;
        ds_over_th = -1.0 / 24.0 + th2 / 960.0;
      } else {
        s = std::sin(0.5 * th) / th;
        ds_over_th = (0.5 * th * std::cos(0.5 * th) - std::sin(0.5 * th)) / (th2 * th);
      }
      const double* d = g.data() + 4 * r;
      // w = cos(θ/2): dw/de = -(s/2) e
      // v_i = e_i s: dv_i/de_j = δ_ij s + e_i e_j ds_over_th
      const double dv_dot_e = d[1] * ex[0] + d[2] * ex[1] + d[3] * ex[2];
      for (int j = 0; j < 3; ++j) {
        (*ge)[3 * r + j] += -0.5 * s * ex[j] * d[0] + s * d[1 + j] + dv_dot_e * ex[j] * ds_over_th;
      }
    }
  });
}

namespace {

/// Quaternion with a single non-zero vector component on `axis`.
Var axis_quat(Var c, Var s, Var zero, int axis) {
  std::vector<Var> parts{c, zero, zero, zero};
  parts[static_cast<std::size_t>(axis) + 1] = s;
  return concat(parts);
}

}  // namespace

Var euler_to_quat(Var e, rot::EulerOrder order) {
  require_cols("euler_to_quat", e.value(), 3);
  const Shape out_shape = with_last(e.shape(), 4);
  const std::size_t rows = e.value().rows();
  Var flat = reshape(e, {rows, 3});
  Var half = scale(flat, 0.5);
  Var c = cos(half);
  Var s = sin(half);
  Var zero = e.tape().constant(Tensor({rows, 1}));
  const auto axes = rot::axes_of(order);
  Var q;
  for (std::size_t i = 0; i < 3; ++i) {
    Var qi = axis_quat(slice(c, i, i + 1), slice(s, i, i + 1), zero, axes[i]);
    q = (i == 0) ? qi : qmul(q, qi);
  }
  return reshape(q, out_shape);
}

Var quat_to_euler(Var q, rot::EulerOrder order) {
  require_cols("quat_to_euler", q.value(), 4);
  const Shape out_shape = with_last(q.shape(), 3);
  const std::size_t rows = q.value().rows();
  Var flat = reshape(q, {rows, 4});
  const Var comp[4] = {slice(flat, 0, 1), slice(flat, 1, 2), slice(flat, 2, 3), slice(flat, 3, 4)};
  // comp index: 0 = w, 1 = x, 2 = y, 3 = z. Rotation matrix entries of a unit quaternion.
  auto entry = [&](int a, int b) -> Var {
    const Var& w = comp[0];
    if (a == b) {
      // 1 - 2 (u_b'^2 + u_b''^2) over the two other axes
      const int o1 = (a + 1) % 3 + 1, o2 = (a + 2) % 3 + 1;
      return add_scalar(scale(add(square(comp[o1]), square(comp[o2])), -2.0), 1.0);
    }
    // off-diagonal: 2 (u_a u_b ∓ w u_c), sign + when (a, b) is cyclic
    const int c = 3 - a - b;
    Var uu = mul(comp[a + 1], comp[b + 1]);
    Var wu = mul(w, comp[c + 1]);
    const bool cyclic = (b - a + 3) % 3 == 1;
    return scale(cyclic ? sub(uu, wu) : add(uu, wu), 2.0);
  };
  const auto ax = rot::axes_of(order);
  const int i = ax[0], j = ax[1], k = ax[2];
  const double s = ((j - i + 3) % 3 == 1) ? 1.0 : -1.0;
  Var r_ii = entry(i, i);
  Var r_ij = entry(i, j);
  Var cos_b = sqrt(add(square(r_ii), square(r_ij)));
  Var a2 = atan2(scale(entry(i, k), s), cos_b);
  Var a1 = atan2(scale(entry(j, k), -s), entry(k, k));
  Var a3 = atan2(scale(r_ij, -s), r_ii);
  return reshape(concat({a1, a2, a3}), out_shape);
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t ParameterSet::add(std::string name, Tensor init) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  Tensor grad(init.shape());
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(init), std::move(grad)});
  return entries_.size() - 1;
}

std::size_t ParameterSet::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

bool ParameterSet::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

Binding::Binding(Tape& tape, ParameterSet& params, bool trainable)
    : tape_(&tape), params_(&params) {
  vars_.reserve(params.size());
  for (auto& e : params.entries()) {
    vars_.push_back(trainable ? tape.variable(e.value) : tape.constant(e.value));
  }
}

Binding::Binding(ParameterSet& params, std::vector<Var> vars)
    : tape_(nullptr), params_(&params), vars_(std::move(vars)) {
  if (vars_.size() != params.size() || vars_.empty()) {
    throw ShapeError("binding needs one var per parameter");
  }
  tape_ = &vars_[0].tape();
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i].shape() != params.value(i).shape()) {
      throw ShapeError("binding var for '" + params.entries()[i].name + "' has shape " +
                       shape_string(vars_[i].shape()));
    }
  }
}

void Binding::accumulate_grads() const {
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    const Tensor& g = tape_->grad(vars_[i].id());
    if (g.size() == 0) continue;
    Tensor& dst = params_->grad(i);
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
  }
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult check_gradients(const ScalarFunction& f, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& x : inputs) vars.push_back(tape.variable(x));
    Var out = f(tape, vars);
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(v.grad());
  }

  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& x : xs) vars.push_back(tape.constant(x));
    return f(tape, vars).value().item();
  };

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].size(); ++k) coords.emplace_back(i, k);
  }
  if (options.max_coordinates != 0 && coords.size() > options.max_coordinates) {
    Rng rng(options.seed);
    // partial Fisher-Yates to pick a reproducible subset
    for (std::size_t n = 0; n < options.max_coordinates; ++n) {
      const auto pick = rng.uniform_int(n, coords.size() - 1);
      std::swap(coords[n], coords[pick]);
    }
    coords.resize(options.max_coordinates);
  }

  GradCheckResult result;
  std::vector<Tensor> xs = inputs;
  const double f0 = options.skip_kinks ? evaluate(xs) : 0.0;
  auto rel = [](double x, double y) {
    const double d = std::max(std::abs(x), std::abs(y));
    return d > 0.0 ? std::abs(x - y) / d : 0.0;
  };
  double worst_score = -1.0;
  for (const auto& [i, k] : coords) {
    const double orig = xs[i][k];
    xs[i][k] = orig + options.step;
    const double fp = evaluate(xs);
    xs[i][k] = orig - options.step;
    const double fm = evaluate(xs);
    xs[i][k] = orig;
    const double numeric = (fp - fm) / (2.0 * options.step);
    const double a = analytic[i][k];
    const double abs_err = std::abs(a - numeric);
    const double denom = std::max(std::abs(a), std::abs(numeric));
    const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
    const bool ok = abs_err <= options.atol || rel_err <= options.rtol;
    ++result.checked;
    if (!ok && options.skip_kinks) {
      const double forward = (fp - f0) / options.step;
      const double backward = (f0 - fm) / options.step;
      const bool matches_side = rel(a, forward) <= options.kink_rtol || rel(a, backward) <= options.kink_rtol;
      bool kink = matches_side && rel(forward, backward) > options.kink_rtol;
      if (!kink) {
        const double fine = options.step / 100.0;
        xs[i][k] = orig + fine;
        const double fp2 = evaluate(xs);
        xs[i][k] = orig - fine;
        const double fm2 = evaluate(xs);
        xs[i][k] = orig;
        const double numeric2 = (fp2 - fm2) / (2.0 * fine);
        kink = std::abs(a - numeric2) <= options.atol || rel(a, numeric2) <= options.rtol;
      }
      if (kink) {
        ++result.kinks;
        continue;
      }
    }
    result.max_abs_error = std::max(result.max_abs_error, abs_err);
    if (abs_err > options.atol) result.max_rel_error = std::max(result.max_rel_error, rel_err);
    const double score = ok ? 0.0 : rel_err + 1.0;
    if (!ok) result.passed = false;
    if (score > worst_score || result.worst.empty()) {
      worst_score = score;
      std::ostringstream os;
      os << "input " << i << " coord " << k << ": analytic " << a << " numeric " << numeric;
      result.worst = os.str();
    }
  }
  return result;
}

}  // namespace qmotion::ad
