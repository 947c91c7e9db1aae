#pragma once

// Dense N-dimensional tensor with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage; copying a handle aliases the
// same data (as in most autograd engines). Every differentiable op records a
// node holding its inputs and a backward rule. Node ids are drawn from a
// monotonically increasing counter, so sorting reachable nodes by id gives a
// valid topological order for the reverse sweep.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cardioseg/errors.hpp"

namespace cardioseg {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Tensor;

namespace autograd {

template <typename T>
struct Node;

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node<T>> grad_fn;
};

/// Backward rule: accumulate (+=) the input gradients given the output
/// gradient. `grad_in[i]` is empty when input i does not need a gradient.
template <typename T>
using BackwardFn =
    std::function<void(std::span<const T> grad_out, std::span<const std::span<T>> grad_in)>;

template <typename T>
struct Node {
  std::uint64_t id = 0;
  std::string name;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  BackwardFn<T> backward;
};

/// One recorded operation as seen from a loss; `input_ids` lists the ids of
/// producing nodes (leaf inputs are omitted).
struct TapeEntry {
  std::uint64_t id;
  std::string name;
  std::vector<std::uint64_t> input_ids;
};

/// Operations reachable from `root`, in topological (ascending id) order.
template <typename T>
std::vector<TapeEntry> tape_of(const Tensor<T>& root);

bool grad_enabled() noexcept;

/// Disables recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Test hook: while set, every backward rule of the named op receives a
/// gradient scaled by 1.01. Empty string clears it.
void set_fault_injection(std::string op_name);
const std::string& fault_injection();

}  // namespace autograd

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Impl = autograd::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor full(Shape shape, T fill, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(1), requires_grad);
  }
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  /// In-place access for optimizers and initializers; bypasses the tape.
  std::span<T> data_mut() { return impl_->data; }
  T item() const;
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> grad_mut();
  void zero_grad();

  /// Fresh storage, no grad history.
  Tensor clone() const;
  /// Shares nothing with the tape; copies the values.
  Tensor detach() const { return clone(); }

  void backward() const;

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
void backward(const Tensor<T>& loss) {
  loss.backward();
}

template <typename T>
void zero_grads(std::span<Tensor<T>> params) {
  for (auto& p : params) p.zero_grad();
}

template <typename T>
void zero_grads(std::vector<Tensor<T>>& params) {
  zero_grads(std::span<Tensor<T>>(params));
}

/// Builds an op result and, when recording is on and any input needs a
/// gradient, attaches a node with `backward`.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::string_view name,
                      const std::vector<Tensor<T>>& inputs, autograd::BackwardFn<T> backward);

// Elementwise ops. Binary ops require equal shapes; the scalar overloads are
// the only broadcasting supported.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> pow(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(const Tensor<T>& a, T b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, T b);
template <typename T> Tensor<T> div(const Tensor<T>& a, T b);
template <typename T> Tensor<T> pow(const Tensor<T>& a, T exponent);
/// b - a
template <typename T> Tensor<T> rsub(const Tensor<T>& a, T b);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
/// Gradient passes where lo < a < hi, and is zero where a is clamped.
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

/// Reductions. `axes == nullopt` or an empty list reduces everything to a
/// single-element tensor of shape [1]; otherwise the listed axes are removed.
using Axes = std::optional<std::vector<std::size_t>>;
template <typename T> Tensor<T> sum(const Tensor<T>& a, const Axes& axes = std::nullopt);
template <typename T> Tensor<T> mean(const Tensor<T>& a, const Axes& axes = std::nullopt);
/// Gradient goes to the first maximal element of each reduced group.
template <typename T> Tensor<T> max(const Tensor<T>& a, const Axes& axes = std::nullopt);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& a) {
  std::vector<To> out(a.data().begin(), a.data().end());
  return Tensor<To>::from(a.shape(), std::move(out));
}

}  // namespace cardioseg
