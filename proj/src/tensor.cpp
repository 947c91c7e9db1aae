#include "cardioseg/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace cardioseg {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace autograd {
namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_node_id{1};
std::string g_fault_op;

}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_fault_injection(std::string op_name) { g_fault_op = std::move(op_name); }
const std::string& fault_injection() { return g_fault_op; }

namespace {

template <typename T>
std::vector<Node<T>*> reachable_nodes(Node<T>* root) {
  std::vector<Node<T>*> out;
  std::unordered_set<Node<T>*> seen{root};
  std::vector<Node<T>*> stack{root};
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    out.push_back(n);
    for (const auto& in : n->inputs) {
      Node<T>* p = in->grad_fn.get();
      if (p && seen.insert(p).second) stack.push_back(p);
    }
  }
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->id < b->id; });
  return out;
}

}  // namespace

template <typename T>
std::vector<TapeEntry> tape_of(const Tensor<T>& root) {
  std::vector<TapeEntry> entries;
  if (!root.defined() || !root.impl()->grad_fn) return entries;
  for (Node<T>* n : reachable_nodes(root.impl()->grad_fn.get())) {
    TapeEntry e{n->id, n->name, {}};
    for (const auto& in : n->inputs)
      if (in->grad_fn) e.input_ids.push_back(in->grad_fn->id);
    entries.push_back(std::move(e));
  }
  return entries;
}

template std::vector<TapeEntry> tape_of(const Tensor<float>&);
template std::vector<TapeEntry> tape_of(const Tensor<double>&);

}  // namespace autograd

// ---------------------------------------------------------------------------
// Tensor members

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
  if (shape.empty() || cardioseg::numel(shape) == 0)
    throw SizeError("tensor shape " + to_string(shape) + " has no elements");
  auto impl = std::make_shared<Impl>();
  impl->data.assign(cardioseg::numel(shape), fill);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape.empty() || cardioseg::numel(shape) == 0)
    throw SizeError("tensor shape " + to_string(shape) + " has no elements");
  if (values.size() != cardioseg::numel(shape))
    throw SizeError("shape " + to_string(shape) + " needs " + std::to_string(cardioseg::numel(shape)) +
                    " values, got " + std::to_string(values.size()));
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
std::size_t Tensor<T>::size(std::size_t axis) const {
  if (axis >= dim()) throw AxisError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return impl_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw TapeError("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::grad_mut() {
  if (impl_->grad.empty()) impl_->grad.assign(numel(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

template <typename T>
void Tensor<T>::backward() const {
  using autograd::Node;
  if (numel() != 1) throw ShapeError("backward() needs a scalar, got shape " + to_string(shape()));
  if (!impl_->grad_fn) {
    if (!impl_->requires_grad)
      throw TapeError("backward() on a tensor that is not attached to a tape");
    if (impl_->grad.empty()) impl_->grad.assign(1, T(0));
    impl_->grad[0] += T(1);
    return;
  }
  auto nodes = autograd::reachable_nodes(impl_->grad_fn.get());
  std::unordered_map<Node<T>*, std::vector<T>> pending;
  pending[impl_->grad_fn.get()] = std::vector<T>{T(1)};
  const std::string& fault = autograd::fault_injection();

  // Leaf contributions are summed per call and added at the end, so repeated
  // calls accumulate exactly.
  std::unordered_map<autograd::TensorImpl<T>*, std::vector<T>> leaf_sums;
  std::vector<autograd::TensorImpl<T>*> leaf_order;

  std::vector<std::span<T>> grad_in;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node<T>* node = *it;
    auto found = pending.find(node);
    if (found == pending.end()) continue;
    std::vector<T> grad_out = std::move(found->second);
    pending.erase(found);

    grad_in.assign(node->inputs.size(), std::span<T>{});
    bool any = false;
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      auto& in = node->inputs[i];
      if (in->grad_fn) {
        auto& buf = pending[in->grad_fn.get()];
        if (buf.empty()) buf.assign(in->data.size(), T(0));
        grad_in[i] = buf;
        any = true;
      } else if (in->requires_grad) {
        auto& buf = leaf_sums[in.get()];
        if (buf.empty()) {
          buf.assign(in->data.size(), T(0));
          leaf_order.push_back(in.get());
        }
        grad_in[i] = buf;
        any = true;
      }
    }
    if (!any) continue;
    if (!fault.empty() && node->name == fault)
      for (auto& g : grad_out) g *= T(1.01);
    node->backward(grad_out, grad_in);
  }
  for (auto* leaf : leaf_order) {
    const auto& contribution = leaf_sums[leaf];
    if (leaf->grad.empty()) leaf->grad.assign(leaf->data.size(), T(0));
    for (std::size_t i = 0; i < contribution.size(); ++i) leaf->grad[i] += contribution[i];
  }
}

template class Tensor<float>;
template class Tensor<double>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::string_view name,
                      const std::vector<Tensor<T>>& inputs, autograd::BackwardFn<T> backward) {
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(data));
  if (!autograd::grad_enabled()) return out;
  bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) {
    return t.requires_grad();
  });
  if (!needs) return out;
  auto node = std::make_shared<autograd::Node<T>>();
  node->id = autograd::g_next_node_id.fetch_add(1);
  node->name = std::string(name);
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl()->grad_fn = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

template Tensor<float> make_result(Shape, std::vector<float>, std::string_view,
                                   const std::vector<Tensor<float>>&, autograd::BackwardFn<float>);
template Tensor<double> make_result(Shape, std::vector<double>, std::string_view,
                                    const std::vector<Tensor<double>>&, autograd::BackwardFn<double>);

// ---------------------------------------------------------------------------
// Elementwise

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw SizeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                    to_string(b.shape()));
}

template <typename T>
void require_finite(const std::vector<T>& v, const char* op) {
  for (T x : v)
    if (!std::isfinite(x)) throw DomainError(std::string(op) + ": non-finite result");
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result<T>(a.shape(), std::move(out), "add", {a, b},
                        [](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (auto& gi : gin)
                            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
                        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result<T>(a.shape(), std::move(out), "sub", {a, b},
                        [](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i];
                          for (std::size_t i = 0; i < gin[1].size(); ++i) gin[1][i] -= g[i];
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(a.shape(), std::move(out), "mul", {a, b},
                        [ai, bi](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] * bi->data[i];
                          for (std::size_t i = 0; i < gin[1].size(); ++i) gin[1][i] += g[i] * ai->data[i];
                        });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "div");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / y[i];
  require_finite(out, "div");
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(a.shape(), std::move(out), "div", {a, b},
                        [ai, bi](std::span<const T> g, std::span<const std::span<T>> gin) {
                          const auto& x = ai->data;
                          const auto& y = bi->data;
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] / y[i];
                          for (std::size_t i = 0; i < gin[1].size(); ++i)
                            gin[1][i] -= g[i] * x[i] / (y[i] * y[i]);
                        });
}

template <typename T>
Tensor<T> pow(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "pow");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(x[i], y[i]);
  require_finite(out, "pow");
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(a.shape(), std::move(out), "pow", {a, b},
                        [ai, bi](std::span<const T> g, std::span<const std::span<T>> gin) {
                          const auto& x = ai->data;
                          const auto& y = bi->data;
                          for (std::size_t i = 0; i < gin[0].size(); ++i)
                            gin[0][i] += g[i] * y[i] * std::pow(x[i], y[i] - T(1));
                          for (std::size_t i = 0; i < gin[1].size(); ++i) {
                            if (x[i] <= T(0))
                              throw DomainError("pow: exponent gradient needs a positive base");
                            gin[1][i] += g[i] * std::pow(x[i], y[i]) * std::log(x[i]);
                          }
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T b) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += b;
  return make_result<T>(a.shape(), std::move(out), "add_scalar", {a},
                        [](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i];
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, T b) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= b;
  return make_result<T>(a.shape(), std::move(out), "mul_scalar", {a},
                        [b](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] * b;
                        });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, T b) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v /= b;
  require_finite(out, "div");
  return make_result<T>(a.shape(), std::move(out), "div_scalar", {a},
                        [b](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] / b;
                        });
}

template <typename T>
Tensor<T> pow(const Tensor<T>& a, T exponent) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(x[i], exponent);
  require_finite(out, "pow");
  auto ai = a.impl();
  return make_result<T>(a.shape(), std::move(out), "pow_scalar", {a},
                        [ai, exponent](std::span<const T> g, std::span<const std::span<T>> gin) {
                          const auto& x = ai->data;
                          for (std::size_t i = 0; i < gin[0].size(); ++i)
                            gin[0][i] += g[i] * exponent * std::pow(x[i], exponent - T(1));
                        });
}

template <typename T>
Tensor<T> rsub(const Tensor<T>& a, T b) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = b - x[i];
  return make_result<T>(a.shape(), std::move(out), "rsub_scalar", {a},
                        [](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] -= g[i];
                        });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -x[i];
  return make_result<T>(a.shape(), std::move(out), "neg", {a},
                        [](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] -= g[i];
                        });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x[i] > T(0))) throw DomainError("log: non-positive argument");
    out[i] = std::log(x[i]);
  }
  auto ai = a.impl();
  return make_result<T>(a.shape(), std::move(out), "log", {a},
                        [ai](std::span<const T> g, std::span<const std::span<T>> gin) {
                          const auto& x = ai->data;
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] / x[i];
                        });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  require_finite(out, "exp");
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_result<T>(a.shape(), std::move(out), "exp", {a},
                        [saved](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] * (*saved)[i];
                        });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  if (lo > hi) throw ParameterError("clamp: lo > hi");
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
  auto ai = a.impl();
  return make_result<T>(a.shape(), std::move(out), "clamp", {a},
                        [ai, lo, hi](std::span<const T> g, std::span<const std::span<T>> gin) {
                          const auto& x = ai->data;
                          for (std::size_t i = 0; i < gin[0].size(); ++i)
                            if (x[i] > lo && x[i] < hi) gin[0][i] += g[i];
                        });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

// Maps every input flat index to the flat index of its reduced output.
struct ReductionPlan {
  Shape out_shape;
  std::vector<std::size_t> out_index;
  std::size_t group_size = 1;
};

ReductionPlan plan_reduction(const Shape& shape, const Axes& axes) {
  std::vector<bool> reduced(shape.size(), false);
  if (!axes || axes->empty()) {
    std::fill(reduced.begin(), reduced.end(), true);
  } else {
    for (auto ax : *axes) {
      if (ax >= shape.size())
        throw AxisError("axis " + std::to_string(ax) + " invalid for shape " + to_string(shape));
      if (reduced[ax]) throw AxisError("axis " + std::to_string(ax) + " listed twice");
      reduced[ax] = true;
    }
  }
  ReductionPlan plan;
  std::vector<std::size_t> out_stride(shape.size(), 0);
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (reduced[d])
      plan.group_size *= shape[d];
    else
      plan.out_shape.push_back(shape[d]);
  }
  std::size_t stride = 1;
  for (std::size_t d = shape.size(); d-- > 0;) {
    if (!reduced[d]) {
      out_stride[d] = stride;
      stride *= shape[d];
    }
  }
  if (plan.out_shape.empty()) plan.out_shape = {1};

  const std::size_t n = numel(shape);
  plan.out_index.resize(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    plan.out_index[i] = off;
    for (std::size_t d = shape.size(); d-- > 0;) {
      ++idx[d];
      off += out_stride[d];
      if (idx[d] < shape[d]) break;
      off -= out_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

}  // namespace

template <typename T>
Tensor<T> sum(const Tensor<T>& a, const Axes& axes) {
  auto plan = std::make_shared<ReductionPlan>(plan_reduction(a.shape(), axes));
  std::vector<T> out(numel(plan->out_shape), T(0));
  auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) out[plan->out_index[i]] += x[i];
  return make_result<T>(plan->out_shape, std::move(out), "sum", {a},
                        [plan](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[plan->out_index[i]];
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, const Axes& axes) {
  auto plan = std::make_shared<ReductionPlan>(plan_reduction(a.shape(), axes));
  std::vector<T> out(numel(plan->out_shape), T(0));
  auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) out[plan->out_index[i]] += x[i];
  const T scale = T(1) / static_cast<T>(plan->group_size);
  for (auto& v : out) v *= scale;
  return make_result<T>(plan->out_shape, std::move(out), "mean", {a},
                        [plan, scale](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i)
                            gin[0][i] += g[plan->out_index[i]] * scale;
                        });
}

template <typename T>
Tensor<T> max(const Tensor<T>& a, const Axes& axes) {
  auto plan = plan_reduction(a.shape(), axes);
  const std::size_t m = numel(plan.out_shape);
  std::vector<T> out(m);
  auto argmax = std::make_shared<std::vector<std::size_t>>(m, static_cast<std::size_t>(-1));
  auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t o = plan.out_index[i];
    auto& best = (*argmax)[o];
    if (best == static_cast<std::size_t>(-1) || x[i] > out[o]) {
      best = i;
      out[o] = x[i];
    }
  }
  return make_result<T>(plan.out_shape, std::move(out), "max", {a},
                        [argmax](std::span<const T> g, std::span<const std::span<T>> gin) {
                          if (gin[0].empty()) return;
                          for (std::size_t o = 0; o < argmax->size(); ++o) gin[0][(*argmax)[o]] += g[o];
                        });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape ops

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  if (a.dim() != 2 || b.dim() != 2) throw SizeError("matmul: operands must be 2-D");
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw SizeError("matmul: inner extents differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  std::vector<T> out(m * n);
  Map(out.data(), m, n).noalias() = CMap(a.data().data(), m, k) * CMap(b.data().data(), k, n);
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>({m, n}, std::move(out), "matmul", {a, b},
                        [ai, bi, m, k, n](std::span<const T> g, std::span<const std::span<T>> gin) {
                          CMap G(g.data(), m, n);
                          if (!gin[0].empty())
                            Map(gin[0].data(), m, k).noalias() += G * CMap(bi->data.data(), k, n).transpose();
                          if (!gin[1].empty())
                            Map(gin[1].data(), k, n).noalias() += CMap(ai->data.data(), m, k).transpose() * G;
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw SizeError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(out), "reshape", {a},
                        [](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i];
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw SizeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw AxisError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) throw SizeError("concat: rank mismatch");
    out_shape[axis] += s[axis];
    s[axis] = first[axis];
    if (s != first) throw SizeError("concat: extents differ off the concat axis");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t row = out_shape[axis] * inner;
  std::vector<T> out(numel(out_shape));
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto src = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + o * widths[p], widths[p], out.begin() + o * row + col);
    col += widths[p];
  }
  return make_result<T>(out_shape, std::move(out), "concat", parts,
                        [widths, outer, row](std::span<const T> g, std::span<const std::span<T>> gin) {
                          std::size_t col = 0;
                          for (std::size_t p = 0; p < gin.size(); ++p) {
                            if (!gin[p].empty())
                              for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t j = 0; j < widths[p]; ++j)
                                  gin[p][o * widths[p] + j] += g[o * row + col + j];
                            col += widths[p];
                          }
                        });
}

#define CARDIOSEG_INSTANTIATE_OPS(T)                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> pow(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> add(const Tensor<T>&, T);                          \
  template Tensor<T> mul(const Tensor<T>&, T);                          \
  template Tensor<T> div(const Tensor<T>&, T);                          \
  template Tensor<T> pow(const Tensor<T>&, T);                          \
  template Tensor<T> rsub(const Tensor<T>&, T);                         \
  template Tensor<T> neg(const Tensor<T>&);                             \
  template Tensor<T> log(const Tensor<T>&);                             \
  template Tensor<T> exp(const Tensor<T>&);                             \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                     \
  template Tensor<T> sum(const Tensor<T>&, const Axes&);                \
  template Tensor<T> mean(const Tensor<T>&, const Axes&);               \
  template Tensor<T> max(const Tensor<T>&, const Axes&);                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                  \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);

CARDIOSEG_INSTANTIATE_OPS(float)
CARDIOSEG_INSTANTIATE_OPS(double)

}  // namespace cardioseg
