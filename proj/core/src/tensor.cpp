#include "tessera/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace tessera {

namespace {
thread_local bool t_grad_enabled = true;
thread_local Domain t_domain = Domain::device;
thread_local DType t_dtype = DType::f32;
}  // namespace

bool grad_enabled() noexcept { return t_grad_enabled; }
Domain default_domain() noexcept { return t_domain; }
DType default_dtype() noexcept { return t_dtype; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(t_grad_enabled) { t_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { t_grad_enabled = previous_; }

DomainGuard::DomainGuard(Domain domain) : previous_(t_domain) { t_domain = domain; }
DomainGuard::~DomainGuard() { t_domain = previous_; }

PrecisionGuard::PrecisionGuard(DType dtype) : previous_(t_dtype) { t_dtype = dtype; }
PrecisionGuard::~PrecisionGuard() { t_dtype = previous_; }

float round_to_half(float value) noexcept {
  return static_cast<float>(Eigen::half(value));
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

Storage::Storage(std::size_t count, Domain d, DType dtype)
    : domain(d), accounted_bytes(count * dtype_size(dtype)) {
  MemoryTracker::instance().allocate(domain, accounted_bytes);
  try {
    values.assign(count, 0.0f);
  } catch (...) {
    MemoryTracker::instance().release(domain, accounted_bytes);
    throw;
  }
}

Storage::~Storage() { MemoryTracker::instance().release(domain, accounted_bytes); }

}  // namespace detail

namespace {

std::shared_ptr<detail::TensorImpl> make_impl(const Shape& shape, Domain domain, DType dtype) {
  for (auto d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + to_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->dtype = dtype;
  impl->storage = std::make_shared<detail::Storage>(static_cast<std::size_t>(numel(shape)), domain, dtype);
  return impl;
}

}  // namespace

Tensor Tensor::empty(const Shape& shape) {
  return Tensor(make_impl(shape, t_domain, t_dtype));
}

Tensor Tensor::zeros(const Shape& shape) { return empty(shape); }

Tensor Tensor::full(const Shape& shape, float value) {
  Tensor t = empty(shape);
  if (t_dtype == DType::f16) value = round_to_half(value);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> values) {
  if (static_cast<std::int64_t>(values.size()) != tessera::numel(shape)) {
    throw std::invalid_argument("from_data: " + std::to_string(values.size()) +
                                " values do not fill shape " + to_string(shape));
  }
  Tensor t = empty(shape);
  if (t_dtype == DType::f16) {
    for (auto& v : values) v = round_to_half(v);
  }
  t.impl_->storage->values = std::move(values);
  return t;
}

Tensor Tensor::scalar(float value) { return full({}, value); }

std::int64_t Tensor::size(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::out_of_range("axis out of range for shape " + to_string(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

float Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() on tensor of shape " + to_string(shape()));
  return data()[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = value;
  return *this;
}

Tensor Tensor::grad() const {
  if (!impl_->grad) return Tensor();
  return Tensor(impl_->grad);
}

void Tensor::zero_grad() { impl_->grad.reset(); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->storage = impl_->storage;
  impl->dtype = impl_->dtype;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = make_impl(impl_->shape, t_domain, impl_->dtype);
  impl->storage->values = impl_->storage->values;
  return Tensor(std::move(impl));
}

Tensor Tensor::to(Domain domain) const {
  auto impl = make_impl(impl_->shape, domain, impl_->dtype);
  impl->storage->values = impl_->storage->values;
  const Domain source = this->domain();
  return record(Tensor(std::move(impl)), {*this},
                [source](const Tensor& g) {
                  DomainGuard guard(source);
                  return std::vector<Tensor>{g.clone()};
                },
                "to_domain");
}

Tensor Tensor::reshape(Shape new_shape) const {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < new_shape.size(); ++i) {
    if (new_shape[i] == -1) {
      if (infer >= 0) throw std::invalid_argument("reshape: more than one -1");
      infer = static_cast<int>(i);
    } else {
      known *= new_shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || numel() % known != 0) {
      throw std::invalid_argument("reshape: cannot infer extent for " + to_string(new_shape));
    }
    new_shape[static_cast<std::size_t>(infer)] = numel() / known;
  }
  if (tessera::numel(new_shape) != numel()) {
    throw std::invalid_argument("reshape: " + to_string(shape()) + " -> " + to_string(new_shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = new_shape;
  impl->storage = impl_->storage;
  impl->dtype = impl_->dtype;
  Tensor out(std::move(impl));
  const Shape original = shape();
  if (!(grad_enabled() && requires_grad())) return out;
  auto node = std::make_shared<detail::Node>();
  node->name = "reshape";
  node->inputs = {*this};
  node->backward = [original](const Tensor& g) { return std::vector<Tensor>{g.reshape(original)}; };
  out.impl_->grad_fn = std::move(node);
  out.impl_->requires_grad = true;
  return out;
}

Tensor record(Tensor out, std::vector<Tensor> inputs, detail::BackwardFn backward, const char* name) {
  if (t_dtype == DType::f16) {
    for (auto& v : out.values()) v = round_to_half(v);
  }
  if (!t_grad_enabled) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  if (!needs) return out;
  auto node = std::make_shared<detail::Node>();
  node->name = name;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl_->grad_fn = std::move(node);
  out.impl_->requires_grad = true;
  return out;
}

namespace {

Tensor add_into_new(const Tensor& a, const Tensor& b) {
  Tensor out = a.clone();
  auto dst = out.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return out;
}

}  // namespace

void accumulate_leaf_grad(const Tensor& leaf, const Tensor& g) {
  auto& slot = leaf.impl_->grad;
  if (!slot) {
    Tensor copy = g.clone().reshape(leaf.shape()).detach();
    slot = copy.impl_;
    return;
  }
  auto dst = slot->storage->values.data();
  auto src = g.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

void Tensor::backward() const {
  if (numel() != 1) throw std::logic_error("backward() without a seed requires a scalar output");
  backward(Tensor::full(shape(), 1.0f));
}

void Tensor::backward(const Tensor& grad_output) const {
  if (!requires_grad()) throw std::logic_error("backward() on a tensor that does not require grad");
  if (grad_output.numel() != numel()) {
    throw std::invalid_argument("backward seed shape " + to_string(grad_output.shape()) +
                                " does not match " + to_string(shape()));
  }
  NoGradGuard no_grad;

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<Tensor> order;
  std::unordered_set<const detail::TensorImpl*> visited;
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(*this, 0);
  visited.insert(id());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto& fn = t.impl_->grad_fn;
    if (fn && next < fn->inputs.size()) {
      const Tensor& in = fn->inputs[next++];
      if (in.defined() && in.requires_grad() && visited.insert(in.id()).second) {
        stack.emplace_back(in, 0);
      }
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  std::unordered_map<const detail::TensorImpl*, Tensor> grads;
  grads.emplace(id(), grad_output.reshape(shape()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& t = *it;
    auto found = grads.find(t.id());
    if (found == grads.end()) continue;
    Tensor g = found->second;
    grads.erase(found);
    const auto& fn = t.impl_->grad_fn;
    if (!fn) {
      if (t.impl_->requires_grad) accumulate_leaf_grad(t, g);
      continue;
    }
    std::vector<Tensor> input_grads = fn->backward(g);
    for (std::size_t i = 0; i < fn->inputs.size() && i < input_grads.size(); ++i) {
      const Tensor& in = fn->inputs[i];
      if (!in.defined() || !in.requires_grad() || !input_grads[i].defined()) continue;
      auto slot = grads.find(in.id());
      if (slot == grads.end()) {
        grads.emplace(in.id(), input_grads[i]);
      } else {
        slot->second = add_into_new(slot->second, input_grads[i]);
      }
    }
  }
}

}  // namespace tessera
