#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tessera/memory.hpp"

namespace tessera {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

namespace detail {

struct Storage {
  Storage(std::size_t count, Domain domain, DType dtype);
  ~Storage();
  Storage(const Storage&) = delete;
  Storage& operator=(const Storage&) = delete;

  std::vector<float> values;
  Domain domain;
  std::size_t accounted_bytes;
};

using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_output)>;

struct Node {
  const char* name = "";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::shared_ptr<Storage> storage;
  DType dtype = DType::f32;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
  std::shared_ptr<TensorImpl> grad;
};

}  // namespace detail

/// Dense, contiguous, row-major float tensor with reverse-mode autograd.
///
/// Copies are shallow (shared storage). Every op produces a fresh contiguous
/// result; `reshape` and `detach` are the only aliasing views.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, float value);
  static Tensor from_data(const Shape& shape, std::vector<float> values);
  static Tensor scalar(float value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  /// Negative axes count from the back.
  std::int64_t size(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->storage->values.size()); }
  DType dtype() const { return impl_->dtype; }
  Domain domain() const { return impl_->storage->domain; }

  float* data() { return impl_->storage->values.data(); }
  const float* data() const { return impl_->storage->values.data(); }
  std::span<float> values() { return impl_->storage->values; }
  std::span<const float> values() const { return impl_->storage->values; }
  float item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool value = true);
  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  /// Accumulated gradient of a leaf; undefined before the first backward.
  Tensor grad() const;
  void zero_grad();

  /// Same storage, cut from the graph.
  Tensor detach() const;
  /// Deep copy into the current default domain; not recorded in the graph.
  Tensor clone() const;
  /// Differentiable copy into `domain`.
  Tensor to(Domain domain) const;
  /// Differentiable aliasing reshape; one extent may be -1.
  Tensor reshape(Shape shape) const;

  void backward() const;
  void backward(const Tensor& grad_output) const;

  const detail::TensorImpl* id() const noexcept { return impl_.get(); }
  const std::shared_ptr<detail::Node>& grad_fn() const { return impl_->grad_fn; }

  /// Fresh tensor in the current default domain and precision.
  static Tensor empty(const Shape& shape);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor record(Tensor, std::vector<Tensor>, detail::BackwardFn, const char*);
  friend void accumulate_leaf_grad(const Tensor&, const Tensor&);

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Finalizes an op result: rounds to binary16 under fp16 precision and, when
/// grad mode is on and an input requires grad, attaches the backward node.
Tensor record(Tensor out, std::vector<Tensor> inputs, detail::BackwardFn backward,
              const char* name);

// Thread-local execution context.

bool grad_enabled() noexcept;
Domain default_domain() noexcept;
DType default_dtype() noexcept;

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

class DomainGuard {
 public:
  explicit DomainGuard(Domain domain);
  ~DomainGuard();
  DomainGuard(const DomainGuard&) = delete;
  DomainGuard& operator=(const DomainGuard&) = delete;

 private:
  Domain previous_;
};

class PrecisionGuard {
 public:
  explicit PrecisionGuard(DType dtype);
  ~PrecisionGuard();
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  DType previous_;
};

/// Round-to-nearest-even through IEEE binary16.
float round_to_half(float value) noexcept;

}  // namespace tessera
