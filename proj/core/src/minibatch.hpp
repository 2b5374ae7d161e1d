#pragma once

#include <algorithm>
#include <vector>

#include "tessera/ops.hpp"
#include "tessera/tensor.hpp"

namespace tessera::detail {

/// Gathers per-mini-batch results along axis 0 into `domain`. Without grad
/// the result is preallocated and filled in place, so only one mini-batch of
/// transients is alive at a time; with grad the pieces are moved to `domain`
/// and concatenated so the graph stays intact.
class Collector {
 public:
  Collector(Domain domain, Shape shape) : domain_(domain), shape_(std::move(shape)), tracking_(grad_enabled()) {
    if (!tracking_) {
      DomainGuard guard(domain_);
      out_ = Tensor::empty(shape_);
    }
  }

  void append(const Tensor& piece) {
    if (tracking_) {
      pieces_.push_back(piece.domain() == domain_ ? piece : piece.to(domain_));
      return;
    }
    auto src = piece.values();
    if (offset_ + src.size() > out_.values().size()) throw std::logic_error("collector overflow");
    std::copy(src.begin(), src.end(), out_.data() + offset_);
    offset_ += src.size();
  }

  Tensor finish() {
    if (!tracking_) return out_;
    DomainGuard guard(domain_);
    Tensor all = pieces_.size() == 1 ? pieces_.front() : ops::concat(pieces_, 0);
    pieces_.clear();
    return all;
  }

 private:
  Domain domain_;
  Shape shape_;
  bool tracking_;
  Tensor out_;
  std::size_t offset_ = 0;
  std::vector<Tensor> pieces_;
};

}  // namespace tessera::detail
