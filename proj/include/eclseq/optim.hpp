#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "eclseq/tensor.hpp"

namespace eclseq {

// Named parameter set. Map (not unordered) so iteration order — and therefore
// update order and checkpoint layout — is stable across runs.
using ParamMap = std::map<std::string, Tensor>;

// Adam with bias correction. Moment state is kept per parameter name; the
// timestep advances on every step() even when a gradient is all zero. Note a
// zero gradient still moves a parameter once its moments are nonzero, so
// freezing must go through the trainable predicate, not through zeroed grads.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies one update to every parameter for which `trainable` returns true
  // (all of them when the predicate is empty). Skipped parameters keep their
  // values AND their moment state untouched.
  void step(ParamMap& params, const std::function<bool(const std::string&)>& trainable = {});

  void zero_grad(ParamMap& params) const;

  double lr() const { return lr_; }
  void set_lr(double lr);

 private:
  struct Moments {
    std::vector<double> m, v;
    size_t t = 0;
  };
  double lr_, beta1_, beta2_, eps_;
  std::map<std::string, Moments> state_;
};

}  // namespace eclseq
