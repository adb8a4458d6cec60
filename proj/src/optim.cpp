#include "eclseq/optim.hpp"

#include <cmath>

namespace eclseq {

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw TensorError("adam: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw TensorError("adam: betas must lie in [0,1)");
}

void Adam::set_lr(double lr) {
  if (!(lr > 0.0)) throw TensorError("adam: lr must be > 0");
  lr_ = lr;
}

void Adam::step(ParamMap& params, const std::function<bool(const std::string&)>& trainable) {
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    if (trainable && !trainable(name)) continue;
    auto& st = state_[name];
    const size_t n = p.numel();
    if (st.m.empty()) {
      st.m.assign(n, 0.0);
      st.v.assign(n, 0.0);
    } else if (st.m.size() != n) {
      throw TensorError("adam: state shape mismatch for parameter '" + name + "'");
    }
    st.t += 1;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(st.t));
    const auto& g = p.grad();
    auto& d = p.data();
    for (size_t i = 0; i < n; ++i) {
      st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g[i];
      st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      d[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad(ParamMap& params) const {
  for (auto& [name, p] : params) {
    (void)name;
    p.zero_grad();
  }
}

}  // namespace eclseq
