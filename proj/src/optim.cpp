#include "vipnas/optim.hpp"

#include <cmath>

namespace vipnas {

Adam::Adam(std::vector<ag::Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.emplace_back(p->value().shape());
    v_.emplace_back(p->value().shape());
  }
  updates_.assign(params_.size(), 0);
}

void Adam::step() {
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Node& node = *params_[i]->var;
    if (!node.has_grad()) continue;
    const int k = ++updates_[i];
    const double c1 = 1.0 - std::pow(beta1_, k), c2 = 1.0 - std::pow(beta2_, k);
    float* w = node.value.data();
    const float* g = node.grad.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (std::size_t j = 0; j < node.value.numel(); ++j) {
      m[j] = float(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
      v[j] = float(beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j]);
      w[j] -= float(lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_));
    }
  }
  ag::zero_grad(params_);
}

double step_decay_lr(double base, int step, int total_steps, const std::vector<double>& milestones,
                     double gamma) {
  double lr = base;
  for (double m : milestones)
    if (step >= static_cast<int>(m * total_steps)) lr *= gamma;
  return lr;
}

}  // namespace vipnas
