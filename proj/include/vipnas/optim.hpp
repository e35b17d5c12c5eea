#pragma once

#include <vector>

#include "vipnas/autograd.hpp"

namespace vipnas {

class Adam {
 public:
  explicit Adam(std::vector<ag::Parameter*> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  // Updates every parameter that received a gradient, then releases the gradients.
  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  int steps() const { return t_; }

 private:
  std::vector<ag::Parameter*> params_;
  std::vector<Tensor> m_, v_;
  std::vector<int> updates_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

// Multiplies the base rate by gamma at each milestone (fraction of total steps).
double step_decay_lr(double base, int step, int total_steps, const std::vector<double>& milestones,
                     double gamma = 0.1);

}  // namespace vipnas
