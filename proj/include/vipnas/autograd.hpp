#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vipnas/tensor.hpp"

// Minimal reverse-mode autodiff over NCHW tensors.
namespace vipnas::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  // Gradient buffer shaped like value, zero-initialised on first use.
  Tensor& grad_buffer();
  bool has_grad() const { return !grad.empty(); }
};

// Graph recording is on by default; NoGradGuard disables it on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad);

// Result node for an op: records parents and the backward closure only when
// recording is enabled and at least one parent needs a gradient.
Var make_result(Tensor value, std::vector<Var> parents,
                std::function<void(Node&)> backward_fn);

// Value copy with no history.
Var detach(const Var& v);

// Seeds d(root)/d(root) = 1 and back-propagates. root must hold one element.
void backward(const Var& root);

// A named trainable tensor.
struct Parameter {
  std::string name;
  Var var;

  Tensor& value() { return var->value; }
  const Tensor& value() const { return var->value; }
};

Parameter make_parameter(std::string name, Tensor value);
// Releases gradient buffers, so has_grad() reports whether a later backward
// pass touched the parameter.
void zero_grad(std::vector<Parameter*>& params);

}  // namespace vipnas::ag
