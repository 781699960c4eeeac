#pragma once

#include <cstddef>
#include <map>
#include <span>

#include "tktr/nn/layers.hpp"

namespace tktr::nn {

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// v <- momentum * v + (g + weight_decay * w); w <- w - lr * v, per parameter tensor.
template <class T>
void sgd_step(std::span<Param<T>* const> params, double lr, const SgdOptions& opts) {
  const T mu = T(opts.momentum), wd = T(opts.weight_decay), step = T(lr);
  for (Param<T>* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->velocity[i] = mu * p->velocity[i] + (p->grad[i] + wd * p->value[i]);
      p->value[i] -= step * p->velocity[i];
    }
  }
}

/// Piecewise-constant learning rate: the value of the last milestone at or before an epoch.
class LrSchedule {
 public:
  LrSchedule() = default;
  explicit LrSchedule(std::map<int, double> milestones);

  /// Throws Config when no milestone covers `epoch` (0-based).
  double at(int epoch) const;
  const std::map<int, double>& milestones() const { return milestones_; }

 private:
  std::map<int, double> milestones_;
};

}  // namespace tktr::nn
