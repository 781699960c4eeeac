#include "tktr/nn/optimizer.hpp"

#include <string>

#include "tktr/error.hpp"

namespace tktr::nn {

LrSchedule::LrSchedule(std::map<int, double> milestones) : milestones_(std::move(milestones)) {
  require(!milestones_.empty(), ErrorCode::Config, "learning-rate schedule needs at least one milestone");
  for (const auto& [epoch, lr] : milestones_)
    require(epoch >= 0 && lr > 0.0, ErrorCode::Config, "learning-rate milestones need epoch >= 0 and lr > 0");
}

double LrSchedule::at(int epoch) const {
  auto it = milestones_.upper_bound(epoch);
  require(it != milestones_.begin(), ErrorCode::Config, "no learning rate defined for epoch " + std::to_string(epoch));
  return std::prev(it)->second;
}

}  // namespace tktr::nn
