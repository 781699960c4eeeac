#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tktr::io {

enum class Phase : std::uint8_t { Original, Decomposed, Reconstructed };

const char* to_string(Phase p);
Phase parse_phase(const std::string& s);

struct MetricsRow {
  int epoch = 0;
  double wall_time_s = 0.0;  // cumulative training time at the end of the epoch
  double train_loss = 0.0;
  double test_acc = 0.0;
  std::size_t param_count = 0;
  std::uint64_t flops_est = 0;
  double lr = 0.0;
  Phase phase = Phase::Original;
};

inline constexpr const char* kMetricsHeader = "epoch,wall_time_s,train_loss,test_acc,param_count,flops_est,lr,phase";

std::string format_row(const MetricsRow& r);

/// Appends one row, writing the header first when the file is new or empty, and flushes.
void append_metrics(const std::filesystem::path& path, const MetricsRow& row);

/// Parses a metrics file; throws Format on a bad header or row.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

}  // namespace tktr::io
