#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace tktr::exp {

enum class ModelId : std::uint8_t { VggMini, ConvnetSmall };
enum class DatasetId : std::uint8_t { Cifar10, Mnist };

/// How the wall_time_s column is produced. `modeled` derives epoch time from
/// the MAC count at a fixed rate, which makes the metrics file reproducible.
enum class Timing : std::uint8_t { Measured, Modeled };

struct ExperimentConfig {
  ModelId model = ModelId::VggMini;
  DatasetId dataset = DatasetId::Cifar10;
  std::filesystem::path data_dir = "data/cifar-10-batches-bin";
  std::optional<std::size_t> train_subset = 10000;
  std::optional<std::size_t> test_subset = 2000;
  int epochs = 30;
  std::size_t batch_size = 128;
  std::map<int, double> lr_milestones{{0, 0.1}, {15, 0.01}, {25, 0.001}};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::optional<int> decompose_at;
  std::optional<int> reconstruct_at;
  std::size_t min_channels = 16;
  double min_compression = 1.05;
  std::optional<double> noise_variance;  // empty: estimated by EVBMF
  bool augment = true;
  Timing timing = Timing::Measured;
  double modeled_macs_per_second = 2e10;
  std::filesystem::path output_dir = "runs/default";

  /// Throws Config on schedule violations and out-of-range values.
  void validate() const;
};

/// Flat `key = value` lines; `#` starts a comment. Unknown or repeated keys are errors.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& c);

const char* to_string(ModelId m);
const char* to_string(DatasetId d);
const char* to_string(Timing t);

/// Environment variable that replaces `output_dir` when set and non-empty.
inline constexpr const char* kOutputDirEnv = "TKTR_OUTPUT_DIR";

}  // namespace tktr::exp
