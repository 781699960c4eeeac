#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tktr/exp/config.hpp"
#include "tktr/io/dataset.hpp"
#include "tktr/io/metrics.hpp"
#include "tktr/nn/model.hpp"
#include "tktr/tucker.hpp"

namespace tktr::exp {

/// Outcome for one conv layer of a decomposition pass.
struct LayerDecomposition {
  std::string name;
  ConvSpec spec;
  Extent in, out;
  bool eligible = false;
  std::size_t evbmf_k1 = 0, evbmf_k2 = 0;
  std::optional<tucker::RankPair> ranks;  // set when the layer was replaced
  double m = 0.0, e = 0.0;                // at the EVBMF ranks, when both are nonzero
  std::size_t params_before = 0, params_after = 0;
  std::string note;
};

struct DecompositionReport {
  std::vector<LayerDecomposition> layers;
  std::size_t params_before = 0, params_after = 0;
  double seconds = 0.0;
  std::size_t decomposed_count() const;
};

struct DecomposeOptions {
  tucker::EligibilityPolicy policy;
  std::optional<double> noise_variance;
  tucker::HooiOptions hooi;
};

/// Eligibility and noise settings taken from a run configuration.
DecomposeOptions decompose_options(const ExperimentConfig& cfg);

/// Replaces every eligible conv with its Tucker chain at EVBMF-selected ranks.
DecompositionReport decompose_model(nn::Model& model, const DecomposeOptions& opts);

/// Per-layer table (ranks, m, e, parameter counts) followed by the totals.
std::string format_decomposition(const DecompositionReport& rep);

/// Merges every chain back into a single conv; returns the number merged.
std::size_t reconstruct_model(nn::Model& model);

/// Per-layer compression and speedup figures: chains report their current ranks,
/// plain convs the ranks a decomposition pass would choose.
struct EstimateRow {
  std::string name;
  ConvSpec spec;
  Extent in, out;
  bool decomposed = false;
  bool eligible = false;
  std::optional<tucker::RankPair> ranks;
  double m = 0.0, e = 0.0;
};
std::vector<EstimateRow> estimate_model(const nn::Model& model, const DecomposeOptions& opts);
std::string format_estimate(const std::vector<EstimateRow>& rows, const nn::Model& model);

struct Evaluation {
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
  std::vector<float> logits;  // n x classes, only when requested
};

/// Inference-mode accuracy of `model` on `data`.
Evaluation evaluate(nn::Model& model, const io::Dataset& data, nn::WorkerPool* pool, bool keep_logits = false,
                    std::size_t batch = 256);

/// Agreement between the chain model and its merge at the reconstruction epoch.
struct ReconstructionCheck {
  double accuracy_before = 0.0, accuracy_after = 0.0;
  std::size_t argmax_mismatches = 0;
  double max_logit_rel_diff = 0.0;  // max |a - b| / max |a| over the test set
  std::size_t params_after = 0;
};

struct RunReport {
  std::vector<io::MetricsRow> rows;
  std::vector<double> epoch_train_seconds;  // training passes only
  std::size_t params_original = 0;
  std::optional<DecompositionReport> decomposition;
  std::optional<double> accuracy_before_decompose;
  std::optional<ReconstructionCheck> reconstruction;
  double seconds_original = 0.0, seconds_decomposed = 0.0, seconds_reconstructed = 0.0;
  double seconds_evaluation = 0.0;
};

struct Datasets {
  io::Dataset train, test;
};

/// Loads the configured dataset; a missing directory or file is a Config error.
std::shared_ptr<const Datasets> load_datasets(const ExperimentConfig& cfg);

nn::Model build_model(ModelId id, const nn::FeatureShape& input, std::size_t classes);

/// Epoch-by-epoch decompose-in-training run. Copies are full snapshots, so a
/// run can be forked and continued under a different schedule.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);
  Experiment(ExperimentConfig cfg, std::shared_ptr<const Datasets> data);
  Experiment(Experiment&&) = default;
  Experiment& operator=(Experiment&&) = default;

  const ExperimentConfig& config() const { return cfg_; }
  int epoch() const { return epoch_; }
  bool finished() const { return epoch_ >= cfg_.epochs; }
  io::Phase phase() const { return phase_; }
  const RunReport& report() const { return report_; }
  const nn::Model& model() const { return model_; }
  nn::Model& model() { return model_; }
  const Datasets& data() const { return *data_; }

  /// Trains one epoch, applies the schedule event due at its end, evaluates and
  /// appends a metrics row.
  void step();

  /// Steps to the end, then writes the checkpoint and the JSON report.
  const RunReport& run();

  /// Snapshot continuing under `cfg`, which may differ only in schedule events
  /// still in the future and in output_dir. The metrics rows so far are
  /// rewritten into the new output directory.
  Experiment fork(ExperimentConfig cfg) const;

  std::filesystem::path metrics_path() const { return cfg_.output_dir / "metrics.csv"; }
  std::filesystem::path checkpoint_path() const { return cfg_.output_dir / "final.ckpt"; }
  std::filesystem::path report_path() const { return cfg_.output_dir / "report.json"; }

  void write_checkpoint(const std::filesystem::path& path) const;
  void write_report(const std::filesystem::path& path) const;

 private:
  Experiment(const Experiment&) = default;
  void prepare_output(bool fresh) const;
  double train_epoch(double lr);

  ExperimentConfig cfg_;
  std::shared_ptr<const Datasets> data_;
  std::shared_ptr<nn::WorkerPool> pool_;
  nn::Model model_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
  double wall_time_ = 0.0;
  io::Phase phase_ = io::Phase::Original;
  RunReport report_;
};

/// Training-time MACs of one sample: forward plus backward, taken as three forward passes.
std::uint64_t training_macs_per_sample(const nn::Model& model);

}  // namespace tktr::exp
