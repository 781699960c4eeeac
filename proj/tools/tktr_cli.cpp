#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tktr/tktr.h"

namespace {

constexpr const char* kOutputDirEnv = "TKTR_OUTPUT_DIR";

enum Exit { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3 };

int exit_code(tktr_status s) {
  switch (s) {
    case TKTR_OK: return kOk;
    case TKTR_ERR_CONFIG:
    case TKTR_ERR_NULL_ARGUMENT: return kConfigError;
    case TKTR_ERR_FORMAT:
    case TKTR_ERR_CORRUPT_RECORD:
    case TKTR_ERR_CONSISTENCY:
    case TKTR_ERR_SHAPE:
    case TKTR_ERR_IO: return kDataError;
    default: return kFailure;
  }
}

// Thrown out of a subcommand once the failure has been reported.
struct Failed {
  int code;
};

void check(tktr_status s) {
  if (s == TKTR_OK) return;
  std::fprintf(stderr, "error (%s): %s\n", tktr_status_name(s), tktr_last_error());
  throw Failed{exit_code(s)};
}

void print_warning(void*, const char* msg) { std::fprintf(stderr, "warning: %s\n", msg); }

std::string take(char* s) {
  std::string out = s ? s : "";
  tktr_string_free(s);
  return out;
}

const char* phase_name(tktr_phase p) {
  return p == TKTR_PHASE_ORIGINAL ? "original" : p == TKTR_PHASE_DECOMPOSED ? "decomposed" : "reconstructed";
}

struct Config {
  tktr_config* p = nullptr;
  ~Config() { tktr_config_free(p); }
};
struct Experiment {
  tktr_experiment* p = nullptr;
  ~Experiment() { tktr_experiment_free(p); }
};
struct Checkpoint {
  tktr_checkpoint* p = nullptr;
  ~Checkpoint() { tktr_checkpoint_free(p); }
};

void load_optional_config(const std::string& path, Config& cfg) {
  if (!path.empty()) check(tktr_config_load(path.c_str(), &cfg.p));
}

void cmd_train(const std::string& config_path) {
  Config cfg;
  check(tktr_config_load(config_path.c_str(), &cfg.p));
  if (const char* dir = std::getenv(kOutputDirEnv); dir && *dir) check(tktr_config_set_output_dir(cfg.p, dir));
  Experiment exp;
  check(tktr_experiment_create(cfg.p, &exp.p));
  bool reported = false;
  while (!tktr_experiment_finished(exp.p)) {
    check(tktr_experiment_step(exp.p));
    tktr_metrics_row r;
    check(tktr_experiment_last_row(exp.p, &r));
    std::printf("epoch %3d  time %9.1fs  loss %.4f  acc %.4f  params %9llu  lr %-7g %s\n", r.epoch, r.wall_time_s,
                r.train_loss, r.test_acc, static_cast<unsigned long long>(r.param_count), r.lr, phase_name(r.phase));
    if (!reported) {
      char* text = nullptr;
      check(tktr_experiment_decomposition(exp.p, &text));
      const std::string table = take(text);
      if (!table.empty()) {
        std::printf("%s", table.c_str());
        reported = true;
      }
    }
    std::fflush(stdout);
  }
  check(tktr_experiment_write_outputs(exp.p));
}

void cmd_decompose(const std::string& in, const std::string& out, const std::string& config_path) {
  Config cfg;
  load_optional_config(config_path, cfg);
  Checkpoint ckpt;
  check(tktr_checkpoint_load(in.c_str(), &ckpt.p));
  std::size_t count = 0;
  char* report = nullptr;
  check(tktr_checkpoint_decompose(ckpt.p, cfg.p, &count, &report));
  std::printf("%s", take(report).c_str());
  check(tktr_checkpoint_save(ckpt.p, out.c_str()));
}

void cmd_evaluate(const std::string& ckpt_path, const std::string& config_path) {
  Config cfg;
  check(tktr_config_load(config_path.c_str(), &cfg.p));
  Checkpoint ckpt;
  check(tktr_checkpoint_load(ckpt_path.c_str(), &ckpt.p));
  double acc = 0.0;
  check(tktr_checkpoint_evaluate(ckpt.p, cfg.p, &acc));
  std::printf("test accuracy %.6f  params %llu\n", acc,
              static_cast<unsigned long long>(tktr_checkpoint_param_count(ckpt.p)));
}

void cmd_estimate(const std::string& ckpt_path, const std::string& config_path) {
  Config cfg;
  load_optional_config(config_path, cfg);
  Checkpoint ckpt;
  check(tktr_checkpoint_load(ckpt_path.c_str(), &ckpt.p));
  char* table = nullptr;
  check(tktr_checkpoint_estimate(ckpt.p, cfg.p, &table));
  std::printf("%s", take(table).c_str());
}

void cmd_plot(std::vector<std::string> args) {
  const std::string svg = args.back();
  args.pop_back();
  std::vector<const char*> paths;
  for (const auto& a : args) paths.push_back(a.c_str());
  check(tktr_plot(paths.data(), nullptr, paths.size(), svg.c_str()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tucker decompose-in-training experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tktr_version());

  std::string config_path, ckpt_in, ckpt_out, opt_config, dir;
  std::vector<std::string> plot_args;
  std::uint64_t seed = 1;

  auto* train = app.add_subcommand("train", "Run an experiment described by a config file");
  train->add_option("config", config_path, "Config file")->required();

  auto* decompose = app.add_subcommand("decompose", "Tucker-decompose every eligible conv of a checkpoint");
  decompose->add_option("ckpt_in", ckpt_in, "Input checkpoint")->required();
  decompose->add_option("ckpt_out", ckpt_out, "Output checkpoint")->required();
  decompose->add_option("--config", opt_config, "Config file supplying eligibility settings");

  auto* evaluate = app.add_subcommand("evaluate", "Test accuracy of a checkpoint");
  evaluate->add_option("ckpt", ckpt_in, "Checkpoint")->required();
  evaluate->add_option("config", config_path, "Config file naming the data set")->required();

  auto* estimate = app.add_subcommand("estimate", "Per-layer compression and speedup table");
  estimate->add_option("ckpt", ckpt_in, "Checkpoint")->required();
  estimate->add_option("--config", opt_config, "Config file supplying eligibility settings");

  auto* plot = app.add_subcommand("plot", "Chart test accuracy against wall time");
  plot->add_option("files", plot_args, "Metrics CSVs followed by the output SVG")->required()->expected(2, -1);

  auto* synth = app.add_subcommand("synth-cifar", "Write a synthetic data set in CIFAR-10 binary format");
  synth->add_option("dir", dir, "Output directory")->required();
  synth->add_option("--seed", seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  tktr_set_message_callback(print_warning, nullptr);
  try {
    if (*train) cmd_train(config_path);
    else if (*decompose) cmd_decompose(ckpt_in, ckpt_out, opt_config);
    else if (*evaluate) cmd_evaluate(ckpt_in, config_path);
    else if (*estimate) cmd_estimate(ckpt_in, opt_config);
    else if (*plot) cmd_plot(plot_args);
    else if (*synth) check(tktr_write_synthetic_cifar10(dir.c_str(), seed));
  } catch (const Failed& f) {
    return f.code;
  }
  return kOk;
}
