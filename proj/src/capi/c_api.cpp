#include "tktr/tktr.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include "tktr/error.hpp"
#include "tktr/exp/config.hpp"
#include "tktr/exp/experiment.hpp"
#include "tktr/exp/plot.hpp"
#include "tktr/io/checkpoint.hpp"
#include "tktr/io/dataset.hpp"
#include "tktr/io/metrics.hpp"
#include "tktr/nn/parallel.hpp"

struct tktr_config {
  tktr::exp::ExperimentConfig cfg;
};

struct tktr_experiment {
  tktr::exp::Experiment exp;
};

struct tktr_checkpoint {
  tktr::io::Checkpoint ckpt;
};

namespace {

thread_local std::string last_error;

tktr_message_fn message_fn = nullptr;
void* message_user = nullptr;

void warn(const std::string& msg) {
  if (message_fn) message_fn(message_user, msg.c_str());
}

tktr_status status_of(tktr::ErrorCode code) {
  using tktr::ErrorCode;
  switch (code) {
    case ErrorCode::InvalidInput: return TKTR_ERR_INVALID_INPUT;
    case ErrorCode::InvalidRank: return TKTR_ERR_INVALID_RANK;
    case ErrorCode::InvalidMode: return TKTR_ERR_INVALID_MODE;
    case ErrorCode::Shape: return TKTR_ERR_SHAPE;
    case ErrorCode::Domain: return TKTR_ERR_DOMAIN;
    case ErrorCode::Graph: return TKTR_ERR_GRAPH;
    case ErrorCode::Format: return TKTR_ERR_FORMAT;
    case ErrorCode::CorruptRecord: return TKTR_ERR_CORRUPT_RECORD;
    case ErrorCode::Consistency: return TKTR_ERR_CONSISTENCY;
    case ErrorCode::Config: return TKTR_ERR_CONFIG;
    case ErrorCode::Io: return TKTR_ERR_IO;
  }
  return TKTR_ERR_INTERNAL;
}

template <class F>
tktr_status guarded(F&& f) {
  last_error.clear();
  try {
    f();
    return TKTR_OK;
  } catch (const tktr::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown error";
  }
  return TKTR_ERR_INTERNAL;
}

#define TKTR_NOT_NULL(p)                                 \
  do {                                                   \
    if (!(p)) {                                          \
      last_error = "argument '" #p "' must not be NULL"; \
      return TKTR_ERR_NULL_ARGUMENT;                     \
    }                                                    \
  } while (0)

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string default_label(const std::filesystem::path& p) {
  const auto parent = p.parent_path().filename();
  return parent.empty() ? p.filename().string() : parent.string();
}

}  // namespace

extern "C" {

const char* tktr_last_error(void) { return last_error.c_str(); }

const char* tktr_status_name(tktr_status status) {
  switch (status) {
    case TKTR_OK: return "ok";
    case TKTR_ERR_NULL_ARGUMENT: return "null argument";
    case TKTR_ERR_INTERNAL: return "internal error";
    default: break;
  }
  if (status >= TKTR_ERR_INVALID_INPUT && status <= TKTR_ERR_IO)
    return tktr::to_string(static_cast<tktr::ErrorCode>(int(status) - 1));
  return "unknown status";
}

const char* tktr_version(void) { return "0.1.0"; }

void tktr_set_message_callback(tktr_message_fn fn, void* user) {
  message_fn = fn;
  message_user = user;
}

void tktr_string_free(char* s) { std::free(s); }

tktr_status tktr_config_load(const char* path, tktr_config** out) {
  TKTR_NOT_NULL(path);
  TKTR_NOT_NULL(out);
  *out = nullptr;
  return guarded([&] { *out = new tktr_config{tktr::exp::load_config(path)}; });
}

tktr_status tktr_config_parse(const char* text, tktr_config** out) {
  TKTR_NOT_NULL(text);
  TKTR_NOT_NULL(out);
  *out = nullptr;
  return guarded([&] { *out = new tktr_config{tktr::exp::parse_config(text)}; });
}

tktr_status tktr_config_set_output_dir(tktr_config* cfg, const char* dir) {
  TKTR_NOT_NULL(cfg);
  TKTR_NOT_NULL(dir);
  return guarded([&] {
    tktr::require(*dir != '\0', tktr::ErrorCode::Config, "output directory must not be empty");
    cfg->cfg.output_dir = dir;
  });
}

tktr_status tktr_config_to_text(const tktr_config* cfg, char** out) {
  TKTR_NOT_NULL(cfg);
  TKTR_NOT_NULL(out);
  return guarded([&] { *out = dup_string(tktr::exp::to_text(cfg->cfg)); });
}

void tktr_config_free(tktr_config* cfg) { delete cfg; }

tktr_status tktr_experiment_create(const tktr_config* cfg, tktr_experiment** out) {
  TKTR_NOT_NULL(cfg);
  TKTR_NOT_NULL(out);
  *out = nullptr;
  return guarded([&] { *out = new tktr_experiment{tktr::exp::Experiment(cfg->cfg)}; });
}

tktr_status tktr_experiment_step(tktr_experiment* exp) {
  TKTR_NOT_NULL(exp);
  return guarded([&] {
    const bool had_decomposition = exp->exp.report().decomposition.has_value();
    exp->exp.step();
    const auto& d = exp->exp.report().decomposition;
    if (!had_decomposition && d && d->decomposed_count() == 0)
      warn("decomposition at epoch " + std::to_string(exp->exp.epoch()) +
           " replaced no layer; training continues with the original model");
  });
}

int tktr_experiment_finished(const tktr_experiment* exp) { return exp ? int(exp->exp.finished()) : 1; }

int tktr_experiment_epoch(const tktr_experiment* exp) { return exp ? exp->exp.epoch() : 0; }

tktr_status tktr_experiment_last_row(const tktr_experiment* exp, tktr_metrics_row* row) {
  TKTR_NOT_NULL(exp);
  TKTR_NOT_NULL(row);
  return guarded([&] {
    const auto& rows = exp->exp.report().rows;
    tktr::require(!rows.empty(), tktr::ErrorCode::InvalidInput, "no epoch has completed yet");
    const auto& r = rows.back();
    *row = {r.epoch, r.wall_time_s, r.train_loss, r.test_acc, r.param_count, r.flops_est, r.lr,
            static_cast<tktr_phase>(r.phase)};
  });
}

tktr_status tktr_experiment_decomposition(const tktr_experiment* exp, char** text) {
  TKTR_NOT_NULL(exp);
  TKTR_NOT_NULL(text);
  return guarded([&] {
    const auto& d = exp->exp.report().decomposition;
    *text = dup_string(d ? tktr::exp::format_decomposition(*d) : std::string());
  });
}

tktr_status tktr_experiment_write_outputs(const tktr_experiment* exp) {
  TKTR_NOT_NULL(exp);
  return guarded([&] {
    exp->exp.write_checkpoint(exp->exp.checkpoint_path());
    exp->exp.write_report(exp->exp.report_path());
  });
}

tktr_status tktr_experiment_fork(const tktr_experiment* exp, const tktr_config* cfg, tktr_experiment** out) {
  TKTR_NOT_NULL(exp);
  TKTR_NOT_NULL(cfg);
  TKTR_NOT_NULL(out);
  *out = nullptr;
  return guarded([&] { *out = new tktr_experiment{exp->exp.fork(cfg->cfg)}; });
}

void tktr_experiment_free(tktr_experiment* exp) { delete exp; }

tktr_status tktr_checkpoint_load(const char* path, tktr_checkpoint** out) {
  TKTR_NOT_NULL(path);
  TKTR_NOT_NULL(out);
  *out = nullptr;
  return guarded([&] { *out = new tktr_checkpoint{tktr::io::load_checkpoint(path)}; });
}

tktr_status tktr_checkpoint_save(const tktr_checkpoint* ckpt, const char* path) {
  TKTR_NOT_NULL(ckpt);
  TKTR_NOT_NULL(path);
  return guarded([&] { tktr::io::save_checkpoint(path, ckpt->ckpt); });
}

uint64_t tktr_checkpoint_param_count(const tktr_checkpoint* ckpt) {
  return ckpt ? ckpt->ckpt.model.param_count() : 0;
}

tktr_status tktr_checkpoint_decompose(tktr_checkpoint* ckpt, const tktr_config* cfg, size_t* decomposed,
                                      char** report) {
  TKTR_NOT_NULL(ckpt);
  return guarded([&] {
    const auto opts = tktr::exp::decompose_options(cfg ? cfg->cfg : tktr::exp::ExperimentConfig{});
    const auto rep = tktr::exp::decompose_model(ckpt->ckpt.model, opts);
    if (rep.decomposed_count() == 0) warn("no layer was decomposed; the model is unchanged");
    if (decomposed) *decomposed = rep.decomposed_count();
    if (report) *report = dup_string(tktr::exp::format_decomposition(rep));
  });
}

tktr_status tktr_checkpoint_reconstruct(tktr_checkpoint* ckpt, size_t* merged) {
  TKTR_NOT_NULL(ckpt);
  return guarded([&] {
    const std::size_t n = tktr::exp::reconstruct_model(ckpt->ckpt.model);
    if (merged) *merged = n;
  });
}

tktr_status tktr_checkpoint_estimate(const tktr_checkpoint* ckpt, const tktr_config* cfg, char** table) {
  TKTR_NOT_NULL(ckpt);
  TKTR_NOT_NULL(table);
  return guarded([&] {
    const auto opts = tktr::exp::decompose_options(cfg ? cfg->cfg : tktr::exp::ExperimentConfig{});
    const auto rows = tktr::exp::estimate_model(ckpt->ckpt.model, opts);
    *table = dup_string(tktr::exp::format_estimate(rows, ckpt->ckpt.model));
  });
}

tktr_status tktr_checkpoint_evaluate(const tktr_checkpoint* ckpt, const tktr_config* cfg, double* accuracy) {
  TKTR_NOT_NULL(ckpt);
  TKTR_NOT_NULL(cfg);
  TKTR_NOT_NULL(accuracy);
  return guarded([&] {
    const auto data = tktr::exp::load_datasets(cfg->cfg);
    tktr::nn::WorkerPool pool(cfg->cfg.threads);
    tktr::nn::Model model = ckpt->ckpt.model;
    *accuracy = tktr::exp::evaluate(model, data->test, &pool).accuracy;
  });
}

void tktr_checkpoint_free(tktr_checkpoint* ckpt) { delete ckpt; }

tktr_status tktr_plot(const char* const* csv_paths, const char* const* labels, size_t count, const char* svg_path) {
  TKTR_NOT_NULL(svg_path);
  if (count > 0) TKTR_NOT_NULL(csv_paths);
  return guarded([&] {
    std::vector<tktr::exp::PlotSeries> series;
    for (size_t i = 0; i < count; ++i) {
      tktr::require(csv_paths[i] != nullptr, tktr::ErrorCode::InvalidInput, "NULL csv path");
      const std::filesystem::path p = csv_paths[i];
      series.push_back({labels && labels[i] ? std::string(labels[i]) : default_label(p), tktr::io::read_metrics(p)});
    }
    const std::string svg = tktr::exp::render_svg(series);
    std::ofstream out(svg_path, std::ios::binary);
    tktr::require(bool(out), tktr::ErrorCode::Io, std::string("cannot write '") + svg_path + "'");
    out << svg;
    out.flush();
    tktr::require(bool(out), tktr::ErrorCode::Io, std::string("error writing '") + svg_path + "'");
  });
}

tktr_status tktr_write_synthetic_cifar10(const char* dir, uint64_t seed) {
  TKTR_NOT_NULL(dir);
  return guarded([&] {
    tktr::io::SyntheticOptions opts;
    opts.seed = seed;
    tktr::io::write_synthetic_cifar10(dir, opts);
  });
}

}  // extern "C"
