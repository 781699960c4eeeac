// Runs the acceptance checks and prints one PASS/FAIL line per criterion.
//
//   acceptance --unit-tests <path> --work <dir> [--only AC5,AC6]
//
// AC1-AC4 run filtered subsets of the unit-test binary and check their runtime.
// AC5-AC7 run the training experiments. They use CIFAR-10 from
// $TKTR_CIFAR10_DIR when set, otherwise a synthetic set in CIFAR-10 format.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tktr/exp/experiment.hpp"
#include "tktr/exp/plot.hpp"
#include "tktr/io/dataset.hpp"

using namespace tktr;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Number of test cases the filter selects; every pattern is meant to pick exactly one.
std::size_t matched_cases(const std::string& binary, const std::string& filter) {
  const std::string cmd = "'" + binary + "' --count --test-case='" + filter + "' 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return 0;
  std::string text;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe)) text += buf;
  pclose(pipe);
  const std::string key = "current filters: ";
  const auto at = text.find(key);
  return at == std::string::npos ? 0 : std::stoul(text.substr(at + key.size()));
}

Outcome unit_subset(const std::string& binary, const std::string& filter, double budget_s) {
  const std::size_t patterns = 1 + std::size_t(std::count(filter.begin(), filter.end(), ','));
  const std::size_t matched = matched_cases(binary, filter);
  const std::string cmd = "'" + binary + "' --no-intro --test-case='" + filter + "' > /dev/null 2>&1";
  const auto t0 = Clock::now();
  const int rc = std::system(cmd.c_str());
  const double s = seconds_since(t0);
  Outcome o;
  o.pass = rc == 0 && matched == patterns && s < budget_s;
  o.detail = fmt("%zu of %zu test cases found, %s in %.1fs (budget %.0fs)", matched, patterns,
                 rc == 0 ? "passed" : "FAILED", s, budget_s);
  return o;
}

// Tests backing each numeric criterion, as doctest test-case filters.
const char* kAc1 =
    "random 50x30 matrix satisfies*,property: SVD invariants*,fold inverts unfold*,"
    "property: Eckart-Young*,property: full-rank decompose then reconstruct*,"
    "chain and merged conv logits agree*";
const char* kAc2 =
    "conv gradients match finite differences,batchnorm gradients match finite differences,"
    "relu gradients away from the kink,pool gradients match finite differences,"
    "linear forward and gradients,softmax cross-entropy value and gradient,"
    "model input gradient matches finite differences*";
const char* kAc3 = "rank-10 signal is recovered*,pure noise gives rank 0*,golden-section noise variance agrees*";
const char* kAc4 = "compression of a 256->256 3x3 conv*,property: m is the exact ratio*";

fs::path dataset_dir(const fs::path& work) {
  if (const char* env = std::getenv("TKTR_CIFAR10_DIR"); env && *env) return env;
  const fs::path dir = work / "synthetic-cifar10";
  if (!fs::exists(dir / "test_batch.bin")) io::write_synthetic_cifar10(dir);
  return dir;
}

void print_row(const char* tag, const io::MetricsRow& r) {
  std::printf("  %s epoch %2d  time %8.1fs  loss %.4f  acc %.4f  params %8zu  %s\n", tag, r.epoch, r.wall_time_s,
              r.train_loss, r.test_acc, r.param_count, io::to_string(r.phase));
  std::fflush(stdout);
}

struct DeskRuns {
  exp::RunReport decomposed, baseline;
  double seconds = 0.0;
};

// Run D decomposes at epoch 5 and reconstructs at 25. The undecomposed
// baseline B is forked from D after epoch 4, so both share epochs 1-4.
DeskRuns desk_runs(const fs::path& work, const fs::path& data) {
  const auto t0 = Clock::now();
  exp::ExperimentConfig cfg;
  cfg.model = exp::ModelId::VggMini;
  cfg.data_dir = data;
  cfg.train_subset = 10000;
  cfg.epochs = 30;
  cfg.batch_size = 128;
  cfg.seed = 1;
  cfg.decompose_at = 5;
  cfg.reconstruct_at = 25;
  cfg.timing = exp::Timing::Measured;
  cfg.output_dir = work / "desk-decompose-at-5";

  exp::Experiment d(cfg);
  while (d.epoch() < 4) {
    d.step();
    print_row("D", d.report().rows.back());
  }
  auto base_cfg = cfg;
  base_cfg.decompose_at.reset();
  base_cfg.reconstruct_at.reset();
  base_cfg.output_dir = work / "desk-baseline";
  exp::Experiment b = d.fork(base_cfg);

  while (!d.finished()) {
    d.step();
    print_row("D", d.report().rows.back());
  }
  d.write_checkpoint(d.checkpoint_path());
  d.write_report(d.report_path());
  while (!b.finished()) {
    b.step();
    print_row("B", b.report().rows.back());
  }
  b.write_checkpoint(b.checkpoint_path());
  b.write_report(b.report_path());

  std::ofstream(work / "desk-accuracy.svg")
      << exp::render_svg({{"decompose@5", d.report().rows}, {"baseline", b.report().rows}});
  return {d.report(), b.report(), seconds_since(t0)};
}

std::vector<Outcome> ac5(const DeskRuns& runs) {
  const auto& d = runs.decomposed;
  const auto& b = runs.baseline;
  std::vector<Outcome> out(4);
  if (d.rows.size() != 30 || b.rows.size() != 30 || !d.accuracy_before_decompose) {
    for (auto& o : out) o.detail = "runs incomplete";
    return out;
  }

  // (a) Accuracy right after decomposition against the accuracy just before
  // it, then recovery to that level within five epochs of training.
  const double before = *d.accuracy_before_decompose;
  const double after = d.rows[4].test_acc;
  int recovered = 0;
  for (int e = 6; e <= 10 && !recovered; ++e)
    if (d.rows[std::size_t(e - 1)].test_acc >= before) recovered = e;
  out[0].pass = before - after >= 0.01 && recovered;
  out[0].detail = fmt("acc %.4f before decomposition, %.4f after (dip %.2f points), %s", before, after,
                      100 * (before - after),
                      recovered ? fmt("back to %.4f at epoch %d", d.rows[std::size_t(recovered - 1)].test_acc,
                                      recovered).c_str()
                                : "not recovered by epoch 10");

  // (b) Mean training time per epoch, epochs 6-30 against 1-5.
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < 5; ++i) early += d.epoch_train_seconds[i];
  for (std::size_t i = 5; i < 30; ++i) late += d.epoch_train_seconds[i];
  early /= 5.0;
  late /= 25.0;
  out[1].pass = late <= 0.75 * early;
  out[1].detail = fmt("mean epoch %.1fs for 1-5, %.1fs for 6-30 (ratio %.3f, limit 0.75)", early, late, late / early);

  // (c) Final accuracy against the baseline.
  const double gap = b.rows.back().test_acc - d.rows.back().test_acc;
  out[2].pass = gap <= 0.05;
  out[2].detail = fmt("final acc %.4f vs baseline %.4f (gap %.2f points, limit 5)", d.rows.back().test_acc,
                      b.rows.back().test_acc, 100 * gap);

  // (d) Parameter reduction while decomposed.
  const double ratio = double(d.params_original) / double(d.rows[5].param_count);
  out[3].pass = ratio >= 3.0;
  out[3].detail = fmt("params %zu -> %zu (%.2fx, limit 3x)", d.params_original, d.rows[5].param_count, ratio);
  return out;
}

Outcome ac6(const DeskRuns& runs) {
  const auto& d = runs.decomposed;
  Outcome o;
  if (!d.reconstruction || d.rows.size() != 30) {
    o.detail = "no reconstruction recorded";
    return o;
  }
  const auto& c = *d.reconstruction;
  o.pass = c.argmax_mismatches == 0 && c.max_logit_rel_diff <= 1e-4 && c.accuracy_before == c.accuracy_after &&
           d.rows.back().param_count == d.params_original && d.rows[24].test_acc == c.accuracy_after;
  o.detail = fmt("epoch 25: %zu argmax changes, logit rel diff %.2e, acc %.4f -> %.4f; final params %zu (original %zu)",
                 c.argmax_mismatches, c.max_logit_rel_diff, c.accuracy_before, c.accuracy_after,
                 d.rows.back().param_count, d.params_original);
  return o;
}

// Identical config and seed under different worker counts, modeled timing.
Outcome ac7(const fs::path& work, const fs::path& data) {
  std::vector<std::string> csvs;
  for (std::size_t threads : {1, 4, 1}) {
    exp::ExperimentConfig cfg;
    cfg.model = exp::ModelId::VggMini;
    cfg.data_dir = data;
    cfg.train_subset = 1000;
    cfg.test_subset = 500;
    cfg.epochs = 4;
    cfg.batch_size = 64;
    cfg.lr_milestones = {{0, 0.05}, {3, 0.005}};
    cfg.seed = 7;
    cfg.decompose_at = 1;
    cfg.reconstruct_at = 3;
    cfg.threads = threads;
    cfg.timing = exp::Timing::Modeled;
    cfg.output_dir = work / ("determinism-" + std::to_string(csvs.size()) + "-threads-" + std::to_string(threads));
    exp::Experiment e(cfg);
    e.run();
    csvs.push_back(slurp(e.metrics_path()));
  }
  Outcome o;
  o.pass = !csvs[0].empty() && csvs[0] == csvs[1] && csvs[0] == csvs[2];
  o.detail = fmt("metrics CSVs for 1, 4 and 1 workers %s (%zu bytes)", o.pass ? "byte-identical" : "DIFFER",
                 csvs[0].size());
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string unit_tests, only;
  fs::path work = "acceptance";
  app.add_option("--unit-tests", unit_tests, "Path of the unit-test binary")->required();
  app.add_option("--work", work, "Directory for data and run outputs");
  app.add_option("--only", only, "Comma-separated criteria to run, e.g. AC5,AC7");
  CLI11_PARSE(app, argc, argv);

  std::set<std::string> selected;
  for (std::stringstream ss(only); std::getline(ss, only, ',');) selected.insert(only);
  auto wanted = [&](const char* id) { return selected.empty() || selected.count(id); };
  fs::create_directories(work);

  std::vector<std::pair<std::string, Outcome>> results;
  auto report = [&](const std::string& id, const Outcome& o) {
    results.emplace_back(id, o);
    std::printf("%s %s  %s\n", id.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  };
  auto guarded = [&](const std::string& id, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, {false, std::string("error: ") + e.what()});
    }
  };

  if (wanted("AC1")) report("AC1", unit_subset(unit_tests, kAc1, 120));
  if (wanted("AC2")) report("AC2", unit_subset(unit_tests, kAc2, 300));
  if (wanted("AC3")) report("AC3", unit_subset(unit_tests, kAc3, 60));
  if (wanted("AC4")) report("AC4", unit_subset(unit_tests, kAc4, 60));

  fs::path data;
  guarded("data", [&] { data = dataset_dir(work); });
  if (!data.empty()) {
    if (wanted("AC7")) guarded("AC7", [&] { report("AC7", ac7(work, data)); });
    if (wanted("AC5") || wanted("AC6"))
      guarded("AC5", [&] {
        const auto runs = desk_runs(work, data);
        const auto five = ac5(runs);
        const char* parts[] = {"AC5a", "AC5b", "AC5c", "AC5d"};
        for (std::size_t i = 0; i < 4; ++i) report(parts[i], five[i]);
        bool all = true;
        for (const auto& o : five) all = all && o.pass;
        report("AC5", {all && runs.seconds <= 7200.0,
                       fmt("desk runs took %.1f min (budget 120 min)", runs.seconds / 60.0)});
        report("AC6", ac6(runs));
      });
  }

  std::size_t failed = 0;
  for (const auto& [id, o] : results) failed += !o.pass;
  std::printf("%zu of %zu checks passed\n", results.size() - failed, results.size());
  return failed == 0 ? 0 : 1;
}
