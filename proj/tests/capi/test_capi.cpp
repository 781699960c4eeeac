#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "support/temp_dir.hpp"
#include "tktr/tktr.h"

using tktr::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string take(char* s) {
  std::string out = s ? s : "";
  tktr_string_free(s);
  return out;
}

std::vector<std::string> messages;
void collect(void* user, const char* msg) {
  CHECK(user == &messages);
  messages.emplace_back(msg);
}

}  // namespace

TEST_CASE("status names and null arguments") {
  CHECK(std::string(tktr_status_name(TKTR_OK)) == "ok");
  CHECK(std::string(tktr_status_name(TKTR_ERR_CONFIG)).find("config") != std::string::npos);
  CHECK(std::string(tktr_status_name(TKTR_ERR_FORMAT)).find("format") != std::string::npos);
  CHECK(std::strlen(tktr_version()) > 0);

  tktr_config* cfg = nullptr;
  CHECK(tktr_config_parse(nullptr, &cfg) == TKTR_ERR_NULL_ARGUMENT);
  CHECK(std::strlen(tktr_last_error()) > 0);
  CHECK(tktr_experiment_step(nullptr) == TKTR_ERR_NULL_ARGUMENT);
  CHECK(tktr_checkpoint_load(nullptr, nullptr) == TKTR_ERR_NULL_ARGUMENT);
  tktr_config_free(nullptr);
  tktr_experiment_free(nullptr);
  tktr_checkpoint_free(nullptr);
}

TEST_CASE("configuration errors carry a message and clear on success") {
  tktr_config* cfg = nullptr;
  CHECK(tktr_config_parse("epochs = zero\n", &cfg) == TKTR_ERR_CONFIG);
  CHECK(cfg == nullptr);
  CHECK(std::string(tktr_last_error()).find("epochs") != std::string::npos);

  REQUIRE(tktr_config_parse("epochs = 4\nseed = 2\n", &cfg) == TKTR_OK);
  CHECK(std::string(tktr_last_error()).empty());
  CHECK(tktr_config_set_output_dir(cfg, "") == TKTR_ERR_CONFIG);
  CHECK(tktr_config_set_output_dir(cfg, "elsewhere") == TKTR_OK);
  char* text = nullptr;
  REQUIRE(tktr_config_to_text(cfg, &text) == TKTR_OK);
  const std::string t = take(text);
  CHECK(t.find("epochs = 4\n") != std::string::npos);
  CHECK(t.find("output_dir = elsewhere\n") != std::string::npos);
  tktr_config_free(cfg);

  CHECK(tktr_config_load("/definitely/not/here.cfg", &cfg) == TKTR_ERR_CONFIG);
}

TEST_CASE("missing data set is a configuration error at creation") {
  TempDir dir;
  tktr_config* cfg = nullptr;
  const std::string text = "data_dir = " + (dir.path / "none").string() + "\noutput_dir = " +
                           (dir.path / "out").string() + "\n";
  REQUIRE(tktr_config_parse(text.c_str(), &cfg) == TKTR_OK);
  tktr_experiment* exp = nullptr;
  CHECK(tktr_experiment_create(cfg, &exp) == TKTR_ERR_CONFIG);
  CHECK(exp == nullptr);
  tktr_config_free(cfg);
}

TEST_CASE("bad files map to format and io errors") {
  TempDir dir;
  std::ofstream(dir.path / "junk.ckpt") << "not a checkpoint";
  tktr_checkpoint* ck = nullptr;
  CHECK(tktr_checkpoint_load((dir.path / "junk.ckpt").c_str(), &ck) == TKTR_ERR_FORMAT);
  CHECK(tktr_checkpoint_load((dir.path / "missing.ckpt").c_str(), &ck) == TKTR_ERR_IO);

  std::ofstream(dir.path / "bad.csv") << "epoch,nope\n";
  const std::string bad = (dir.path / "bad.csv").string();
  const char* paths[] = {bad.c_str()};
  CHECK(tktr_plot(paths, nullptr, 1, (dir.path / "out.svg").c_str()) == TKTR_ERR_FORMAT);
}

TEST_CASE("end to end through the C interface") {
  TempDir dir;
  const auto data = dir.path / "data";
  REQUIRE(tktr_write_synthetic_cifar10(data.c_str(), 7) == TKTR_OK);
  for (const char* f : {"data_batch_1.bin", "data_batch_5.bin", "test_batch.bin"}) CHECK(fs::exists(data / f));

  const std::string text = "model = convnet-small\ndata_dir = " + data.string() +
                           "\ntrain_subset = 60\ntest_subset = 30\nepochs = 3\nbatch_size = 20\n"
                           "lr_schedule = 0:0.02\ntiming = modeled\ndecompose_at = 1\noutput_dir = " +
                           (dir.path / "run").string() + "\n";
  tktr_config* cfg = nullptr;
  REQUIRE(tktr_config_parse(text.c_str(), &cfg) == TKTR_OK);
  tktr_experiment* exp = nullptr;
  REQUIRE(tktr_experiment_create(cfg, &exp) == TKTR_OK);
  CHECK(tktr_experiment_epoch(exp) == 0);
  tktr_metrics_row row;
  CHECK(tktr_experiment_last_row(exp, &row) == TKTR_ERR_INVALID_INPUT);

  messages.clear();
  tktr_set_message_callback(collect, &messages);
  REQUIRE(tktr_experiment_step(exp) == TKTR_OK);
  REQUIRE(tktr_experiment_last_row(exp, &row) == TKTR_OK);
  CHECK(row.epoch == 1);
  CHECK(row.lr == 0.02);
  char* table = nullptr;
  REQUIRE(tktr_experiment_decomposition(exp, &table) == TKTR_OK);
  const std::string dec = take(table);
  CHECK(dec.find("conv2") != std::string::npos);
  // A decomposition that kept nothing is reported through the callback.
  CHECK(messages.empty() == (row.phase == TKTR_PHASE_DECOMPOSED));

  tktr_config* fork_cfg = nullptr;
  REQUIRE(tktr_config_parse(text.c_str(), &fork_cfg) == TKTR_OK);
  REQUIRE(tktr_config_set_output_dir(fork_cfg, (dir.path / "fork").c_str()) == TKTR_OK);
  tktr_experiment* fork = nullptr;
  REQUIRE(tktr_experiment_fork(exp, fork_cfg, &fork) == TKTR_OK);

  while (!tktr_experiment_finished(exp)) REQUIRE(tktr_experiment_step(exp) == TKTR_OK);
  while (!tktr_experiment_finished(fork)) REQUIRE(tktr_experiment_step(fork) == TKTR_OK);
  REQUIRE(tktr_experiment_write_outputs(exp) == TKTR_OK);
  CHECK(tktr_experiment_step(exp) == TKTR_ERR_INVALID_INPUT);
  tktr_set_message_callback(nullptr, nullptr);
  CHECK(slurp(dir.path / "run" / "metrics.csv") == slurp(dir.path / "fork" / "metrics.csv"));
  CHECK(fs::exists(dir.path / "run" / "report.json"));

  tktr_checkpoint* ck = nullptr;
  REQUIRE(tktr_checkpoint_load((dir.path / "run" / "final.ckpt").c_str(), &ck) == TKTR_OK);
  CHECK(tktr_checkpoint_param_count(ck) == row.param_count);
  double acc = -1.0;
  REQUIRE(tktr_checkpoint_evaluate(ck, cfg, &acc) == TKTR_OK);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  char* est = nullptr;
  REQUIRE(tktr_checkpoint_estimate(ck, nullptr, &est) == TKTR_OK);
  CHECK(take(est).find("model parameters") != std::string::npos);
  std::size_t merged = 99;
  REQUIRE(tktr_checkpoint_reconstruct(ck, &merged) == TKTR_OK);
  CHECK(merged == (row.phase == TKTR_PHASE_DECOMPOSED ? 2u : 0u));
  REQUIRE(tktr_checkpoint_save(ck, (dir.path / "merged.ckpt").c_str()) == TKTR_OK);
  tktr_checkpoint_free(ck);

  const std::string run_csv = (dir.path / "run" / "metrics.csv").string();
  const std::string fork_csv = (dir.path / "fork" / "metrics.csv").string();
  const char* csvs[] = {run_csv.c_str(), fork_csv.c_str()};
  const char* labels[] = {"run", "fork"};
  REQUIRE(tktr_plot(csvs, labels, 2, (dir.path / "a.svg").c_str()) == TKTR_OK);
  REQUIRE(tktr_plot(csvs, labels, 2, (dir.path / "b.svg").c_str()) == TKTR_OK);
  CHECK(slurp(dir.path / "a.svg") == slurp(dir.path / "b.svg"));
  CHECK(slurp(dir.path / "a.svg").find(">fork<") != std::string::npos);

  tktr_experiment_free(fork);
  tktr_experiment_free(exp);
  tktr_config_free(fork_cfg);
  tktr_config_free(cfg);
}
