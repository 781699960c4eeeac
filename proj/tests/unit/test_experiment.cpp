#include <doctest.h>

#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "tktr/error.hpp"
#include "tktr/exp/experiment.hpp"
#include "tktr/exp/plot.hpp"
#include "tktr/io/checkpoint.hpp"
#include "tktr/io/metrics.hpp"

using namespace tktr;
using namespace tktr::exp;
using tktr::testing::TempDir;
namespace fs = std::filesystem;

namespace {

// Ten noisy class prototypes on 3x8x8 images.
std::shared_ptr<const Datasets> tiny_data(std::size_t train_n = 96, std::size_t test_n = 40) {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> d;
  const std::size_t c = 3, h = 8, w = 8, sz = c * h * w;
  std::vector<std::vector<float>> proto(10, std::vector<float>(sz));
  for (auto& p : proto)
    for (auto& v : p) v = d(rng);
  auto make = [&](std::size_t n, io::Split split) {
    io::Dataset ds;
    ds.n = n;
    ds.c = c;
    ds.h = h;
    ds.w = w;
    ds.split = split;
    for (std::size_t i = 0; i < n; ++i) {
      const auto label = std::uint8_t(i % 10);
      ds.labels.push_back(label);
      for (std::size_t k = 0; k < sz; ++k) ds.images.push_back(proto[label][k] + 0.8f * d(rng));
    }
    return ds;
  };
  auto out = std::make_shared<Datasets>();
  out->train = make(train_n, io::Split::Train);
  out->test = make(test_n, io::Split::Test);
  return out;
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.model = ModelId::ConvnetSmall;
  c.epochs = 5;
  c.batch_size = 32;
  c.lr_milestones = {{0, 0.01}, {3, 0.005}};
  c.seed = 3;
  c.timing = Timing::Modeled;
  c.output_dir = out;
  return c;
}

// Gives every eligible conv an exact rank-(4, 4) Tucker structure plus a
// little noise, so that the scheduled decomposition finds something to keep.
void plant(nn::Model& model) {
  std::mt19937_64 rng(17);
  for (auto& l : model.layers()) {
    if (l.kind() != nn::LayerKind::Conv) continue;
    auto& conv = std::get<nn::Conv2d<float>>(l.op);
    if (!tucker::is_eligible(conv.spec())) continue;
    const auto w = oracle::planted_tucker(conv.spec().weight_shape(), {4, 4}, rng, 0.002, 1.0);
    std::copy(w.data.begin(), w.data.end(), conv.weight.value.begin());
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Experiment make_experiment(const ExperimentConfig& cfg, std::shared_ptr<const Datasets> data) {
  Experiment e(cfg, std::move(data));
  plant(e.model());
  return e;
}

}  // namespace

TEST_CASE("decompose-in-training run with reconstruction") {
  TempDir dir;
  auto cfg = tiny_config(dir.path / "run");
  cfg.decompose_at = 2;
  cfg.reconstruct_at = 4;
  auto e = make_experiment(cfg, tiny_data());
  const std::size_t original = e.model().param_count();
  e.run();
  const auto& rep = e.report();

  REQUIRE(rep.rows.size() == 5);
  const io::Phase expected[] = {io::Phase::Original, io::Phase::Decomposed, io::Phase::Decomposed,
                                io::Phase::Reconstructed, io::Phase::Reconstructed};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(rep.rows[i].epoch == int(i + 1));
    CHECK(rep.rows[i].phase == expected[i]);
  }
  CHECK(rep.rows[0].param_count == original);
  CHECK(rep.rows[1].param_count < original);
  CHECK(rep.rows[2].param_count == rep.rows[1].param_count);
  CHECK(rep.rows[3].param_count == original);
  CHECK(rep.rows[4].param_count == original);
  CHECK(rep.rows[1].flops_est < rep.rows[0].flops_est);
  CHECK(rep.rows[3].flops_est == rep.rows[0].flops_est);
  CHECK(rep.rows[0].lr == 0.01);
  CHECK(rep.rows[3].lr == 0.005);
  for (std::size_t i = 1; i < 5; ++i) CHECK(rep.rows[i].wall_time_s > rep.rows[i - 1].wall_time_s);

  REQUIRE(rep.decomposition);
  const auto& d = *rep.decomposition;
  CHECK(d.decomposed_count() == 2);
  std::size_t savings = 0;
  for (const auto& l : d.layers) {
    savings += l.params_before - l.params_after;
    if (l.ranks) {
      CHECK(l.ranks->k1 >= 1);
      CHECK(l.m > 1.05);
      CHECK(l.params_after == tucker::chain_weight_count(l.spec, *l.ranks) + (l.spec.has_bias ? l.spec.c_out : 0));
    }
  }
  CHECK(savings == d.params_before - d.params_after);
  CHECK(d.params_after == rep.rows[1].param_count);

  REQUIRE(rep.reconstruction);
  CHECK(rep.reconstruction->argmax_mismatches == 0);
  CHECK(rep.reconstruction->max_logit_rel_diff <= 1e-4);
  CHECK(rep.reconstruction->accuracy_after == rep.reconstruction->accuracy_before);
  CHECK(rep.reconstruction->params_after == original);
  CHECK(rep.rows[3].test_acc == rep.reconstruction->accuracy_after);

  // Files written by run(): CSV mirrors the in-memory rows, checkpoint holds the final model.
  const auto csv = io::read_metrics(e.metrics_path());
  REQUIRE(csv.size() == rep.rows.size());
  for (std::size_t i = 0; i < csv.size(); ++i) CHECK(io::format_row(csv[i]) == io::format_row(rep.rows[i]));
  const auto ck = io::load_checkpoint(e.checkpoint_path());
  CHECK(ck.epoch == 5);
  CHECK(ck.model.param_count() == original);
  const auto j = nlohmann::json::parse(slurp(e.report_path()));
  CHECK(j["decomposition"]["param_savings"].get<std::size_t>() == d.params_before - d.params_after);
  CHECK(j["decomposition"]["aggregate_m"].get<double>() == double(d.params_before) / double(d.params_after));
  CHECK(j["metrics"].size() == 5);
  CHECK(j["reconstruction"]["argmax_mismatches"].get<std::size_t>() == 0);
}

TEST_CASE("without schedule events the run is plain training") {
  TempDir dir;
  auto e = make_experiment(tiny_config(dir.path / "run"), tiny_data());
  e.run();
  for (const auto& r : e.report().rows) {
    CHECK(r.phase == io::Phase::Original);
    CHECK(r.param_count == e.report().params_original);
  }
  CHECK(!e.report().decomposition);
  CHECK(e.report().rows.back().train_loss < e.report().rows.front().train_loss);
}

TEST_CASE("modeled epoch time drops after decomposition") {
  TempDir dir;
  auto cfg = tiny_config(dir.path / "run");
  cfg.decompose_at = 2;
  auto e = make_experiment(cfg, tiny_data());
  e.run();
  const auto& t = e.report().epoch_train_seconds;
  REQUIRE(t.size() == 5);
  const double before = (t[0] + t[1]) / 2.0;
  for (std::size_t i = 2; i < 5; ++i) CHECK(t[i] < before);
  const auto& rows = e.report().rows;
  CHECK(rows[4].wall_time_s == doctest::Approx(std::accumulate(t.begin(), t.end(), 0.0)).epsilon(1e-12));
}

TEST_CASE("metrics CSV is byte-identical across worker counts and reruns") {
  TempDir dir;
  const auto data = tiny_data();
  std::vector<std::string> csvs;
  for (std::size_t threads : {1, 3, 1}) {
    auto cfg = tiny_config(dir.path / ("t" + std::to_string(csvs.size())));
    cfg.threads = threads;
    cfg.decompose_at = 2;
    cfg.reconstruct_at = 3;
    auto e = make_experiment(cfg, data);
    e.run();
    csvs.push_back(slurp(e.metrics_path()));
  }
  CHECK(csvs[0] == csvs[1]);
  CHECK(csvs[0] == csvs[2]);
}

TEST_CASE("a fork continues exactly like a run configured that way from the start") {
  TempDir dir;
  const auto data = tiny_data();
  auto direct_cfg = tiny_config(dir.path / "direct");
  direct_cfg.decompose_at = 3;
  auto direct = make_experiment(direct_cfg, data);
  direct.run();

  auto base = make_experiment(tiny_config(dir.path / "base"), data);
  base.step();
  base.step();
  auto fork_cfg = tiny_config(dir.path / "fork");
  fork_cfg.decompose_at = 3;
  auto fork = base.fork(fork_cfg);
  fork.run();
  CHECK(slurp(fork.metrics_path()) == slurp(direct.metrics_path()));
  CHECK(slurp(fork.checkpoint_path()) == slurp(direct.checkpoint_path()));

  // The parent is unaffected and can still finish on its own schedule.
  base.run();
  CHECK(!base.report().decomposition);
  CHECK(io::read_metrics(base.metrics_path()).size() == 5);
}

TEST_CASE("fork rejects changes to the past and to anything but schedule and output") {
  TempDir dir;
  const auto data = tiny_data();
  auto cfg = tiny_config(dir.path / "base");
  cfg.decompose_at = 1;
  auto base = make_experiment(cfg, data);
  base.step();
  base.step();
  auto expect_config_error = [&](const ExperimentConfig& c) {
    try {
      (void)base.fork(c);
      FAIL("fork should have failed");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Config);
    }
  };
  auto c = cfg;
  c.output_dir = dir.path / "other";
  c.decompose_at.reset();
  expect_config_error(c);
  c = cfg;
  c.output_dir = dir.path / "other";
  c.lr_milestones = {{0, 0.5}};
  expect_config_error(c);
  expect_config_error(cfg);  // same output directory
  c = cfg;
  c.output_dir = dir.path / "other";
  c.reconstruct_at = 3;
  CHECK_NOTHROW((void)base.fork(c));
}

TEST_CASE("configuration problems surface before any training") {
  TempDir dir;
  ExperimentConfig cfg = tiny_config(dir.path / "run");
  cfg.data_dir = dir.path / "no-such-data";
  try {
    Experiment e(cfg);
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
  }
  CHECK(!fs::exists(dir.path / "run" / "metrics.csv"));

  cfg = tiny_config(dir.path / "run");
  cfg.decompose_at = 5;
  CHECK_THROWS_AS(Experiment(cfg, tiny_data()), Error);
}

TEST_CASE("decompose then merge preserves logits") {
  const auto data = tiny_data();
  nn::Model m = build_model(ModelId::ConvnetSmall, data->train.shape(), 10);
  std::mt19937_64 rng(4);
  nn::initialize(m, rng);
  plant(m);
  const auto before = evaluate(m, data->test, nullptr, true);
  const auto rep = decompose_model(m, {});
  REQUIRE(rep.decomposed_count() == 2);
  const auto chain = evaluate(m, data->test, nullptr, true);
  CHECK(reconstruct_model(m) == 2);
  CHECK(m.chains().empty());
  const auto merged = evaluate(m, data->test, nullptr, true);
  CHECK(merged.predictions == chain.predictions);
  float scale = 0.0f;
  for (float v : chain.logits) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < chain.logits.size(); ++i)
    CHECK(std::abs(chain.logits[i] - merged.logits[i]) <= 1e-4f * scale);
  CHECK(before.logits.size() == chain.logits.size());
}

TEST_CASE("decomposition with no eligible layer leaves the model unchanged") {
  nn::Model m = nn::convnet_small({3, 8, 8}, 10);
  std::mt19937_64 rng(4);
  nn::initialize(m, rng);
  const auto bytes = io::encode_checkpoint({0, "", m});
  DecomposeOptions opts;
  opts.policy.min_channels = 1000;
  const auto rep = decompose_model(m, opts);
  CHECK(rep.decomposed_count() == 0);
  CHECK(rep.params_before == rep.params_after);
  for (const auto& l : rep.layers) {
    CHECK(!l.eligible);
    CHECK(l.params_before == l.params_after);
  }
  CHECK(io::encode_checkpoint({0, "", m}) == bytes);
  CHECK(format_decomposition(rep).find("decomposed 0 of 3 convs") != std::string::npos);
}

TEST_CASE("estimate_model reports chains at their ranks and plain convs at EVBMF ranks") {
  nn::Model m = nn::convnet_small({3, 8, 8}, 10);
  std::mt19937_64 rng(4);
  nn::initialize(m, rng);
  plant(m);
  const auto plain = estimate_model(m, {});
  REQUIRE(plain.size() == 3);
  CHECK(!plain[0].eligible);
  CHECK(!plain[0].ranks);
  for (std::size_t i = 1; i < 3; ++i) {
    CHECK(plain[i].eligible);
    CHECK(!plain[i].decomposed);
    REQUIRE(plain[i].ranks);
  }
  decompose_model(m, {});
  const auto after = estimate_model(m, {});
  REQUIRE(after.size() == 3);
  for (std::size_t i = 1; i < 3; ++i) {
    CHECK(after[i].decomposed);
    CHECK(after[i].name == plain[i].name);
    CHECK(after[i].spec == plain[i].spec);
    REQUIRE(after[i].ranks);
    CHECK(*after[i].ranks == *plain[i].ranks);
    const auto est = tucker::estimate_compression(after[i].spec, *after[i].ranks, after[i].in, after[i].out);
    CHECK(after[i].m == est.m);
    CHECK(after[i].e == est.e);
  }
  const auto text = format_estimate(after, m);
  CHECK(text.find("decomposed") != std::string::npos);
  CHECK(text.find("model parameters: " + std::to_string(m.param_count())) != std::string::npos);
}

TEST_CASE("evaluate counts argmax agreement with labels") {
  // Linear model on 1x1x2 inputs whose logits are the inputs themselves.
  std::vector<nn::Layer> layers;
  layers.push_back(nn::make_linear("fc", 2, 2));
  nn::Model m({2, 1, 1}, std::move(layers));
  auto& fc = std::get<nn::Linear<float>>(m.layers()[0].op);
  fc.weight.value = {1, 0, 0, 1};
  fc.bias.value = {0, 0};
  io::Dataset ds;
  ds.n = 4;
  ds.c = 2;
  ds.h = ds.w = 1;
  ds.classes = 2;
  ds.images = {1, 0, 0, 1, 2, 3, 5, 4};
  ds.labels = {0, 1, 0, 0};
  const auto ev = evaluate(m, ds, nullptr, true, 3);
  CHECK(ev.predictions == std::vector<std::size_t>{0, 1, 1, 0});
  CHECK(ev.accuracy == 0.75);
  CHECK(ev.logits == std::vector<float>{1, 0, 0, 1, 2, 3, 5, 4});
}

TEST_CASE("render_svg draws one polyline per series and rules at phase changes") {
  std::vector<io::MetricsRow> rows;
  const io::Phase phases[] = {io::Phase::Original, io::Phase::Original, io::Phase::Decomposed,
                              io::Phase::Decomposed, io::Phase::Reconstructed};
  for (int i = 0; i < 5; ++i) rows.push_back({i + 1, 10.0 * (i + 1), 1.0, 0.1 * (i + 1), 100, 200, 0.1, phases[i]});
  auto count = [](const std::string& s, const std::string& what) {
    std::size_t n = 0;
    for (auto p = s.find(what); p != std::string::npos; p = s.find(what, p + 1)) ++n;
    return n;
  };

  const std::string one = render_svg({{"run", rows}});
  CHECK(count(one, "<polyline") == 1);
  CHECK(count(one, "stroke-dasharray") == 2);
  CHECK(one.rfind("<svg", 0) == 0);
  CHECK(one.find("</svg>") != std::string::npos);
  CHECK(render_svg({{"run", rows}}) == one);

  const std::string two = render_svg({{"a", rows}, {"b", rows}});
  CHECK(count(two, "<polyline") == 2);

  const std::string empty = render_svg({{"empty", {}}});
  CHECK(count(empty, "<polyline") == 0);
  CHECK(empty.find("</svg>") != std::string::npos);
  CHECK(render_svg({{"a<b&c", {}}}).find("a&lt;b&amp;c") != std::string::npos);
}

TEST_CASE("evaluate worked examples") {
  std::vector<nn::Layer> layers;
  layers.push_back(nn::make_linear("fc", 2, 2));
  nn::Model m({2, 1, 1}, std::move(layers));
  auto& fc = std::get<nn::Linear<float>>(m.layers()[0].op);
  fc.weight.value = {1, 0, 0, 1};
  fc.bias.value = {0, 0};
  io::Dataset one;
  one.n = 1;
  one.c = 2;
  one.h = one.w = 1;
  one.images = {0.2f, 0.9f};
  one.labels = {1};
  CHECK(evaluate(m, one, nullptr).accuracy == 1.0);

  io::Dataset ds = one;
  ds.n = 3;
  ds.images = {0.2f, 0.9f, 3.0f, 1.0f, -1.0f, 2.0f};
  ds.labels = {1, 1, 0};
  io::Dataset twice = ds;
  twice.n = 6;
  twice.images.insert(twice.images.end(), ds.images.begin(), ds.images.end());
  twice.labels.insert(twice.labels.end(), ds.labels.begin(), ds.labels.end());
  CHECK(evaluate(m, twice, nullptr).accuracy == evaluate(m, ds, nullptr).accuracy);
}
