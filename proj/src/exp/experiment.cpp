#include "tktr/exp/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "tktr/error.hpp"
#include "tktr/io/checkpoint.hpp"
#include "tktr/nn/optimizer.hpp"

namespace tktr::exp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Training allocates and frees activation buffers of tens of megabytes every
// batch. Serving them from the heap instead of fresh mmaps avoids paying the
// page faults again on each allocation.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

const nn::Conv2d<float>& conv_at(const nn::Model& m, std::size_t i) {
  return std::get<nn::Conv2d<float>>(m.layers()[i].op);
}

std::string ranks_text(const std::optional<tucker::RankPair>& r) {
  return r ? std::to_string(r->k1) + "," + std::to_string(r->k2) : "-";
}

std::string fmt_fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

nlohmann::json spec_json(const ConvSpec& s) {
  return {{"c_in", s.c_in}, {"c_out", s.c_out}, {"kh", s.kh},          {"kw", s.kw},
          {"stride", s.stride}, {"padding", s.padding}, {"has_bias", s.has_bias}};
}

}  // namespace

std::size_t DecompositionReport::decomposed_count() const {
  return std::size_t(std::count_if(layers.begin(), layers.end(), [](const auto& l) { return l.ranks.has_value(); }));
}

DecomposeOptions decompose_options(const ExperimentConfig& cfg) {
  DecomposeOptions o;
  o.policy.min_channels = cfg.min_channels;
  o.policy.min_compression = cfg.min_compression;
  o.noise_variance = cfg.noise_variance;
  return o;
}

DecompositionReport decompose_model(nn::Model& model, const DecomposeOptions& opts) {
  const auto t0 = Clock::now();
  DecompositionReport rep;
  rep.params_before = model.param_count();

  std::vector<std::string> names;
  for (const auto& l : model.layers())
    if (l.kind() == nn::LayerKind::Conv && l.chain_role == nn::ChainRole::None) names.push_back(l.name);

  for (const auto& name : names) {
    const std::size_t idx = model.index_of(name);
    const auto shapes = model.shapes();
    const auto& conv = conv_at(model, idx);
    const ConvSpec spec = conv.spec();
    LayerDecomposition d;
    d.name = name;
    d.spec = spec;
    d.in = {shapes[idx].h, shapes[idx].w};
    d.out = {shapes[idx + 1].h, shapes[idx + 1].w};
    d.params_before = d.params_after = spec.param_count();
    d.eligible = tucker::is_eligible(spec, opts.policy);
    if (!d.eligible) {
      d.note = spec.kh * spec.kw == 1 ? "pointwise" : "fewer than " + std::to_string(opts.policy.min_channels) + " channels";
      rep.layers.push_back(std::move(d));
      continue;
    }
    const WeightTensor4 w(spec.weight_shape(), conv.weight.value);
    const auto sel = tucker::select_ranks_detailed(w, opts.policy.min_compression, opts.noise_variance);
    d.evbmf_k1 = sel.evbmf_k1;
    d.evbmf_k2 = sel.evbmf_k2;
    if (sel.evbmf_k1 > 0 && sel.evbmf_k2 > 0) {
      const auto est = tucker::estimate_compression(spec, {sel.evbmf_k1, sel.evbmf_k2}, d.in, d.out);
      d.m = est.m;
      d.e = est.e;
    }
    if (!sel.ranks) {
      d.note = sel.evbmf_k1 == 0 || sel.evbmf_k2 == 0 ? "EVBMF rank 0" : "compression too small";
      rep.layers.push_back(std::move(d));
      continue;
    }
    const auto f = tucker::decompose_conv(spec, w, conv.bias.value, *sel.ranks, opts.hooi);
    model.replace_layer(name, nn::make_chain(name, spec, f));
    d.ranks = sel.ranks;
    d.params_after = tucker::chain_weight_count(spec, *sel.ranks) + (spec.has_bias ? spec.c_out : 0);
    rep.layers.push_back(std::move(d));
  }
  rep.params_after = model.param_count();
  rep.seconds = seconds_since(t0);
  return rep;
}

std::string format_decomposition(const DecompositionReport& rep) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %5s %5s %10s %8s %8s %9s %9s  %s\n", "layer", "c_in", "c_out", "K1,K2", "m",
                "e", "params", "after", "note");
  out += buf;
  for (const auto& l : rep.layers) {
    const std::string k = l.ranks ? ranks_text(l.ranks)
                          : l.eligible ? std::to_string(l.evbmf_k1) + "," + std::to_string(l.evbmf_k2)
                                       : "-";
    const std::string m = l.m > 0.0 ? fmt_fixed(l.m) : "-", e = l.e > 0.0 ? fmt_fixed(l.e) : "-";
    std::snprintf(buf, sizeof buf, "%-10s %5zu %5zu %10s %8s %8s %9zu %9zu  %s\n", l.name.c_str(), l.spec.c_in,
                  l.spec.c_out, k.c_str(), m.c_str(), e.c_str(), l.params_before, l.params_after,
                  l.ranks ? "decomposed" : l.note.c_str());
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "decomposed %zu of %zu convs; model parameters %zu -> %zu (%.3fx)\n",
                rep.decomposed_count(), rep.layers.size(), rep.params_before, rep.params_after,
                rep.params_after ? double(rep.params_before) / double(rep.params_after) : 0.0);
  out += buf;
  return out;
}

std::size_t reconstruct_model(nn::Model& model) {
  const auto chains = model.chains();
  for (const auto& c : chains) model.merge_chain(c);
  return chains.size();
}

std::vector<EstimateRow> estimate_model(const nn::Model& model, const DecomposeOptions& opts) {
  std::vector<EstimateRow> rows;
  const auto shapes = model.shapes();
  const auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind() != nn::LayerKind::Conv) continue;
    EstimateRow r;
    r.in = {shapes[i].h, shapes[i].w};
    if (l.chain_role == nn::ChainRole::First) {
      const auto& first = conv_at(model, i).spec();
      const auto& core = conv_at(model, i + 1).spec();
      const auto& last = conv_at(model, i + 2).spec();
      r.name = l.chain_origin;
      r.spec = {first.c_in, last.c_out, core.kh, core.kw, core.stride, core.padding, last.has_bias};
      r.out = {shapes[i + 3].h, shapes[i + 3].w};
      r.decomposed = r.eligible = true;
      r.ranks = tucker::RankPair{first.c_out, core.c_out};
    } else if (l.chain_role == nn::ChainRole::None) {
      r.name = l.name;
      r.spec = conv_at(model, i).spec();
      r.out = {shapes[i + 1].h, shapes[i + 1].w};
      r.eligible = tucker::is_eligible(r.spec, opts.policy);
      if (r.eligible) {
        const WeightTensor4 w(r.spec.weight_shape(), conv_at(model, i).weight.value);
        r.ranks = tucker::select_ranks(w, opts.policy.min_compression, opts.noise_variance);
      }
    } else {
      continue;
    }
    if (r.ranks) {
      const auto est = tucker::estimate_compression(r.spec, *r.ranks, r.in, r.out);
      r.m = est.m;
      r.e = est.e;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string format_estimate(const std::vector<EstimateRow>& rows, const nn::Model& model) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %5s %5s %5s %3s %7s %7s %10s %8s %8s  %s\n", "layer", "c_in", "c_out", "k",
                "s", "in", "out", "K1,K2", "m", "e", "state");
  out += buf;
  for (const auto& r : rows) {
    const std::string k = std::to_string(r.spec.kh) + "x" + std::to_string(r.spec.kw);
    const std::string in = std::to_string(r.in.h) + "x" + std::to_string(r.in.w);
    const std::string o = std::to_string(r.out.h) + "x" + std::to_string(r.out.w);
    const char* state = r.decomposed ? "decomposed" : r.eligible ? (r.ranks ? "candidate" : "kept") : "ineligible";
    if (r.ranks)
      std::snprintf(buf, sizeof buf, "%-10s %5zu %5zu %5s %3zu %7s %7s %10s %8.3f %8.3f  %s\n", r.name.c_str(),
                    r.spec.c_in, r.spec.c_out, k.c_str(), r.spec.stride, in.c_str(), o.c_str(),
                    ranks_text(r.ranks).c_str(), r.m, r.e, state);
    else
      std::snprintf(buf, sizeof buf, "%-10s %5zu %5zu %5s %3zu %7s %7s %10s %8s %8s  %s\n", r.name.c_str(),
                    r.spec.c_in, r.spec.c_out, k.c_str(), r.spec.stride, in.c_str(), o.c_str(), "-", "-", "-", state);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "model parameters: %zu\nforward MACs per sample: %llu\n", model.param_count(),
                static_cast<unsigned long long>(model.macs_per_sample()));
  out += buf;
  return out;
}

Evaluation evaluate(nn::Model& model, const io::Dataset& data, nn::WorkerPool* pool, bool keep_logits,
                    std::size_t batch) {
  require(data.shape() == model.input_shape(), ErrorCode::Consistency,
          "dataset images do not match the model input shape");
  require(batch >= 1, ErrorCode::InvalidInput, "evaluate: batch must be at least 1");
  Evaluation ev;
  ev.predictions.reserve(data.n);
  const nn::Exec ex{pool, false};
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.n; start += batch) {
    const std::size_t count = std::min(batch, data.n - start);
    nn::Activation x(count, data.c, data.h, data.w);
    std::copy_n(data.images.begin() + std::ptrdiff_t(start * data.image_size()), count * data.image_size(),
                x.data.begin());
    const auto logits = model.forward(x, ex);
    const auto pred = nn::argmax(logits);
    for (std::size_t i = 0; i < count; ++i) {
      correct += pred[i] == data.labels[start + i];
      ev.predictions.push_back(pred[i]);
    }
    if (keep_logits) ev.logits.insert(ev.logits.end(), logits.data.begin(), logits.data.end());
  }
  ev.accuracy = data.n ? double(correct) / double(data.n) : 0.0;
  return ev;
}

std::shared_ptr<const Datasets> load_datasets(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (cfg.dataset == DatasetId::Cifar10) {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
    files.push_back("test_batch.bin");
  } else {
    files = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
  }
  for (const auto& f : files)
    require(fs::is_regular_file(cfg.data_dir / f), ErrorCode::Config,
            std::string(to_string(cfg.dataset)) + " file '" + (cfg.data_dir / f).string() + "' not found");
  auto d = std::make_shared<Datasets>();
  if (cfg.dataset == DatasetId::Cifar10) {
    d->train = io::load_cifar10(cfg.data_dir, cfg.train_subset, io::Split::Train);
    d->test = io::load_cifar10(cfg.data_dir, cfg.test_subset, io::Split::Test);
  } else {
    d->train = io::load_mnist(cfg.data_dir, cfg.train_subset, io::Split::Train);
    d->test = io::load_mnist(cfg.data_dir, cfg.test_subset, io::Split::Test);
  }
  return d;
}

nn::Model build_model(ModelId id, const nn::FeatureShape& input, std::size_t classes) {
  return id == ModelId::VggMini ? nn::vgg_mini(input, classes) : nn::convnet_small(input, classes);
}

std::uint64_t training_macs_per_sample(const nn::Model& model) { return 3 * model.macs_per_sample(); }

Experiment::Experiment(ExperimentConfig cfg) : Experiment(cfg, load_datasets(cfg)) {}

Experiment::Experiment(ExperimentConfig cfg, std::shared_ptr<const Datasets> data)
    : cfg_(std::move(cfg)), data_(std::move(data)), rng_(cfg_.seed) {
  cfg_.validate();
  require(data_ && data_->train.n > 0 && data_->test.n > 0, ErrorCode::Config, "experiment needs non-empty datasets");
  tune_allocator();
  pool_ = std::make_shared<nn::WorkerPool>(cfg_.threads);
  model_ = build_model(cfg_.model, data_->train.shape(), data_->train.classes);
  nn::initialize(model_, rng_);
  report_.params_original = model_.param_count();
  prepare_output(true);
}

void Experiment::prepare_output(bool fresh) const {
  std::error_code ec;
  std::filesystem::create_directories(cfg_.output_dir, ec);
  require(!ec, ErrorCode::Io, "cannot create output directory '" + cfg_.output_dir.string() + "': " + ec.message());
  if (fresh) std::filesystem::remove(metrics_path(), ec);
}


double Experiment::train_epoch(double lr) {
  const auto& train = data_->train;
  std::vector<std::size_t> order(train.n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_);

  const nn::Exec ex{pool_.get(), true};
  const nn::SgdOptions sgd{cfg_.momentum, cfg_.weight_decay};
  const std::size_t sz = train.image_size();
  double loss_sum = 0.0;
  nn::Activation x;
  std::vector<std::uint8_t> labels;
  for (std::size_t start = 0; start < train.n; start += cfg_.batch_size) {
    const std::size_t count = std::min(cfg_.batch_size, train.n - start);
    if (x.n != count) x = nn::Activation(count, train.c, train.h, train.w);
    labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t src = order[start + i];
      labels[i] = train.labels[src];
      const auto img = train.image(src);
      if (cfg_.augment)
        io::augment(img, train.c, train.h, train.w, io::draw_crop_flip(rng_), {x.sample(i), sz});
      else
        std::copy(img.begin(), img.end(), x.sample(i));
    }
    const auto logits = model_.forward(x, ex);
    const auto loss = nn::softmax_cross_entropy(logits, labels);
    require(std::isfinite(loss.loss), ErrorCode::InvalidInput,
            "training diverged at epoch " + std::to_string(epoch_ + 1));
    loss_sum += loss.loss * double(count);
    model_.backward(loss.grad, ex);
    const auto params = model_.params();
    nn::sgd_step<float>(params, lr, sgd);
  }
  return loss_sum / double(train.n);
}

void Experiment::step() {
  require(!finished(), ErrorCode::InvalidInput, "experiment already finished");
  const nn::LrSchedule schedule(cfg_.lr_milestones);
  const double lr = schedule.at(epoch_);
  const bool measured = cfg_.timing == Timing::Measured;

  const auto t0 = Clock::now();
  const double loss = train_epoch(lr);
  const double train_s = measured ? seconds_since(t0)
                                  : double(data_->train.n) * double(training_macs_per_sample(model_)) /
                                        cfg_.modeled_macs_per_second;
  report_.epoch_train_seconds.push_back(train_s);
  (phase_ == io::Phase::Original     ? report_.seconds_original
   : phase_ == io::Phase::Decomposed ? report_.seconds_decomposed
                                     : report_.seconds_reconstructed) += train_s;
  wall_time_ += train_s;
  ++epoch_;

  double eval_s = 0.0;
  std::optional<double> accuracy;
  if (cfg_.decompose_at && epoch_ == *cfg_.decompose_at) {
    auto te = Clock::now();
    report_.accuracy_before_decompose = evaluate(model_, data_->test, pool_.get()).accuracy;
    eval_s += seconds_since(te);
    auto rep = decompose_model(model_, decompose_options(cfg_));
    if (measured) wall_time_ += rep.seconds;
    if (rep.decomposed_count() > 0) phase_ = io::Phase::Decomposed;
    report_.decomposition = std::move(rep);
  }
  if (cfg_.reconstruct_at && epoch_ == *cfg_.reconstruct_at && phase_ == io::Phase::Decomposed) {
    auto te = Clock::now();
    const auto before = evaluate(model_, data_->test, pool_.get(), true);
    eval_s += seconds_since(te);
    const auto tm = Clock::now();
    reconstruct_model(model_);
    if (measured) wall_time_ += seconds_since(tm);
    te = Clock::now();
    const auto after = evaluate(model_, data_->test, pool_.get(), true);
    eval_s += seconds_since(te);

    ReconstructionCheck chk;
    chk.accuracy_before = before.accuracy;
    chk.accuracy_after = after.accuracy;
    for (std::size_t i = 0; i < before.predictions.size(); ++i)
      chk.argmax_mismatches += before.predictions[i] != after.predictions[i];
    double num = 0.0, den = 1e-30;
    for (std::size_t i = 0; i < before.logits.size(); ++i) {
      num = std::max(num, double(std::abs(before.logits[i] - after.logits[i])));
      den = std::max(den, double(std::abs(before.logits[i])));
    }
    chk.max_logit_rel_diff = num / den;
    chk.params_after = model_.param_count();
    report_.reconstruction = chk;
    accuracy = after.accuracy;
    phase_ = io::Phase::Reconstructed;
  }
  if (!accuracy) {
    const auto te = Clock::now();
    accuracy = evaluate(model_, data_->test, pool_.get()).accuracy;
    eval_s += seconds_since(te);
  }
  report_.seconds_evaluation += eval_s;

  io::MetricsRow row;
  row.epoch = epoch_;
  row.wall_time_s = wall_time_;
  row.train_loss = loss;
  row.test_acc = *accuracy;
  row.param_count = model_.param_count();
  row.flops_est = 2 * model_.macs_per_sample();
  row.lr = lr;
  row.phase = phase_;
  report_.rows.push_back(row);
  io::append_metrics(metrics_path(), row);
}

const RunReport& Experiment::run() {
  while (!finished()) step();
  write_checkpoint(checkpoint_path());
  write_report(report_path());
  return report_;
}

Experiment Experiment::fork(ExperimentConfig cfg) const {
  cfg.validate();
  auto past = [&](const std::optional<int>& e) { return e && *e <= epoch_ ? e : std::nullopt; };
  require(past(cfg.decompose_at) == past(cfg_.decompose_at) && past(cfg.reconstruct_at) == past(cfg_.reconstruct_at),
          ErrorCode::Config, "fork cannot change schedule events that already happened");
  ExperimentConfig same = cfg_;
  same.decompose_at = cfg.decompose_at;
  same.reconstruct_at = cfg.reconstruct_at;
  same.output_dir = cfg.output_dir;
  require(to_text(same) == to_text(cfg), ErrorCode::Config,
          "fork may only change future schedule events and output_dir");
  require(cfg.output_dir != cfg_.output_dir, ErrorCode::Config, "fork needs its own output_dir");

  Experiment e(*this);
  e.cfg_ = std::move(cfg);
  e.prepare_output(true);
  for (const auto& row : e.report_.rows) io::append_metrics(e.metrics_path(), row);
  return e;
}

void Experiment::write_checkpoint(const std::filesystem::path& path) const {
  io::Checkpoint c;
  c.epoch = std::uint32_t(epoch_);
  std::ostringstream state;
  state << rng_;
  c.rng_state = state.str();
  c.model = model_;
  io::save_checkpoint(path, c);
}

void Experiment::write_report(const std::filesystem::path& path) const {
  using nlohmann::json;
  json j;
  j["config"] = to_text(cfg_);
  j["epochs_completed"] = epoch_;
  j["params_original"] = report_.params_original;
  j["params_final"] = model_.param_count();
  j["epoch_train_seconds"] = report_.epoch_train_seconds;
  j["seconds"] = {{"original", report_.seconds_original},
                  {"decomposed", report_.seconds_decomposed},
                  {"reconstructed", report_.seconds_reconstructed},
                  {"evaluation", report_.seconds_evaluation}};
  if (report_.accuracy_before_decompose) j["accuracy_before_decompose"] = *report_.accuracy_before_decompose;
  if (const auto& d = report_.decomposition) {
    json layers = json::array();
    std::size_t savings = 0;
    for (const auto& l : d->layers) {
      json jl{{"name", l.name},
              {"spec", spec_json(l.spec)},
              {"in", {l.in.h, l.in.w}},
              {"out", {l.out.h, l.out.w}},
              {"eligible", l.eligible},
              {"evbmf_k1", l.evbmf_k1},
              {"evbmf_k2", l.evbmf_k2},
              {"m", l.m},
              {"e", l.e},
              {"params_before", l.params_before},
              {"params_after", l.params_after},
              {"decomposed", l.ranks.has_value()},
              {"note", l.note}};
      if (l.ranks) jl["ranks"] = {{"k1", l.ranks->k1}, {"k2", l.ranks->k2}};
      savings += l.params_before - l.params_after;
      layers.push_back(std::move(jl));
    }
    j["decomposition"] = {{"layers", layers},
                          {"params_before", d->params_before},
                          {"params_after", d->params_after},
                          {"param_savings", savings},
                          {"aggregate_m", double(d->params_before) / double(d->params_after)},
                          {"seconds", d->seconds}};
  }
  if (const auto& r = report_.reconstruction) {
    j["reconstruction"] = {{"accuracy_before", r->accuracy_before},
                           {"accuracy_after", r->accuracy_after},
                           {"argmax_mismatches", r->argmax_mismatches},
                           {"max_logit_rel_diff", r->max_logit_rel_diff},
                           {"params_after", r->params_after}};
  }
  json rows = json::array();
  for (const auto& row : report_.rows) rows.push_back(io::format_row(row));
  j["metrics"] = rows;

  std::ofstream out(path);
  require(bool(out), ErrorCode::Io, "cannot write report '" + path.string() + "'");
  out << j.dump(2) << '\n';
  require(bool(out), ErrorCode::Io, "error writing report '" + path.string() + "'");
}

}  // namespace tktr::exp
