#include "tktr/exp/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "tktr/error.hpp"

namespace tktr::exp {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, std::string_view v, const char* expected) {
  fail(ErrorCode::Config, "config key '" + key + "': '" + std::string(v) + "' is not " + expected);
}

template <class T>
T parse_number(const std::string& key, std::string_view v, const char* expected) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, expected);
  return out;
}

std::size_t parse_count(const std::string& key, std::string_view v) {
  return parse_number<std::size_t>(key, v, "a non-negative integer");
}

int parse_int(const std::string& key, std::string_view v) { return parse_number<int>(key, v, "an integer"); }

double parse_double(const std::string& key, std::string_view v) { return parse_number<double>(key, v, "a number"); }

bool parse_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  bad_value(key, v, "a boolean");
}

std::optional<std::size_t> parse_subset(const std::string& key, std::string_view v) {
  if (v == "all") return std::nullopt;
  return parse_count(key, v);
}

std::optional<int> parse_event(const std::string& key, std::string_view v) {
  if (v == "none") return std::nullopt;
  return parse_int(key, v);
}

std::map<int, double> parse_schedule(const std::string& key, std::string_view v) {
  std::map<int, double> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const std::string_view item = trim(v.substr(0, comma));
    v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) bad_value(key, item, "an epoch:rate pair");
    const int epoch = parse_int(key, trim(item.substr(0, colon)));
    const double lr = parse_double(key, trim(item.substr(colon + 1)));
    if (!out.emplace(epoch, lr).second) bad_value(key, item, "a unique milestone");
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const char* to_string(ModelId m) { return m == ModelId::VggMini ? "vgg-mini" : "convnet-small"; }
const char* to_string(DatasetId d) { return d == DatasetId::Cifar10 ? "cifar10" : "mnist"; }
const char* to_string(Timing t) { return t == Timing::Measured ? "measured" : "modeled"; }

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorCode::Config, what); };
  check(epochs >= 1, "epochs must be at least 1");
  check(batch_size >= 1, "batch_size must be at least 1");
  check(threads >= 1, "threads must be at least 1");
  check(!train_subset || *train_subset >= 1, "train_subset must be at least 1");
  check(!test_subset || *test_subset >= 1, "test_subset must be at least 1");
  check(!lr_milestones.empty() && lr_milestones.begin()->first == 0,
        "lr_schedule must start with a milestone at epoch 0");
  for (const auto& [e, lr] : lr_milestones) check(e >= 0 && lr > 0.0, "lr_schedule needs epochs >= 0 and rates > 0");
  check(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  check(weight_decay >= 0.0, "weight_decay must be non-negative");
  check(min_compression > 0.0, "min_compression must be positive");
  check(!noise_variance || *noise_variance > 0.0, "noise_variance must be positive");
  check(modeled_macs_per_second > 0.0, "modeled_macs_per_second must be positive");
  check(!output_dir.empty(), "output_dir must not be empty");
  if (decompose_at) check(*decompose_at >= 1 && *decompose_at < epochs, "decompose_at must be in [1, epochs)");
  if (reconstruct_at) {
    check(decompose_at.has_value(), "reconstruct_at requires decompose_at");
    check(*decompose_at < *reconstruct_at && *reconstruct_at < epochs,
          "schedule must satisfy decompose_at < reconstruct_at < epochs");
  }
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  using Setter = std::function<void(const std::string&, std::string_view)>;
  const std::map<std::string, Setter> setters{
      {"model",
       [&](const std::string& k, std::string_view v) {
         if (v == "vgg-mini") c.model = ModelId::VggMini;
         else if (v == "convnet-small") c.model = ModelId::ConvnetSmall;
         else bad_value(k, v, "vgg-mini or convnet-small");
       }},
      {"dataset",
       [&](const std::string& k, std::string_view v) {
         if (v == "cifar10") c.dataset = DatasetId::Cifar10;
         else if (v == "mnist") c.dataset = DatasetId::Mnist;
         else bad_value(k, v, "cifar10 or mnist");
       }},
      {"data_dir", [&](const std::string&, std::string_view v) { c.data_dir = std::string(v); }},
      {"train_subset", [&](const std::string& k, std::string_view v) { c.train_subset = parse_subset(k, v); }},
      {"test_subset", [&](const std::string& k, std::string_view v) { c.test_subset = parse_subset(k, v); }},
      {"epochs", [&](const std::string& k, std::string_view v) { c.epochs = parse_int(k, v); }},
      {"batch_size", [&](const std::string& k, std::string_view v) { c.batch_size = parse_count(k, v); }},
      {"lr_schedule", [&](const std::string& k, std::string_view v) { c.lr_milestones = parse_schedule(k, v); }},
      {"momentum", [&](const std::string& k, std::string_view v) { c.momentum = parse_double(k, v); }},
      {"weight_decay", [&](const std::string& k, std::string_view v) { c.weight_decay = parse_double(k, v); }},
      {"seed",
       [&](const std::string& k, std::string_view v) {
         c.seed = parse_number<std::uint64_t>(k, v, "a non-negative integer");
       }},
      {"threads", [&](const std::string& k, std::string_view v) { c.threads = parse_count(k, v); }},
      {"decompose_at", [&](const std::string& k, std::string_view v) { c.decompose_at = parse_event(k, v); }},
      {"reconstruct_at", [&](const std::string& k, std::string_view v) { c.reconstruct_at = parse_event(k, v); }},
      {"min_channels", [&](const std::string& k, std::string_view v) { c.min_channels = parse_count(k, v); }},
      {"min_compression", [&](const std::string& k, std::string_view v) { c.min_compression = parse_double(k, v); }},
      {"noise_variance",
       [&](const std::string& k, std::string_view v) {
         if (v == "estimate") c.noise_variance.reset();
         else c.noise_variance = parse_double(k, v);
       }},
      {"augment", [&](const std::string& k, std::string_view v) { c.augment = parse_bool(k, v); }},
      {"timing",
       [&](const std::string& k, std::string_view v) {
         if (v == "measured") c.timing = Timing::Measured;
         else if (v == "modeled") c.timing = Timing::Modeled;
         else bad_value(k, v, "measured or modeled");
       }},
      {"modeled_macs_per_second",
       [&](const std::string& k, std::string_view v) { c.modeled_macs_per_second = parse_double(k, v); }},
      {"output_dir", [&](const std::string&, std::string_view v) { c.output_dir = std::string(v); }},
  };

  std::set<std::string> seen;
  std::size_t lineno = 0;
  while (!text.empty()) {
    ++lineno;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, ErrorCode::Config,
            "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    require(it != setters.end(), ErrorCode::Config,
            "config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    require(seen.insert(key).second, ErrorCode::Config,
            "config line " + std::to_string(lineno) + ": key '" + key + "' repeated");
    require(!value.empty(), ErrorCode::Config, "config line " + std::to_string(lineno) + ": empty value");
    it->second(key, value);
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(bool(in), ErrorCode::Config, "cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream o;
  auto opt = [](const auto& v, const char* none) { return v ? std::to_string(*v) : std::string(none); };
  o << "model = " << to_string(c.model) << '\n';
  o << "dataset = " << to_string(c.dataset) << '\n';
  o << "data_dir = " << c.data_dir.string() << '\n';
  o << "train_subset = " << opt(c.train_subset, "all") << '\n';
  o << "test_subset = " << opt(c.test_subset, "all") << '\n';
  o << "epochs = " << c.epochs << '\n';
  o << "batch_size = " << c.batch_size << '\n';
  o << "lr_schedule = ";
  bool first = true;
  for (const auto& [e, lr] : c.lr_milestones) {
    o << (first ? "" : ", ") << e << ':' << format_double(lr);
    first = false;
  }
  o << '\n';
  o << "momentum = " << format_double(c.momentum) << '\n';
  o << "weight_decay = " << format_double(c.weight_decay) << '\n';
  o << "seed = " << c.seed << '\n';
  o << "threads = " << c.threads << '\n';
  o << "decompose_at = " << opt(c.decompose_at, "none") << '\n';
  o << "reconstruct_at = " << opt(c.reconstruct_at, "none") << '\n';
  o << "min_channels = " << c.min_channels << '\n';
  o << "min_compression = " << format_double(c.min_compression) << '\n';
  o << "noise_variance = " << (c.noise_variance ? format_double(*c.noise_variance) : "estimate") << '\n';
  o << "augment = " << (c.augment ? "true" : "false") << '\n';
  o << "timing = " << to_string(c.timing) << '\n';
  o << "modeled_macs_per_second = " << format_double(c.modeled_macs_per_second) << '\n';
  o << "output_dir = " << c.output_dir.string() << '\n';
  return o.str();
}

}  // namespace tktr::exp
