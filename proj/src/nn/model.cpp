#include "tktr/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "tktr/error.hpp"

namespace tktr::nn {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

FeatureShape layer_output(const Layer& l, const FeatureShape& in) {
  return std::visit([&](const auto& op) { return op.output_shape(in); }, l.op);
}

const Conv2d<float>& conv_of(const Layer& l, const std::string& what) {
  const auto* c = std::get_if<Conv2d<float>>(&l.op);
  require(c != nullptr, ErrorCode::Graph, what + ": layer '" + l.name + "' is not a convolution");
  return *c;
}

}  // namespace

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Linear: return "linear";
  }
  return "unknown";
}

LayerKind Layer::kind() const {
  return std::visit(Overloaded{
                        [](const Conv2d<float>&) { return LayerKind::Conv; },
                        [](const BatchNorm<float>&) { return LayerKind::BatchNorm; },
                        [](const Relu<float>&) { return LayerKind::Relu; },
                        [](const Pool2<float>& p) { return p.mode() == PoolMode::Max ? LayerKind::MaxPool : LayerKind::AvgPool; },
                        [](const Linear<float>&) { return LayerKind::Linear; },
                    },
                    op);
}

std::vector<Param<float>*> Layer::params() {
  return std::visit(Overloaded{
                        [](Conv2d<float>& c) {
                          std::vector<Param<float>*> p{&c.weight};
                          if (c.spec().has_bias) p.push_back(&c.bias);
                          return p;
                        },
                        [](BatchNorm<float>& b) { return std::vector<Param<float>*>{&b.gamma, &b.beta}; },
                        [](Relu<float>&) { return std::vector<Param<float>*>{}; },
                        [](Pool2<float>&) { return std::vector<Param<float>*>{}; },
                        [](Linear<float>& l) { return std::vector<Param<float>*>{&l.weight, &l.bias}; },
                    },
                    op);
}

std::vector<const Param<float>*> Layer::params() const {
  auto mut = const_cast<Layer*>(this)->params();
  return {mut.begin(), mut.end()};
}

std::size_t Layer::param_count() const {
  std::size_t n = 0;
  for (const auto* p : params()) n += p->size();
  return n;
}

Layer make_conv(std::string name, const ConvSpec& spec) { return {std::move(name), Conv2d<float>(spec), {}, ChainRole::None}; }
Layer make_batchnorm(std::string name, std::size_t channels) {
  return {std::move(name), BatchNorm<float>(channels), {}, ChainRole::None};
}
Layer make_relu(std::string name) { return {std::move(name), Relu<float>{}, {}, ChainRole::None}; }
Layer make_pool(std::string name, PoolMode mode) { return {std::move(name), Pool2<float>(mode), {}, ChainRole::None}; }
Layer make_linear(std::string name, std::size_t in_features, std::size_t out_features) {
  return {std::move(name), Linear<float>(in_features, out_features), {}, ChainRole::None};
}

std::array<std::string, 3> chain_names(const std::string& name) {
  return {name + ".first", name + ".core", name + ".last"};
}

std::vector<Layer> make_chain(const std::string& origin, const ConvSpec& spec, const tucker::Factors& f) {
  const auto r = f.ranks();
  const auto names = chain_names(origin);
  ConvSpec first{.c_in = spec.c_in, .c_out = r.k1, .kh = 1, .kw = 1, .stride = 1, .padding = 0, .has_bias = false};
  ConvSpec core{.c_in = r.k1, .c_out = r.k2, .kh = spec.kh, .kw = spec.kw, .stride = spec.stride,
                .padding = spec.padding, .has_bias = false};
  ConvSpec last{.c_in = r.k2, .c_out = spec.c_out, .kh = 1, .kw = 1, .stride = 1, .padding = 0, .has_bias = spec.has_bias};
  std::vector<Layer> chain;
  chain.push_back(make_conv(names[0], first));
  chain.push_back(make_conv(names[1], core));
  chain.push_back(make_conv(names[2], last));
  const WeightTensor4* weights[3] = {&f.first, &f.core, &f.last};
  const ChainRole roles[3] = {ChainRole::First, ChainRole::Core, ChainRole::Last};
  for (int i = 0; i < 3; ++i) {
    auto& conv = std::get<Conv2d<float>>(chain[i].op);
    require(weights[i]->shape == conv.spec().weight_shape(), ErrorCode::Shape, "make_chain: factor shape mismatch");
    conv.weight.value = weights[i]->data;
    chain[i].chain_origin = origin;
    chain[i].chain_role = roles[i];
  }
  if (spec.has_bias) std::get<Conv2d<float>>(chain[2].op).bias.value = f.bias;
  return chain;
}

Model::Model(FeatureShape input, std::vector<Layer> layers) : input_(input), layers_(std::move(layers)) { validate(); }

void Model::validate() const {
  require(!layers_.empty(), ErrorCode::Graph, "model has no layers");
  require(layers_.back().kind() == LayerKind::Linear, ErrorCode::Graph, "model must end in a linear classifier");
  std::set<std::string> seen;
  for (const auto& l : layers_) {
    require(!l.name.empty(), ErrorCode::Graph, "layer with empty name");
    require(seen.insert(l.name).second, ErrorCode::Graph, "duplicate layer name '" + l.name + "'");
  }
  try {
    shapes();
  } catch (const Error& e) {
    fail(ErrorCode::Graph, std::string("incompatible layer shapes: ") + e.what());
  }
}

std::vector<FeatureShape> Model::shapes() const {
  std::vector<FeatureShape> s{input_};
  for (const auto& l : layers_) s.push_back(layer_output(l, s.back()));
  return s;
}

std::size_t Model::num_classes() const { return std::get<Linear<float>>(layers_.back().op).out_features(); }

std::size_t Model::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].name == name) return i;
  fail(ErrorCode::Graph, "unknown layer '" + name + "'");
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.param_count();
  return n;
}

std::uint64_t Model::macs_per_sample() const {
  const auto s = shapes();
  std::uint64_t macs = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (const auto* c = std::get_if<Conv2d<float>>(&layers_[i].op)) macs += c->macs_per_sample(s[i]);
    if (const auto* l = std::get_if<Linear<float>>(&layers_[i].op)) macs += std::uint64_t(l->in_features()) * l->out_features();
  }
  return macs;
}

Activation Model::forward(const Activation& x, const Exec& ex) {
  require(feature_shape(x) == input_, ErrorCode::Shape, "model input shape mismatch");
  Activation cur = x;
  for (auto& l : layers_) cur = std::visit([&](auto& op) { return op.forward(cur, ex); }, l.op);
  return cur;
}

void Model::backward(const Activation& grad_logits, const Exec& ex) {
  Activation g = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const bool need = i > 0;
    g = std::visit(Overloaded{
                       [&](Conv2d<float>& op) { return op.backward(g, ex, need); },
                       [&](Linear<float>& op) { return op.backward(g, ex, need); },
                       [&](auto& op) { return op.backward(g, ex); },
                   },
                   layers_[i].op);
  }
}

std::vector<Param<float>*> Model::params() {
  std::vector<Param<float>*> out;
  for (auto& l : layers_)
    for (auto* p : l.params()) out.push_back(p);
  return out;
}

void Model::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

void Model::replace_layer(const std::string& name, std::vector<Layer> replacement) {
  require(!replacement.empty(), ErrorCode::Graph, "replace_layer: empty replacement for '" + name + "'");
  const std::size_t idx = index_of(name);
  const auto s = shapes();
  const FeatureShape in = s[idx], out = s[idx + 1];
  FeatureShape cur = in;
  try {
    for (const auto& l : replacement) cur = layer_output(l, cur);
  } catch (const Error& e) {
    fail(ErrorCode::Graph, "replace_layer: replacement for '" + name + "' does not accept its input: " + e.what());
  }
  require(cur == out, ErrorCode::Graph, "replace_layer: replacement for '" + name + "' changes the output shape");
  std::set<std::string> names;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (i != idx) names.insert(layers_[i].name);
  for (auto& l : replacement) {
    require(names.insert(l.name).second, ErrorCode::Graph, "replace_layer: duplicate layer name '" + l.name + "'");
    for (auto* p : l.params()) {
      p->velocity.assign(p->size(), 0.0f);
      p->grad.assign(p->size(), 0.0f);
    }
  }
  layers_.erase(layers_.begin() + static_cast<std::ptrdiff_t>(idx));
  layers_.insert(layers_.begin() + static_cast<std::ptrdiff_t>(idx), std::make_move_iterator(replacement.begin()),
                 std::make_move_iterator(replacement.end()));
}

void Model::merge_chain(const std::array<std::string, 3>& names) {
  const std::size_t idx = index_of(names[0]);
  require(idx + 2 < layers_.size() && layers_[idx + 1].name == names[1] && layers_[idx + 2].name == names[2],
          ErrorCode::Graph, "merge_chain: '" + names[0] + "', '" + names[1] + "', '" + names[2] + "' are not consecutive");
  const auto& first = conv_of(layers_[idx], "merge_chain");
  const auto& core = conv_of(layers_[idx + 1], "merge_chain");
  const auto& last = conv_of(layers_[idx + 2], "merge_chain");
  const auto &fs = first.spec(), &cs = core.spec(), &ls = last.spec();
  const bool pointwise_ends = fs.kh == 1 && fs.kw == 1 && fs.stride == 1 && fs.padding == 0 && !fs.has_bias &&
                              ls.kh == 1 && ls.kw == 1 && ls.stride == 1 && ls.padding == 0;
  require(pointwise_ends && !cs.has_bias && cs.c_in == fs.c_out && ls.c_in == cs.c_out, ErrorCode::Graph,
          "merge_chain: layers do not form a pointwise -> core -> pointwise chain");

  const ConvSpec merged_spec{.c_in = fs.c_in, .c_out = ls.c_out, .kh = cs.kh, .kw = cs.kw, .stride = cs.stride,
                             .padding = cs.padding, .has_bias = ls.has_bias};
  tucker::Factors f;
  f.first = WeightTensor4(fs.weight_shape(), first.weight.value);
  f.core = WeightTensor4(cs.weight_shape(), core.weight.value);
  f.last = WeightTensor4(ls.weight_shape(), last.weight.value);
  if (ls.has_bias) f.bias = last.bias.value;
  auto [w, b] = tucker::reconstruct_conv(f, merged_spec);

  std::string merged_name = layers_[idx].chain_origin;
  if (merged_name.empty()) merged_name = names[1];
  Layer merged = make_conv(merged_name, merged_spec);
  auto& conv = std::get<Conv2d<float>>(merged.op);
  conv.weight.value = std::move(w.data);
  if (merged_spec.has_bias) conv.bias.value = std::move(b);

  layers_.erase(layers_.begin() + static_cast<std::ptrdiff_t>(idx), layers_.begin() + static_cast<std::ptrdiff_t>(idx + 3));
  layers_.insert(layers_.begin() + static_cast<std::ptrdiff_t>(idx), std::move(merged));
  validate();
}

std::vector<std::array<std::string, 3>> Model::chains() const {
  std::vector<std::array<std::string, 3>> out;
  for (std::size_t i = 0; i + 2 < layers_.size(); ++i)
    if (layers_[i].chain_role == ChainRole::First && layers_[i + 1].chain_role == ChainRole::Core &&
        layers_[i + 2].chain_role == ChainRole::Last)
      out.push_back({layers_[i].name, layers_[i + 1].name, layers_[i + 2].name});
  return out;
}

void initialize(Model& model, std::mt19937_64& rng) {
  for (auto& l : model.layers()) {
    if (auto* c = std::get_if<Conv2d<float>>(&l.op)) {
      const auto& s = c->spec();
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(s.c_in * s.kh * s.kw)));
      for (auto& v : c->weight.value) v = static_cast<float>(dist(rng));
      std::fill(c->bias.value.begin(), c->bias.value.end(), 0.0f);
    } else if (auto* lin = std::get_if<Linear<float>>(&l.op)) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(lin->in_features())));
      for (auto& v : lin->weight.value) v = static_cast<float>(dist(rng));
      std::fill(lin->bias.value.begin(), lin->bias.value.end(), 0.0f);
    } else if (auto* bn = std::get_if<BatchNorm<float>>(&l.op)) {
      std::fill(bn->gamma.value.begin(), bn->gamma.value.end(), 1.0f);
      std::fill(bn->beta.value.begin(), bn->beta.value.end(), 0.0f);
      std::fill(bn->running_mean.begin(), bn->running_mean.end(), 0.0f);
      std::fill(bn->running_var.begin(), bn->running_var.end(), 1.0f);
    }
    for (auto* p : l.params()) {
      p->grad.assign(p->size(), 0.0f);
      p->velocity.assign(p->size(), 0.0f);
    }
  }
}

namespace {

Model conv_stack(FeatureShape input, std::size_t classes, std::span<const std::size_t> widths,
                 std::span<const std::size_t> pool_after) {
  std::vector<Layer> layers;
  std::size_t channels = input.c, h = input.h, w = input.w;
  for (std::size_t b = 0; b < widths.size(); ++b) {
    const std::string id = std::to_string(b + 1);
    layers.push_back(make_conv("conv" + id, {.c_in = channels, .c_out = widths[b], .kh = 3, .kw = 3, .stride = 1,
                                             .padding = 1, .has_bias = true}));
    layers.push_back(make_batchnorm("bn" + id, widths[b]));
    layers.push_back(make_relu("relu" + id));
    channels = widths[b];
    if (std::find(pool_after.begin(), pool_after.end(), b + 1) != pool_after.end()) {
      layers.push_back(make_pool("pool" + id, PoolMode::Max));
      h /= 2;
      w /= 2;
    }
  }
  layers.push_back(make_linear("fc", channels * h * w, classes));
  return Model(input, std::move(layers));
}

}  // namespace

Model vgg_mini(FeatureShape input, std::size_t classes) {
  const std::size_t widths[] = {64, 64, 128, 128, 256, 256};
  const std::size_t pools[] = {2, 4, 6};
  return conv_stack(input, classes, widths, pools);
}

Model convnet_small(FeatureShape input, std::size_t classes) {
  const std::size_t widths[] = {32, 64, 64};
  const std::size_t pools[] = {1, 2, 3};
  return conv_stack(input, classes, widths, pools);
}

}  // namespace tktr::nn
