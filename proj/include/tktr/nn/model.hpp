#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tktr/nn/layers.hpp"
#include "tktr/tucker.hpp"

namespace tktr::nn {

enum class LayerKind : std::uint8_t { Conv = 0, BatchNorm = 1, Relu = 2, MaxPool = 3, AvgPool = 4, Linear = 5 };

const char* to_string(LayerKind kind);

/// Position of a conv inside a decomposed pointwise -> core -> pointwise chain.
enum class ChainRole : std::uint8_t { None = 0, First = 1, Core = 2, Last = 3 };

using LayerOp = std::variant<Conv2d<float>, BatchNorm<float>, Relu<float>, Pool2<float>, Linear<float>>;

struct Layer {
  std::string name;
  LayerOp op;
  std::string chain_origin;  // name of the conv this chain member was decomposed from
  ChainRole chain_role = ChainRole::None;

  LayerKind kind() const;
  std::vector<Param<float>*> params();
  std::vector<const Param<float>*> params() const;
  std::size_t param_count() const;
};

Layer make_conv(std::string name, const ConvSpec& spec);
Layer make_batchnorm(std::string name, std::size_t channels);
Layer make_relu(std::string name);
Layer make_pool(std::string name, PoolMode mode);
Layer make_linear(std::string name, std::size_t in_features, std::size_t out_features);

/// Output names of a chain built from conv `name`.
std::array<std::string, 3> chain_names(const std::string& name);

/// Builds the three conv layers of a Tucker chain.
std::vector<Layer> make_chain(const std::string& origin, const ConvSpec& spec, const tucker::Factors& f);

/// Ordered stack of layers ending in a linear classifier (softmax cross-entropy loss).
class Model {
 public:
  Model() = default;
  Model(FeatureShape input, std::vector<Layer> layers);

  const FeatureShape& input_shape() const { return input_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  std::size_t num_classes() const;

  /// Shape entering each layer; entry i is the input of layer i, the last entry is the logits shape.
  std::vector<FeatureShape> shapes() const;

  std::size_t index_of(const std::string& name) const;  // throws Graph on unknown names
  const Layer& layer(const std::string& name) const { return layers_[index_of(name)]; }
  Layer& layer(const std::string& name) { return layers_[index_of(name)]; }

  std::size_t param_count() const;
  /// Multiply-accumulates of convs and linears for one sample's forward pass.
  std::uint64_t macs_per_sample() const;

  Activation forward(const Activation& x, const Exec& ex);
  /// Backpropagates d loss / d logits through every layer, filling parameter gradients.
  void backward(const Activation& grad_logits, const Exec& ex);

  std::vector<Param<float>*> params();
  void zero_grad();

  /// Swaps `name` for `replacement`; the replacement must map the same input
  /// shape to the same output shape. Momentum of the new layers starts at zero.
  void replace_layer(const std::string& name, std::vector<Layer> replacement);

  /// Contracts a three-conv chain back into a single conv named after its origin.
  void merge_chain(const std::array<std::string, 3>& names);

  /// Names of every chain currently in the model, in layer order.
  std::vector<std::array<std::string, 3>> chains() const;

  /// Checks consecutive shapes, unique names and the classifier head; throws Graph.
  void validate() const;

 private:
  FeatureShape input_;
  std::vector<Layer> layers_;
};

/// Zero-mean Gaussian weights with std sqrt(2 / fan_in) for convs and linears;
/// biases zero, batchnorm scale 1 and shift 0.
void initialize(Model& model, std::mt19937_64& rng);

/// Six 3x3 conv blocks (64, 64, 128, 128, 256, 256) with batchnorm and ReLU,
/// 2x2 max-pooling after blocks 2, 4 and 6, and a linear head.
Model vgg_mini(FeatureShape input = {3, 32, 32}, std::size_t classes = 10);

/// Three conv blocks (32, 64, 64), each followed by pooling, and a linear head.
Model convnet_small(FeatureShape input = {1, 28, 28}, std::size_t classes = 10);

}  // namespace tktr::nn
