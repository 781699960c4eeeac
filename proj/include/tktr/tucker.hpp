#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tktr/conv_spec.hpp"
#include "tktr/tensor.hpp"

namespace tktr::tucker {

/// Channel ranks of a Tucker-2 factorisation: k1 on the input side, k2 on the output side.
struct RankPair {
  std::size_t k1 = 1;
  std::size_t k2 = 1;
  friend bool operator==(const RankPair&, const RankPair&) = default;
};

/// Weights of the pointwise -> spatial core -> pointwise chain that replaces one conv.
struct Factors {
  WeightTensor4 first;      // K1 x C_in x 1 x 1
  WeightTensor4 core;       // K2 x K1 x kh x kw
  WeightTensor4 last;       // C_out x K2 x 1 x 1
  std::vector<float> bias;  // C_out, or empty when the conv has none

  RankPair ranks() const { return {first.c_out(), core.c_out()}; }
};

/// Parameter compression (m) and multiply-accumulate speedup (e) of a chain.
struct CompressionEstimate {
  double m = 0.0;
  double e = 0.0;
};

/// Layers smaller than this, or without spatial extent, are left alone.
struct EligibilityPolicy {
  std::size_t min_channels = 16;
  double min_compression = 1.05;
};

bool is_eligible(const ConvSpec& spec, const EligibilityPolicy& policy = {});

/// Per-mode EVBMF ranks and the verdict derived from them.
struct RankSelection {
  std::size_t evbmf_k1 = 0;            // from the mode-1 (input channel) unfolding
  std::size_t evbmf_k2 = 0;            // from the mode-0 (output channel) unfolding
  std::optional<RankPair> ranks;       // empty means no compression
  double m = 0.0;                      // compression at the EVBMF ranks, 0 when a rank is 0
};

/// `sigma2` fixes the EVBMF noise variance; by default it is estimated per unfolding.
RankSelection select_ranks_detailed(const WeightTensor4& w, double min_compression = 1.05,
                                    std::optional<double> sigma2 = std::nullopt);

/// EVBMF ranks of both channel unfoldings; empty when either rank is 0 or
/// the resulting compression does not exceed `min_compression`.
std::optional<RankPair> select_ranks(const WeightTensor4& w, double min_compression = 1.05,
                                     std::optional<double> sigma2 = std::nullopt);

/// Tucker-2 core and orthonormal channel factors, w ~ core x0 u_out x1 u_in.
struct Tucker2 {
  WeightTensor4 core;  // K2 x K1 x kh x kw
  Matrix u_out;        // C_out x K2
  Matrix u_in;         // C_in x K1
  std::vector<double> fit_history;  // ||w - approx||_F after HOSVD init and each HOOI sweep
};

struct HooiOptions {
  double tolerance = 1e-5;  // relative change of the fit error
  int max_iterations = 20;
};

Tucker2 partial_tucker2(const WeightTensor4& w, const RankPair& r, const HooiOptions& opts = {});

/// core x0 u_out x1 u_in.
WeightTensor4 expand(const Tucker2& t);

Factors decompose_conv(const ConvSpec& spec, const WeightTensor4& w, std::span<const float> bias,
                       const RankPair& r, const HooiOptions& opts = {});

/// Contracts a chain back into one conv weight and its bias.
std::pair<WeightTensor4, std::vector<float>> reconstruct_conv(const Factors& f, const ConvSpec& spec);

CompressionEstimate estimate_compression(const ConvSpec& spec, const RankPair& r, Extent in, Extent out);

/// Chain parameter count excluding bias.
std::size_t chain_weight_count(const ConvSpec& spec, const RankPair& r);

}  // namespace tktr::tucker
