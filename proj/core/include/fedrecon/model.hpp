#pragma once

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fedrecon/param_set.hpp"
#include "fedrecon/tensor.hpp"

namespace fedrecon::model {

using Rng = std::mt19937_64;

// U-Net layout for depth D and base width B (c_l = B * 2^l):
//
//   enc{l}.conv{1,2}     3x3 double conv, c_l channels, then maxpool2    l = 0..D-1
//   bottleneck.conv{1,2} 3x3 double conv at c_{D-1} channels -> latent z
//   dec{l}.up            nearest x2 upsample + 3x3 conv to c_l            l = D-1..0
//   dec{l}.conv{1,2}     3x3 double conv on concat(up, skip_l) -> c_l
//   out                  1x1 conv c_0 -> 1, added to the input (residual)
//
// Every conv has ".weight" [out, in, k, k] and ".bias" [out]; all hidden
// convs are followed by ReLU.
struct UNetConfig {
  std::size_t in_channels = 1;
  std::size_t base_channels = 8;
  std::size_t depth = 3;

  std::size_t channels(std::size_t level) const { return base_channels << level; }
  std::size_t latent_channels() const { return channels(depth - 1); }
  std::size_t latent_size(std::size_t image_size) const { return image_size >> depth; }
  void validate() const;
  void validate_image(std::size_t image_size) const;
};

// Parameter name prefixes of the encoder half (the part aligned across sites).
inline constexpr std::string_view kEncoderPrefixes[] = {"enc", "bottleneck."};
// Every identifier parameter name starts with this.
inline constexpr std::string_view kIdentifierPrefix = "ident.";

struct LatentBatch {
  ad::Tensor features;  // batch x latent_channels x h x w
  std::string origin_site;
};

struct EncoderOutput {
  LatentBatch latent;
  std::vector<ad::Tensor> skips;  // skips[l] is the level-l double-conv output
};

ParamSet unet_init(const UNetConfig& cfg, Rng& rng);
std::size_t unet_param_count(const UNetConfig& cfg);
ParamSet encoder_view(const ParamSet& unet);

EncoderOutput encoder_forward(const ParamSet& params, const UNetConfig& cfg, const ad::Tensor& batch,
                              std::string origin_site = {});
ad::Tensor decoder_forward(const ParamSet& params, const UNetConfig& cfg, const LatentBatch& latent,
                           const std::vector<ad::Tensor>& skips, const ad::Tensor& input);
ad::Tensor reconstruct(const ParamSet& params, const UNetConfig& cfg, const ad::Tensor& batch);

struct DomainIdentifierConfig {
  std::size_t latent_channels = 32;
  std::size_t hidden_channels = 16;
  double leaky_slope = 0.2;
};

// ident.conv1 (3x3, latent -> hidden) -> leaky_relu -> ident.conv2 (3x3,
// hidden -> 1) -> global average pool -> sigmoid. `zero_last` zeroes
// ident.conv2 so the initial output is exactly 0.5.
ParamSet identifier_init(const DomainIdentifierConfig& cfg, Rng& rng, bool zero_last = false);
// Per-sample probability that the latent came from the source site, [batch, 1].
ad::Tensor identifier_forward(const ParamSet& cparams, const DomainIdentifierConfig& cfg, const LatentBatch& latent);

// Stacks H x W images into a [n, 1, H, W] batch.
ad::Tensor stack_images(const std::vector<ad::Tensor>& images);

}  // namespace fedrecon::model
