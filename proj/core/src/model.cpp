#include "fedrecon/model.hpp"

#include <cmath>

#include "fedrecon/error.hpp"
#include "fedrecon/ops.hpp"

namespace fedrecon::model {
namespace {

struct ConvSpec {
  std::string name;
  std::size_t in, out, k;
  double gain;
};

// Hidden convs feed a ReLU (gain sqrt(2)); the residual head starts small so
// the untrained network stays close to the identity.
constexpr double kReluGain = 1.4142135623730951;
constexpr double kHeadGain = 0.1;

std::vector<ConvSpec> unet_layers(const UNetConfig& cfg) {
  std::vector<ConvSpec> layers;
  std::size_t prev = cfg.in_channels;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t c = cfg.channels(l);
    layers.push_back({"enc" + std::to_string(l) + ".conv1", prev, c, 3, kReluGain});
    layers.push_back({"enc" + std::to_string(l) + ".conv2", c, c, 3, kReluGain});
    prev = c;
  }
  layers.push_back({"bottleneck.conv1", prev, prev, 3, kReluGain});
  layers.push_back({"bottleneck.conv2", prev, prev, 3, kReluGain});
  for (std::size_t l = cfg.depth; l-- > 0;) {
    const std::size_t c = cfg.channels(l);
    layers.push_back({"dec" + std::to_string(l) + ".up", prev, c, 3, kReluGain});
    layers.push_back({"dec" + std::to_string(l) + ".conv1", 2 * c, c, 3, kReluGain});
    layers.push_back({"dec" + std::to_string(l) + ".conv2", c, c, 3, kReluGain});
    prev = c;
  }
  layers.push_back({"out", prev, cfg.in_channels, 1, kHeadGain});
  return layers;
}

void add_conv(ParamSet& params, const ConvSpec& spec, Rng& rng, bool zero) {
  const std::size_t fan_in = spec.in * spec.k * spec.k;
  const double bound = spec.gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(spec.out * fan_in);
  for (auto& v : w) v = zero ? 0.0 : dist(rng);
  params.add(spec.name + ".weight", ad::Tensor({spec.out, spec.in, spec.k, spec.k}, std::move(w), true));
  params.add(spec.name + ".bias", ad::Tensor::zeros({spec.out}, true));
}

ad::Tensor conv_relu(const ParamSet& p, const std::string& name, const ad::Tensor& x) {
  return ad::relu(ad::conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), 1, 1));
}

void require_batch(const UNetConfig& cfg, const ad::Tensor& batch) {
  if (batch.rank() != 4 || batch.dim(1) != cfg.in_channels || batch.dim(2) != batch.dim(3)) {
    throw Error(ErrorKind::kShapeMismatch, "expected a [batch, " + std::to_string(cfg.in_channels) +
                                               ", H, H] input, got " + ad::shape_to_string(batch.shape()));
  }
  cfg.validate_image(batch.dim(2));
}

}  // namespace

void UNetConfig::validate() const {
  if (in_channels == 0 || base_channels == 0) throw Error(ErrorKind::kInvalidArgument, "channel counts must be positive");
  if (depth < 2) throw Error(ErrorKind::kInvalidArgument, "U-Net depth must be >= 2, got " + std::to_string(depth));
}

void UNetConfig::validate_image(std::size_t image_size) const {
  validate();
  if (image_size == 0 || image_size % (std::size_t{1} << depth) != 0) {
    throw Error(ErrorKind::kShapeMismatch, "image size " + std::to_string(image_size) + " is not divisible by 2^" +
                                               std::to_string(depth));
  }
}

ParamSet unet_init(const UNetConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamSet params;
  for (const auto& layer : unet_layers(cfg)) add_conv(params, layer, rng, false);
  return params;
}

std::size_t unet_param_count(const UNetConfig& cfg) {
  cfg.validate();
  std::size_t n = 0;
  for (const auto& l : unet_layers(cfg)) n += l.out * l.in * l.k * l.k + l.out;
  return n;
}

ParamSet encoder_view(const ParamSet& unet) { return unet.view(kEncoderPrefixes); }

EncoderOutput encoder_forward(const ParamSet& params, const UNetConfig& cfg, const ad::Tensor& batch,
                              std::string origin_site) {
  require_batch(cfg, batch);
  EncoderOutput out;
  ad::Tensor h = batch;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::string level = "enc" + std::to_string(l);
    h = conv_relu(params, level + ".conv1", h);
    h = conv_relu(params, level + ".conv2", h);
    out.skips.push_back(h);
    h = ad::maxpool2(h);
  }
  h = conv_relu(params, "bottleneck.conv1", h);
  h = conv_relu(params, "bottleneck.conv2", h);
  out.latent = {h, std::move(origin_site)};
  return out;
}

ad::Tensor decoder_forward(const ParamSet& params, const UNetConfig& cfg, const LatentBatch& latent,
                           const std::vector<ad::Tensor>& skips, const ad::Tensor& input) {
  if (skips.size() != cfg.depth) {
    throw Error(ErrorKind::kShapeMismatch, "decoder expects " + std::to_string(cfg.depth) + " skips, got " +
                                               std::to_string(skips.size()));
  }
  ad::Tensor h = latent.features;
  for (std::size_t l = cfg.depth; l-- > 0;) {
    const std::string level = "dec" + std::to_string(l);
    ad::Tensor up = conv_relu(params, level + ".up", ad::upsample_nearest2(h));
    h = ad::concat_channels(up, skips[l]);
    h = conv_relu(params, level + ".conv1", h);
    h = conv_relu(params, level + ".conv2", h);
  }
  ad::Tensor residual = ad::conv2d(h, params.at("out.weight"), params.at("out.bias"), 1, 0);
  if (residual.shape() != input.shape()) {
    throw Error(ErrorKind::kShapeMismatch, "decoder output " + ad::shape_to_string(residual.shape()) +
                                               " does not match input " + ad::shape_to_string(input.shape()));
  }
  return ad::add(input, residual);
}

ad::Tensor reconstruct(const ParamSet& params, const UNetConfig& cfg, const ad::Tensor& batch) {
  auto enc = encoder_forward(params, cfg, batch);
  return decoder_forward(params, cfg, enc.latent, enc.skips, batch);
}

ParamSet identifier_init(const DomainIdentifierConfig& cfg, Rng& rng, bool zero_last) {
  if (cfg.latent_channels == 0 || cfg.hidden_channels == 0) {
    throw Error(ErrorKind::kInvalidArgument, "identifier channel counts must be positive");
  }
  ParamSet params;
  add_conv(params, {std::string(kIdentifierPrefix) + "conv1", cfg.latent_channels, cfg.hidden_channels, 3, kReluGain},
           rng, false);
  add_conv(params, {std::string(kIdentifierPrefix) + "conv2", cfg.hidden_channels, 1, 3, 1.0}, rng, zero_last);
  return params;
}

ad::Tensor identifier_forward(const ParamSet& cparams, const DomainIdentifierConfig& cfg, const LatentBatch& latent) {
  const auto& z = latent.features;
  if (z.rank() != 4 || z.dim(1) != cfg.latent_channels) {
    throw Error(ErrorKind::kShapeMismatch, "identifier expects [batch, " + std::to_string(cfg.latent_channels) +
                                               ", h, w] latents, got " + ad::shape_to_string(z.shape()));
  }
  const std::string p(kIdentifierPrefix);
  ad::Tensor h = ad::conv2d(z, cparams.at(p + "conv1.weight"), cparams.at(p + "conv1.bias"), 1, 1);
  h = ad::leaky_relu(h, cfg.leaky_slope);
  h = ad::conv2d(h, cparams.at(p + "conv2.weight"), cparams.at(p + "conv2.bias"), 1, 1);
  return ad::sigmoid(ad::global_avg_pool(h));
}

ad::Tensor stack_images(const std::vector<ad::Tensor>& images) {
  if (images.empty()) throw Error(ErrorKind::kInvalidArgument, "cannot stack an empty image list");
  const ad::Shape shape = images.front().shape();
  if (shape.size() != 2) throw Error(ErrorKind::kShapeMismatch, "expected H x W images, got " + ad::shape_to_string(shape));
  std::vector<double> data;
  data.reserve(images.size() * ad::shape_numel(shape));
  for (const auto& img : images) {
    if (img.shape() != shape) throw Error(ErrorKind::kShapeMismatch, "stack_images: " + ad::shape_to_string(img.shape()) + " vs " + ad::shape_to_string(shape));
    data.insert(data.end(), img.data().begin(), img.data().end());
  }
  return ad::Tensor({images.size(), 1, shape[0], shape[1]}, std::move(data));
}

}  // namespace fedrecon::model
