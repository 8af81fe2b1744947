#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedrecon/adam.hpp"
#include "fedrecon/fl.hpp"
#include "fedrecon/model.hpp"

namespace fedrecon::crosssite {

// Identifier C^k for one source -> target pair. Never leaves the source site.
struct AlignmentPair {
  std::string source_site;
  std::string target_site;
  ParamSet identifier_params;
  AdamState identifier_adam;
};

// The target site's copy of the encoder E_t.
struct TargetEncoderHandle {
  ParamSet encoder_params;
  std::uint64_t version = 0;
};

// -mean log C(z_s) - mean log(1 - C(z_t)). Latents are treated as constants;
// gradients flow to `cparams` only.
ad::Tensor identifier_loss(const ParamSet& cparams, const model::DomainIdentifierConfig& cfg,
                           const model::LatentBatch& z_s, const model::LatentBatch& z_t);

// -mean log C(z_s) - mean log C(z_t), or with `inverted_source_term`
// -mean log(1 - C(z_s)) - mean log C(z_t). `cparams` are treated as
// constants; gradients flow into whatever produced the latents.
ad::Tensor encoder_adv_loss(const ParamSet& cparams, const model::DomainIdentifierConfig& cfg,
                            const model::LatentBatch& z_s, const model::LatentBatch& z_t,
                            bool inverted_source_term = false);

// Fraction of samples classified correctly (C(z_s) > 0.5, C(z_t) < 0.5).
double identifier_accuracy(const ParamSet& cparams, const model::DomainIdentifierConfig& cfg,
                           const model::LatentBatch& z_s, const model::LatentBatch& z_t);

// The target institution. Holds only the under-sampled inputs of its train
// split; references are never copied in.
class TargetSite {
 public:
  static TargetSite from_dataset(const sites::SiteDataset& ds, const fl::FLConfig& cfg);

  const std::string& id() const noexcept { return id_; }
  const TargetEncoderHandle& encoder() const noexcept { return handle_; }
  std::size_t input_count() const noexcept { return inputs_.size(); }

  // Replaces E_t by the encoder of the deployed global model.
  void deploy(const ParamSet& global);
  // Freezes the encoder snapshot that serves every source within one step.
  void begin_step();
  // Forward of the step snapshot on a target batch of `batch_size` inputs.
  model::LatentBatch serve_latents(std::size_t source_index, std::size_t round, std::size_t step,
                                   std::size_t batch_size);
  // Backpropagates the latent gradient shipped by source `source_index`
  // through the snapshot graph and takes one Adam step on E_t.
  void apply_update(std::size_t source_index, const ad::Tensor& latent_grad, double lr);

 private:
  TargetSite() = default;

  std::string id_;
  const fl::FLConfig* cfg_ = nullptr;
  std::vector<ad::Tensor> inputs_;
  TargetEncoderHandle handle_;
  AdamState adam_;
  bool adam_ready_ = false;
  ParamSet snapshot_;
  std::vector<ad::Tensor> pending_;  // per source: latent output of the snapshot graph
};

// One source site under FL-MRCM: the FL-MR client plus its identifier and
// the Adam state of the encoder alignment sub-step.
class SourceSite {
 public:
  SourceSite(std::size_t index, const sites::SiteDataset& data, const fl::FLConfig& cfg, const std::string& target_id);

  fl::Client& client() noexcept { return client_; }
  const std::string& id() const noexcept { return client_.id(); }
  AlignmentPair& pair() noexcept { return pair_; }

  // Start of a round: fresh local model from the deployed one.
  ParamSet begin_round(const ParamSet& deployed);
  // Sub-step 1: reconstruction update, identical to a local_train step.
  double reconstruction_step(ParamSet& params, const std::vector<std::size_t>& batch, double lr);
  // Sub-step 2: identifier update on L_advC with both encoders frozen.
  double identifier_step(const ParamSet& params, const std::vector<std::size_t>& batch,
                         const model::LatentBatch& z_t, double lr);
  // Sub-step 3: E_s update on lambda * L_advE with C frozen. Returns dL/dz_t.
  ad::Tensor encoder_step(ParamSet& params, const std::vector<std::size_t>& batch, const model::LatentBatch& z_t,
                          double lr);

 private:
  fl::Client client_;
  const fl::FLConfig* cfg_;
  AlignmentPair pair_;
  AdamState encoder_adam_;
};

struct CrossSiteResult {
  fl::RunResult run;
  std::vector<AlignmentPair> pairs;
  TargetEncoderHandle target_encoder;
};

// Channel endpoint of the alignment target. Distinct from the site's own
// client endpoint, so a site may be both a source and the target.
std::string target_endpoint(const std::string& site_id);

// Federated training over `sources` with adversarial alignment of each
// source's latents to those of `target`. Only the reconstruction network is
// aggregated. `target` may also be one of the sources.
CrossSiteResult run_flmrcm(const fl::FLConfig& cfg, const std::vector<const sites::SiteDataset*>& sources,
                           const sites::SiteDataset& target);

// mean over sources of || mean z_s - mean z_t ||_2, latents from the encoder
// of `params` on the test splits.
double latent_distance(const ParamSet& params, const model::UNetConfig& cfg,
                       const std::vector<const sites::SiteDataset*>& sources, const sites::SiteDataset& target);

}  // namespace fedrecon::crosssite
