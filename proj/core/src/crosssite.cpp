#include "fedrecon/crosssite.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedrecon/error.hpp"
#include "fedrecon/ops.hpp"
#include "fedrecon/parallel.hpp"

namespace fedrecon::crosssite {
namespace {

constexpr std::uint64_t kIdentifierStream = 0x6964656eULL;
constexpr std::uint64_t kTargetStream = 0x74617267ULL;

void require_same_batch(const char* op, const model::LatentBatch& z_s, const model::LatentBatch& z_t) {
  if (z_s.features.shape() != z_t.features.shape()) {
    throw Error(ErrorKind::kShapeMismatch, std::string(op) + ": source latents " +
                                               ad::shape_to_string(z_s.features.shape()) + " vs target latents " +
                                               ad::shape_to_string(z_t.features.shape()));
  }
}

ParamSet frozen(const ParamSet& params) {
  ParamSet out = params.clone();
  out.set_requires_grad(false);
  return out;
}

model::LatentBatch detached(const model::LatentBatch& z) { return {z.features.detach(), z.origin_site}; }

}  // namespace

std::string target_endpoint(const std::string& site_id) { return "target:" + site_id; }

ad::Tensor identifier_loss(const ParamSet& cparams, const model::DomainIdentifierConfig& cfg,
                           const model::LatentBatch& z_s, const model::LatentBatch& z_t) {
  require_same_batch("identifier_loss", z_s, z_t);
  const ad::Tensor p_s = model::identifier_forward(cparams, cfg, detached(z_s));
  const ad::Tensor p_t = model::identifier_forward(cparams, cfg, detached(z_t));
  return ad::add(ad::mean(ad::bce_terms(p_s, 1.0)), ad::mean(ad::bce_terms(p_t, 0.0)));
}

ad::Tensor encoder_adv_loss(const ParamSet& cparams, const model::DomainIdentifierConfig& cfg,
                            const model::LatentBatch& z_s, const model::LatentBatch& z_t, bool inverted_source_term) {
  require_same_batch("encoder_adv_loss", z_s, z_t);
  const ParamSet c = frozen(cparams);
  const ad::Tensor p_s = model::identifier_forward(c, cfg, z_s);
  const ad::Tensor p_t = model::identifier_forward(c, cfg, z_t);
  return ad::add(ad::mean(ad::bce_terms(p_s, inverted_source_term ? 0.0 : 1.0)), ad::mean(ad::bce_terms(p_t, 1.0)));
}

double identifier_accuracy(const ParamSet& cparams, const model::DomainIdentifierConfig& cfg,
                           const model::LatentBatch& z_s, const model::LatentBatch& z_t) {
  const ParamSet c = frozen(cparams);
  const auto p_s = model::identifier_forward(c, cfg, detached(z_s));
  const auto p_t = model::identifier_forward(c, cfg, detached(z_t));
  std::size_t correct = 0;
  for (double v : p_s.data()) correct += v > 0.5 ? 1 : 0;
  for (double v : p_t.data()) correct += v < 0.5 ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(p_s.numel() + p_t.numel());
}

TargetSite TargetSite::from_dataset(const sites::SiteDataset& ds, const fl::FLConfig& cfg) {
  if (ds.train.empty()) throw Error(ErrorKind::kInvalidArgument, "target site " + ds.profile.site_id + " has no inputs");
  TargetSite t;
  t.id_ = ds.profile.site_id;
  t.cfg_ = &cfg;
  t.inputs_.reserve(ds.train.size());
  for (const auto& s : ds.train) t.inputs_.push_back(s.input.clone());
  return t;
}

void TargetSite::deploy(const ParamSet& global) {
  handle_.encoder_params = model::encoder_view(global).clone();
  handle_.encoder_params.set_requires_grad(true);
  if (!adam_ready_ || !cfg_->persist_adam) {
    adam_ = AdamState::for_params(handle_.encoder_params);
    adam_ready_ = true;
  }
  snapshot_ = ParamSet();
  pending_.clear();
}

void TargetSite::begin_step() {
  if (handle_.encoder_params.empty()) throw Error(ErrorKind::kProtocol, "target " + id_ + " has no deployed encoder");
  snapshot_ = handle_.encoder_params.clone();
  snapshot_.set_requires_grad(true);
  pending_.clear();
}

model::LatentBatch TargetSite::serve_latents(std::size_t source_index, std::size_t round, std::size_t step,
                                             std::size_t batch_size) {
  if (snapshot_.empty()) throw Error(ErrorKind::kProtocol, "target " + id_ + ": latent request outside a step");
  auto rng = fl::derive_rng(fl::client_seed(cfg_->seed, source_index), kTargetStream, round, step);
  std::vector<std::size_t> order(inputs_.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<ad::Tensor> images;
  images.reserve(batch_size);
  while (images.size() < batch_size) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size() && images.size() < batch_size; ++i) images.push_back(inputs_[order[i]]);
  }
  auto enc = model::encoder_forward(snapshot_, cfg_->unet, model::stack_images(images), id_);
  if (pending_.size() <= source_index) pending_.resize(source_index + 1);
  pending_[source_index] = enc.latent.features;
  return detached(enc.latent);
}

void TargetSite::apply_update(std::size_t source_index, const ad::Tensor& latent_grad, double lr) {
  if (source_index >= pending_.size() || !pending_[source_index].defined()) {
    throw Error(ErrorKind::kProtocol, "target " + id_ + ": encoder update without a served latent batch");
  }
  ad::Tensor z = pending_[source_index];
  pending_[source_index] = ad::Tensor();
  if (z.shape() != latent_grad.shape()) {
    throw Error(ErrorKind::kShapeMismatch, "encoder update gradient " + ad::shape_to_string(latent_grad.shape()) +
                                               " vs latent " + ad::shape_to_string(z.shape()));
  }
  snapshot_.zero_grad();
  ad::backward(ad::sum(ad::mul(z, latent_grad)));
  auto& live = handle_.encoder_params;
  for (std::size_t e = 0; e < live.size(); ++e) {
    ad::Tensor param = live.entries()[e].second;
    const auto g = snapshot_.entries()[e].second.grad();
    param.accumulate_grad(g.empty() ? std::vector<double>(param.numel(), 0.0) : std::vector<double>(g.begin(), g.end()));
  }
  adam_step(live, adam_, lr);
  snapshot_.zero_grad();
  ++handle_.version;
}

SourceSite::SourceSite(std::size_t index, const sites::SiteDataset& data, const fl::FLConfig& cfg,
                       const std::string& target_id)
    : client_(index, data, cfg), cfg_(&cfg) {
  auto rng = fl::derive_rng(cfg.seed, kIdentifierStream, index);
  pair_.source_site = data.profile.site_id;
  pair_.target_site = target_id;
  pair_.identifier_params = model::identifier_init(cfg.identifier(), rng);
  pair_.identifier_adam = AdamState::for_params(pair_.identifier_params);
}

ParamSet SourceSite::begin_round(const ParamSet& deployed) {
  ParamSet params = client_.begin_round(deployed);
  encoder_adam_ = AdamState::for_params(model::encoder_view(params));
  return params;
}

double SourceSite::reconstruction_step(ParamSet& params, const std::vector<std::size_t>& batch, double lr) {
  return client_.train_batch(params, batch, lr);
}

double SourceSite::identifier_step(const ParamSet& params, const std::vector<std::size_t>& batch,
                                   const model::LatentBatch& z_t, double lr) {
  const ParamSet encoder = frozen(model::encoder_view(params));
  const auto z_s = model::encoder_forward(encoder, cfg_->unet, client_.batch_inputs(batch), id()).latent;
  const ad::Tensor loss = identifier_loss(pair_.identifier_params, cfg_->identifier(), z_s, z_t);
  ad::backward(loss);
  adam_step(pair_.identifier_params, pair_.identifier_adam, lr);
  return loss.item();
}

ad::Tensor SourceSite::encoder_step(ParamSet& params, const std::vector<std::size_t>& batch,
                                    const model::LatentBatch& z_t, double lr) {
  ParamSet encoder = model::encoder_view(params);
  const auto z_s = model::encoder_forward(encoder, cfg_->unet, client_.batch_inputs(batch), id()).latent;
  ad::Tensor zt_leaf = z_t.features.clone();
  zt_leaf.set_requires_grad(true);
  const ad::Tensor loss = ad::scale(
      encoder_adv_loss(pair_.identifier_params, cfg_->identifier(), z_s, {zt_leaf, z_t.origin_site},
                       cfg_->inverted_source_term),
      cfg_->lambda_adv);
  ad::backward(loss);
  adam_step(encoder, encoder_adam_, lr);
  return ad::Tensor(zt_leaf.shape(), std::vector<double>(zt_leaf.grad().begin(), zt_leaf.grad().end()));
}

CrossSiteResult run_flmrcm(const fl::FLConfig& cfg, const std::vector<const sites::SiteDataset*>& sources,
                           const sites::SiteDataset& target) {
  cfg.validate();
  if (sources.empty()) throw Error(ErrorKind::kInvalidArgument, "run_flmrcm needs at least one source site");
  const std::string tid = target_endpoint(target.profile.site_id);
  std::set<std::string> ids{fl::kServerId, tid};
  fl::PrivacyAuditor auditor(cfg.image_size);
  auditor.register_dataset(target);
  for (const auto* s : sources) {
    if (!ids.insert(s->profile.site_id).second) {
      throw Error(ErrorKind::kInvalidArgument, "source site id " + s->profile.site_id + " is used twice or is reserved");
    }
    auditor.register_dataset(*s);
  }
  fl::Channel channel(std::move(auditor));

  std::vector<SourceSite> src;
  src.reserve(sources.size());
  for (std::size_t k = 0; k < sources.size(); ++k) src.emplace_back(k, *sources[k], cfg, target.profile.site_id);
  TargetSite tgt = TargetSite::from_dataset(target, cfg);
  const bool align = cfg.lambda_adv != 0.0;

  CrossSiteResult result;
  ParamSet global = fl::initial_params(cfg);
  const std::size_t n = src.size();
  for (std::size_t q = 0; q < cfg.global_rounds; ++q) {
    const double lr = cfg.lr_for_round(q);
    const auto round = static_cast<std::uint32_t>(q);
    for (const auto& s : src) channel.send({fl::MessageKind::kDeploy, round, fl::kServerId, s.id(), global});
    channel.send({fl::MessageKind::kDeploy, round, fl::kServerId, tid, global});
    tgt.deploy(std::get<ParamSet>(channel.receive(tid, fl::kServerId).payload));

    std::vector<ParamSet> local(n);
    std::vector<std::vector<std::vector<std::size_t>>> batches(n);
    std::vector<double> loss_sum(n, 0.0);
    std::size_t steps = 0;
    for (std::size_t k = 0; k < n; ++k) {
      local[k] = src[k].begin_round(std::get<ParamSet>(channel.receive(src[k].id(), fl::kServerId).payload));
      batches[k] = src[k].client().round_batches(q);
      steps = std::max(steps, batches[k].size());
    }

    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<std::size_t> active;
      for (std::size_t k = 0; k < n; ++k) {
        if (step < batches[k].size()) active.push_back(k);
      }
      tgt.begin_step();
      parallel_for(active.size(), cfg.threads, [&](std::size_t i) {
        const std::size_t k = active[i];
        loss_sum[k] += src[k].reconstruction_step(local[k], batches[k][step], lr);
        channel.send({fl::MessageKind::kLatentRequest, round, src[k].id(), tid, {}});
      });
      for (std::size_t k : active) {
        channel.receive(tid, src[k].id());
        auto z_t = tgt.serve_latents(k, q, step, batches[k][step].size());
        channel.send({fl::MessageKind::kLatentReply, round, tid, src[k].id(), std::move(z_t)});
      }
      parallel_for(active.size(), cfg.threads, [&](std::size_t i) {
        const std::size_t k = active[i];
        const auto& batch = batches[k][step];
        const auto z_t = std::get<model::LatentBatch>(channel.receive(src[k].id(), tid).payload);
        src[k].identifier_step(local[k], batch, z_t, lr);
        if (!align) return;
        ad::Tensor grad = src[k].encoder_step(local[k], batch, z_t, lr);
        channel.send({fl::MessageKind::kEncoderUpdate, round, src[k].id(), tid, model::LatentBatch{grad, src[k].id()}});
      });
      if (align) {
        for (std::size_t k : active) {
          const auto update = std::get<model::LatentBatch>(channel.receive(tid, src[k].id()).payload);
          tgt.apply_update(k, update.features, lr);
        }
      }
    }

    for (std::size_t k = 0; k < n; ++k) {
      channel.send({fl::MessageKind::kUpload, round, src[k].id(), fl::kServerId, std::move(local[k])});
    }
    std::vector<ParamSet> uploads;
    std::vector<double> weights;
    for (auto& s : src) {
      uploads.push_back(std::get<ParamSet>(channel.receive(fl::kServerId, s.id()).payload));
      if (cfg.weighted_average) weights.push_back(static_cast<double>(s.client().train_size()));
    }
    global = fl::aggregate(uploads, weights);
    for (const auto& [name, t] : global) {
      if (name.starts_with(model::kIdentifierPrefix)) {
        throw Error(ErrorKind::kProtocol, "identifier parameter " + name + " reached the server aggregate");
      }
    }

    fl::RoundRecord rec{q, lr, {}, 0, 0, 0, 0};
    for (std::size_t k = 0; k < n; ++k) {
      rec.clients.push_back({src[k].id(), loss_sum[k] / static_cast<double>(batches[k].size())});
    }
    result.run.rounds.push_back(std::move(rec));
  }
  result.run.messages = channel.records();
  for (const auto& m : result.run.messages) {
    auto& rec = result.run.rounds.at(m.round);
    rec.bytes += m.bytes;
    if (m.kind == fl::MessageKind::kDeploy) ++rec.deploy_messages;
    else if (m.kind == fl::MessageKind::kUpload) ++rec.upload_messages;
    else ++rec.latent_messages;
  }
  result.run.global = std::move(global);
  for (auto& s : src) result.pairs.push_back(s.pair());
  result.target_encoder = tgt.encoder();
  return result;
}

namespace {

std::vector<double> mean_latent(const ParamSet& params, const model::UNetConfig& cfg, const sites::SiteDataset& ds) {
  if (ds.test.empty()) throw Error(ErrorKind::kInvalidArgument, "site " + ds.profile.site_id + " has no test samples");
  const ParamSet encoder = frozen(model::encoder_view(params));
  std::vector<double> acc;
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < ds.test.size(); start += kChunk) {
    std::vector<ad::Tensor> images;
    for (std::size_t i = start; i < std::min(ds.test.size(), start + kChunk); ++i) images.push_back(ds.test[i].input);
    const auto z = model::encoder_forward(encoder, cfg, model::stack_images(images)).latent.features;
    const std::size_t per = z.numel() / images.size();
    if (acc.empty()) acc.assign(per, 0.0);
    for (std::size_t b = 0; b < images.size(); ++b) {
      for (std::size_t j = 0; j < per; ++j) acc[j] += z.data()[b * per + j];
    }
  }
  for (double& v : acc) v /= static_cast<double>(ds.test.size());
  return acc;
}

}  // namespace

double latent_distance(const ParamSet& params, const model::UNetConfig& cfg,
                       const std::vector<const sites::SiteDataset*>& sources, const sites::SiteDataset& target) {
  if (sources.empty()) throw Error(ErrorKind::kInvalidArgument, "latent_distance needs at least one source site");
  const auto mt = mean_latent(params, cfg, target);
  double total = 0.0;
  for (const auto* s : sources) {
    const auto ms = mean_latent(params, cfg, *s);
    double d2 = 0.0;
    for (std::size_t j = 0; j < ms.size(); ++j) d2 += (ms[j] - mt[j]) * (ms[j] - mt[j]);
    total += std::sqrt(d2);
  }
  return total / static_cast<double>(sources.size());
}

}  // namespace fedrecon::crosssite
