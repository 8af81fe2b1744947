#include "fedrecon/fl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedrecon/error.hpp"
#include "fedrecon/ops.hpp"
#include "fedrecon/parallel.hpp"
#include "json.hpp"

namespace fedrecon::fl {
namespace {

constexpr std::uint64_t kInitStream = 0x696e6974ULL;
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;

}  // namespace

void FLConfig::validate() const {
  if (local_epochs < 1) throw Error(ErrorKind::kInvalidArgument, "local_epochs (P) must be >= 1");
  if (global_rounds < 1) throw Error(ErrorKind::kInvalidArgument, "global_rounds (Q) must be >= 1");
  if (!(lr1 > lr2 && lr2 > 0.0)) throw Error(ErrorKind::kInvalidArgument, "learning rates must satisfy lr1 > lr2 > 0");
  if (!(lr1_fraction > 0.0 && lr1_fraction <= 1.0)) throw Error(ErrorKind::kInvalidArgument, "lr1_fraction must lie in (0, 1]");
  if (batch_size < 1) throw Error(ErrorKind::kInvalidArgument, "batch_size must be >= 1");
  if (!(lambda_adv >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "lambda_adv must be >= 0");
  if (!kspace::is_power_of_two(image_size) || image_size < 16) {
    throw Error(ErrorKind::kInvalidArgument, "image_size must be a power of two >= 16, got " + std::to_string(image_size));
  }
  unet.validate_image(image_size);
}

std::size_t FLConfig::lr1_rounds() const {
  const auto n = static_cast<std::size_t>(std::lround(lr1_fraction * static_cast<double>(global_rounds)));
  return std::clamp<std::size_t>(n, 1, global_rounds);
}

double FLConfig::lr_for_round(std::size_t round) const { return round < lr1_rounds() ? lr1 : lr2; }

model::DomainIdentifierConfig FLConfig::identifier() const {
  return {unet.latent_channels(), identifier_hidden, 0.2};
}

std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(c),    static_cast<std::uint32_t>(c >> 32)};
  return std::mt19937_64(seq);
}

std::uint64_t client_seed(std::uint64_t global_seed, std::size_t client_index) {
  auto rng = derive_rng(global_seed, 0x636c6965ULL, client_index);
  return rng();
}

ParamSet initial_params(const FLConfig& cfg) {
  auto rng = derive_rng(cfg.seed, kInitStream);
  return model::unet_init(cfg.unet, rng);
}

Client::Client(std::size_t index, const sites::SiteDataset& data, const FLConfig& cfg)
    : index_(index), data_(&data), cfg_(&cfg) {
  if (data.train.empty()) throw Error(ErrorKind::kInvalidArgument, "site " + data.profile.site_id + " has no training data");
  if (data.image_size != cfg.image_size) {
    throw Error(ErrorKind::kShapeMismatch, "site " + data.profile.site_id + " has image size " +
                                               std::to_string(data.image_size) + ", config expects " +
                                               std::to_string(cfg.image_size));
  }
}

std::vector<std::vector<std::size_t>> Client::round_batches(std::size_t round) const {
  const std::uint64_t seed = client_seed(cfg_->seed, index_);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t p = 0; p < cfg_->local_epochs; ++p) {
    const std::uint64_t epoch = round * cfg_->local_epochs + p;
    std::vector<std::size_t> order(data_->train.size());
    std::iota(order.begin(), order.end(), 0);
    auto rng = derive_rng(seed, kShuffleStream, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg_->batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_->batch_size);
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return batches;
}

ParamSet Client::begin_round(const ParamSet& deployed) {
  ParamSet params = deployed.clone();
  params.set_requires_grad(true);
  if (!adam_ready_ || !cfg_->persist_adam) {
    adam_ = AdamState::for_params(params);
    adam_ready_ = true;
  }
  return params;
}

ad::Tensor Client::batch_inputs(const std::vector<std::size_t>& batch) const {
  std::vector<ad::Tensor> images;
  images.reserve(batch.size());
  for (std::size_t i : batch) images.push_back(data_->train.at(i).input);
  return model::stack_images(images);
}

double Client::train_batch(ParamSet& params, const std::vector<std::size_t>& batch, double lr) {
  std::vector<ad::Tensor> refs;
  refs.reserve(batch.size());
  for (std::size_t i : batch) refs.push_back(data_->train.at(i).reference);
  const ad::Tensor x = batch_inputs(batch);
  const ad::Tensor y = model::stack_images(refs);
  const ad::Tensor pred = model::reconstruct(params, cfg_->unet, x);
  const ad::Tensor loss = ad::scale(ad::l1_loss(pred, y), 1.0 / static_cast<double>(batch.size()));
  ad::backward(loss);
  adam_step(params, adam_, lr);
  return loss.item();
}

ParamSet Client::local_train(const ParamSet& params_in, std::size_t round, double lr, double* mean_loss) {
  ParamSet params = begin_round(params_in);
  params.require_shape_compatible(initial_params(*cfg_), "local_train");
  double total = 0.0;
  const auto batches = round_batches(round);
  for (const auto& batch : batches) total += train_batch(params, batch, lr);
  if (mean_loss) *mean_loss = total / static_cast<double>(batches.size());
  return params;
}

ParamSet aggregate(const std::vector<ParamSet>& uploads, const std::vector<double>& weights) {
  if (uploads.empty()) throw Error(ErrorKind::kInvalidArgument, "aggregate needs at least one upload");
  for (std::size_t k = 1; k < uploads.size(); ++k) uploads[0].require_shape_compatible(uploads[k], "aggregate");
  if (!weights.empty() && weights.size() != uploads.size()) {
    throw Error(ErrorKind::kInvalidArgument, "aggregate: " + std::to_string(weights.size()) + " weights for " +
                                                 std::to_string(uploads.size()) + " uploads");
  }
  const std::size_t k_count = uploads.size();
  std::vector<double> w(k_count, 1.0 / static_cast<double>(k_count));
  if (!weights.empty()) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) throw Error(ErrorKind::kInvalidArgument, "aggregate: weights must sum to a positive value");
    for (std::size_t k = 0; k < k_count; ++k) w[k] = weights[k] / total;
  }

  ParamSet out;
  std::vector<std::pair<double, double>> column(k_count);
  for (std::size_t e = 0; e < uploads[0].size(); ++e) {
    const auto& [name, first] = uploads[0].entries()[e];
    std::vector<double> mean(first.numel());
    for (std::size_t i = 0; i < mean.size(); ++i) {
      for (std::size_t k = 0; k < k_count; ++k) column[k] = {uploads[k].entries()[e].second.data()[i], w[k]};
      std::sort(column.begin(), column.end());
      const double base = column[0].first;
      double acc = 0.0;
      for (std::size_t k = 1; k < k_count; ++k) acc += column[k].second * (column[k].first - base);
      mean[i] = acc == 0.0 ? base : base + acc;
    }
    out.add(name, ad::Tensor(first.shape(), std::move(mean)));
  }
  return out;
}

RunResult run_flmr(const FLConfig& cfg, const std::vector<const sites::SiteDataset*>& sites) {
  cfg.validate();
  if (sites.empty()) throw Error(ErrorKind::kInvalidArgument, "run_flmr needs at least one site");
  std::set<std::string> ids;
  PrivacyAuditor auditor(cfg.image_size);
  for (const auto* s : sites) {
    if (!ids.insert(s->profile.site_id).second) throw Error(ErrorKind::kInvalidArgument, "duplicate site id " + s->profile.site_id);
    if (s->profile.site_id == kServerId) throw Error(ErrorKind::kInvalidArgument, "site id collides with the server id");
    auditor.register_dataset(*s);
  }
  Channel channel(std::move(auditor));
  std::vector<Client> clients;
  clients.reserve(sites.size());
  for (std::size_t k = 0; k < sites.size(); ++k) clients.emplace_back(k, *sites[k], cfg);

  RunResult result;
  ParamSet global = initial_params(cfg);
  for (std::size_t q = 0; q < cfg.global_rounds; ++q) {
    const double lr = cfg.lr_for_round(q);
    const auto round = static_cast<std::uint32_t>(q);
    for (const auto& c : clients) channel.send({MessageKind::kDeploy, round, kServerId, c.id(), global});

    std::vector<double> losses(clients.size());
    parallel_for(clients.size(), cfg.threads, [&](std::size_t k) {
      Client& c = clients[k];
      Message deploy = channel.receive(c.id(), kServerId);
      ParamSet local = c.local_train(std::get<ParamSet>(deploy.payload), q, lr, &losses[k]);
      channel.send({MessageKind::kUpload, round, c.id(), kServerId, std::move(local)});
    });

    std::vector<ParamSet> uploads;
    std::vector<double> weights;
    for (const auto& c : clients) {
      uploads.push_back(std::get<ParamSet>(channel.receive(kServerId, c.id()).payload));
      if (cfg.weighted_average) weights.push_back(static_cast<double>(c.train_size()));
    }
    global = aggregate(uploads, weights);

    RoundRecord rec{q, lr, {}, 0, 0, 0, 0};
    for (std::size_t k = 0; k < clients.size(); ++k) rec.clients.push_back({clients[k].id(), losses[k]});
    result.rounds.push_back(std::move(rec));
  }
  result.messages = channel.records();
  for (const auto& m : result.messages) {
    auto& rec = result.rounds.at(m.round);
    rec.bytes += m.bytes;
    if (m.kind == MessageKind::kDeploy) ++rec.deploy_messages;
    else if (m.kind == MessageKind::kUpload) ++rec.upload_messages;
    else ++rec.latent_messages;
  }
  result.global = std::move(global);
  return result;
}

ParamSet train_centralized(const FLConfig& cfg, const sites::SiteDataset& data, double* final_loss) {
  cfg.validate();
  FLConfig local = cfg;
  local.persist_adam = true;
  Client client(0, data, local);
  ParamSet params = initial_params(local);
  double loss = 0.0;
  for (std::size_t q = 0; q < local.global_rounds; ++q) params = client.local_train(params, q, local.lr_for_round(q), &loss);
  if (final_loss) *final_loss = loss;
  params.set_requires_grad(false);
  return params;
}

std::string rounds_to_jsonl(const std::vector<RoundRecord>& rounds) {
  std::string out;
  for (const auto& r : rounds) {
    nlohmann::ordered_json j;
    j["round"] = r.round;
    j["lr"] = r.lr;
    nlohmann::ordered_json losses = nlohmann::ordered_json::object();
    for (const auto& c : r.clients) losses[c.client] = c.mean_loss;
    j["train_loss"] = losses;
    j["deploy_messages"] = r.deploy_messages;
    j["upload_messages"] = r.upload_messages;
    j["latent_messages"] = r.latent_messages;
    j["bytes"] = r.bytes;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace fedrecon::fl
