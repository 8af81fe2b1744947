#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fedrecon/adam.hpp"
#include "fedrecon/channel.hpp"
#include "fedrecon/model.hpp"
#include "fedrecon/sites.hpp"

namespace fedrecon::fl {

inline constexpr const char* kServerId = "server";

struct FLConfig {
  std::size_t local_epochs = 2;    // P
  std::size_t global_rounds = 20;  // Q
  double lr1 = 1e-4;
  double lr2 = 1e-5;
  double lr1_fraction = 0.8;  // share of rounds trained at lr1
  std::size_t batch_size = 8;
  double lambda_adv = 1.0;
  bool inverted_source_term = false;
  double acceleration = 4.0;
  double center_fraction = 0.08;
  std::size_t image_size = 64;
  std::uint64_t seed = 1;
  bool weighted_average = false;
  // Keep Adam moments across Deploy instead of resetting them.
  bool persist_adam = false;
  std::size_t threads = 1;
  model::UNetConfig unet;
  std::size_t identifier_hidden = 16;

  void validate() const;
  std::size_t lr1_rounds() const;
  double lr_for_round(std::size_t round) const;
  model::DomainIdentifierConfig identifier() const;
};

// Deterministic rng stream for (seed, a, b, c).
std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);
// Per-client seed; depends only on the global seed and the client index.
std::uint64_t client_seed(std::uint64_t global_seed, std::size_t client_index);

// Initial global model for a run with this config.
ParamSet initial_params(const FLConfig& cfg);

// One institution. Holds a handle to its own dataset only, plus its local
// optimizer state.
class Client {
 public:
  Client(std::size_t index, const sites::SiteDataset& data, const FLConfig& cfg);

  const std::string& id() const noexcept { return data_->profile.site_id; }
  std::size_t index() const noexcept { return index_; }
  const sites::SiteDataset* dataset_handle() const noexcept { return data_; }
  std::size_t train_size() const noexcept { return data_->train.size(); }

  // Minibatch index lists for the P epochs of `round`, shuffled with a key
  // derived from (client seed, global epoch index).
  std::vector<std::vector<std::size_t>> round_batches(std::size_t round) const;

  // Called on Deploy: starts a fresh local model and (unless persisting)
  // fresh Adam moments.
  ParamSet begin_round(const ParamSet& deployed);
  // One Adam step of the mean-over-batch L1 loss. Returns the loss value.
  double train_batch(ParamSet& params, const std::vector<std::size_t>& batch, double lr);
  // P epochs of minibatch Adam; returns the updated parameters.
  ParamSet local_train(const ParamSet& params_in, std::size_t round, double lr, double* mean_loss = nullptr);

  ad::Tensor batch_inputs(const std::vector<std::size_t>& batch) const;

 private:
  std::size_t index_;
  const sites::SiteDataset* data_;
  const FLConfig* cfg_;
  AdamState adam_;
  bool adam_ready_ = false;
};

// Elementwise mean of shape-compatible uploads. Per element the values are
// sorted and summed as v0 + sum(v_i - v0), so the result does not depend on
// upload order and aggregate({p, ..., p}) == p bit-exactly. With weights
// (normalized internally) the same order is used for the weighted sum.
ParamSet aggregate(const std::vector<ParamSet>& uploads, const std::vector<double>& weights = {});

struct ClientRoundStats {
  std::string client;
  double mean_loss = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  double lr = 0.0;
  std::vector<ClientRoundStats> clients;
  std::size_t deploy_messages = 0;
  std::size_t upload_messages = 0;
  std::size_t latent_messages = 0;
  std::size_t bytes = 0;
};

struct RunResult {
  ParamSet global;
  std::vector<RoundRecord> rounds;
  std::vector<MessageRecord> messages;
};

// Federated training over `sites`, one client per site in order.
RunResult run_flmr(const FLConfig& cfg, const std::vector<const sites::SiteDataset*>& sites);

// Plain training on one dataset for P * Q epochs with the same lr schedule,
// batch order and initialization as client 0 of a federated run. Adam moments
// persist throughout.
ParamSet train_centralized(const FLConfig& cfg, const sites::SiteDataset& data, double* final_loss = nullptr);

// One JSON object per line.
std::string rounds_to_jsonl(const std::vector<RoundRecord>& rounds);

}  // namespace fedrecon::fl
