#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedrecon/fl.hpp"
#include "fedrecon/metrics.hpp"

namespace fedrecon::scenario {

enum class Strategy { kSingle, kCross, kFused, kMix, kFLMR, kFLMRCM };

inline constexpr Strategy kAllStrategies[] = {Strategy::kSingle, Strategy::kCross, Strategy::kFused,
                                              Strategy::kMix,    Strategy::kFLMR,  Strategy::kFLMRCM};

const char* to_string(Strategy s);
// Accepts the names printed by to_string (case-sensitive); throws otherwise.
Strategy parse_strategy(std::string_view name);

struct ScenarioResult {
  metrics::MetricsReport report;
  // Trained model; empty for Fused, which keeps one model per train site.
  ParamSet model;
  std::vector<ParamSet> fused_models;
  std::vector<fl::RoundRecord> rounds;
  // Mean-embedding distance between train-site and test-site latents under
  // the final model; set for the federated strategies.
  std::optional<double> latent_distance;
};

// Site requirements per strategy:
//   Single  one train site, equal to the test site
//   Cross   one train site, different from the test site
//   Fused   one or more train sites; one model each, reconstructions averaged
//   Mix     one or more train sites pooled into one dataset
//   FLMR    one or more train sites as federated clients
//   FLMRCM  one or more source sites; the test site is the alignment target
//           and may be among them
ScenarioResult run_scenario(Strategy strategy, const fl::FLConfig& cfg,
                            const std::vector<const sites::SiteDataset*>& train_sites,
                            const sites::SiteDataset& test_site);

// Pooled copy of the train splits (test split of the first site kept).
sites::SiteDataset merge_sites(const std::vector<const sites::SiteDataset*>& parts);
// Pixelwise mean of per-model reconstructions; averaging N identical
// predictions returns them unchanged.
std::vector<ad::Tensor> fuse_predictions(const std::vector<std::vector<ad::Tensor>>& per_model);

}  // namespace fedrecon::scenario
