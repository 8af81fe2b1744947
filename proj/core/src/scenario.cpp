#include "fedrecon/scenario.hpp"

#include <algorithm>

#include "fedrecon/crosssite.hpp"
#include "fedrecon/error.hpp"
#include "fedrecon/parallel.hpp"

namespace fedrecon::scenario {
namespace {

[[noreturn]] void invalid(Strategy s, const std::string& why) {
  throw Error(ErrorKind::kInvalidArgument, std::string(to_string(s)) + ": " + why);
}

void validate(Strategy s, const std::vector<const sites::SiteDataset*>& train, const sites::SiteDataset& test) {
  if (train.empty()) invalid(s, "needs at least one train site");
  const auto& tid = test.profile.site_id;
  const bool has_test = std::any_of(train.begin(), train.end(), [&](const auto* d) { return d->profile.site_id == tid; });
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (std::size_t j = i + 1; j < train.size(); ++j) {
      if (train[i]->profile.site_id == train[j]->profile.site_id) invalid(s, "train site " + train[i]->profile.site_id + " listed twice");
    }
  }
  switch (s) {
    case Strategy::kSingle:
      if (train.size() != 1 || !has_test) invalid(s, "train site must be exactly the test site " + tid);
      break;
    case Strategy::kCross:
      if (train.size() != 1 || has_test) invalid(s, "needs exactly one train site different from the test site " + tid);
      break;
    default: break;
  }
}

std::vector<std::string> ids(const std::vector<const sites::SiteDataset*>& train) {
  std::vector<std::string> out;
  for (const auto* d : train) out.push_back(d->profile.site_id);
  return out;
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kSingle: return "Single";
    case Strategy::kCross: return "Cross";
    case Strategy::kFused: return "Fused";
    case Strategy::kMix: return "Mix";
    case Strategy::kFLMR: return "FLMR";
    case Strategy::kFLMRCM: return "FLMRCM";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : kAllStrategies) {
    if (name == to_string(s)) return s;
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown strategy '" + std::string(name) +
                                               "' (expected Single, Cross, Fused, Mix, FLMR or FLMRCM)");
}

sites::SiteDataset merge_sites(const std::vector<const sites::SiteDataset*>& parts) {
  if (parts.empty()) throw Error(ErrorKind::kInvalidArgument, "merge_sites needs at least one site");
  if (parts.size() == 1) return *parts.front();
  sites::SiteDataset out;
  out.profile = parts.front()->profile;
  out.image_size = parts.front()->image_size;
  out.mask_params = parts.front()->mask_params;
  for (const auto* p : parts) {
    if (p->image_size != out.image_size) throw Error(ErrorKind::kShapeMismatch, "merge_sites: image sizes differ");
    if (p != parts.front()) out.profile.site_id += "+" + p->profile.site_id;
    out.train.insert(out.train.end(), p->train.begin(), p->train.end());
  }
  out.test = parts.front()->test;
  return out;
}

std::vector<ad::Tensor> fuse_predictions(const std::vector<std::vector<ad::Tensor>>& per_model) {
  if (per_model.empty()) throw Error(ErrorKind::kInvalidArgument, "fuse_predictions needs at least one model");
  const std::size_t n = per_model.front().size();
  for (const auto& m : per_model) {
    if (m.size() != n) throw Error(ErrorKind::kShapeMismatch, "fuse_predictions: models predicted different counts");
  }
  const double k = static_cast<double>(per_model.size());
  std::vector<ad::Tensor> out;
  out.reserve(n);
  std::vector<double> column(per_model.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& first = per_model.front()[i];
    std::vector<double> fused(first.numel());
    for (std::size_t e = 0; e < fused.size(); ++e) {
      for (std::size_t m = 0; m < per_model.size(); ++m) column[m] = per_model[m][i].data()[e];
      std::sort(column.begin(), column.end());
      double acc = 0.0;
      for (std::size_t m = 1; m < column.size(); ++m) acc += column[m] - column[0];
      fused[e] = acc == 0.0 ? column[0] : column[0] + acc / k;
    }
    out.emplace_back(first.shape(), std::move(fused));
  }
  return out;
}

ScenarioResult run_scenario(Strategy strategy, const fl::FLConfig& cfg,
                            const std::vector<const sites::SiteDataset*>& train_sites,
                            const sites::SiteDataset& test_site) {
  cfg.validate();
  validate(strategy, train_sites, test_site);
  ScenarioResult result;
  const auto& test = test_site.test;
  switch (strategy) {
    case Strategy::kSingle:
    case Strategy::kCross:
      result.model = fl::train_centralized(cfg, *train_sites.front());
      result.report = metrics::evaluate(result.model, cfg.unet, test);
      break;
    case Strategy::kMix: {
      const auto pooled = merge_sites(train_sites);
      result.model = fl::train_centralized(cfg, pooled);
      result.report = metrics::evaluate(result.model, cfg.unet, test);
      break;
    }
    case Strategy::kFused: {
      result.fused_models.resize(train_sites.size());
      fl::FLConfig inner = cfg;
      inner.threads = 1;
      parallel_for(train_sites.size(), cfg.threads, [&](std::size_t i) {
        result.fused_models[i] = fl::train_centralized(inner, *train_sites[i]);
      });
      std::vector<std::vector<ad::Tensor>> preds;
      for (const auto& m : result.fused_models) preds.push_back(metrics::predict(m, cfg.unet, test));
      result.report = metrics::evaluate_predictions(fuse_predictions(preds), test);
      break;
    }
    case Strategy::kFLMR: {
      auto run = fl::run_flmr(cfg, train_sites);
      result.model = std::move(run.global);
      result.rounds = std::move(run.rounds);
      result.report = metrics::evaluate(result.model, cfg.unet, test);
      break;
    }
    case Strategy::kFLMRCM: {
      auto run = crosssite::run_flmrcm(cfg, train_sites, test_site);
      result.model = std::move(run.run.global);
      result.rounds = std::move(run.run.rounds);
      result.report = metrics::evaluate(result.model, cfg.unet, test);
      break;
    }
  }
  if (strategy == Strategy::kFLMR || strategy == Strategy::kFLMRCM) {
    result.latent_distance = crosssite::latent_distance(result.model, cfg.unet, train_sites, test_site);
  }
  result.report.strategy = to_string(strategy);
  result.report.train_sites = ids(train_sites);
  result.report.test_site = test_site.profile.site_id;
  result.report.seed = cfg.seed;
  return result;
}

}  // namespace fedrecon::scenario
