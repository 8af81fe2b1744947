#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "fedrecon/metrics.hpp"

namespace fedrecon::cli {

using SiteMap = std::map<std::string, sites::SiteDataset>;

std::filesystem::path data_dir(const ExperimentConfig& cfg, const std::filesystem::path& out);
// In-memory generation of every configured site.
SiteMap generate_sites(const ExperimentConfig& cfg, std::size_t threads);
// Loads every configured site and checks it matches the config.
SiteMap load_sites(const ExperimentConfig& cfg, const std::filesystem::path& dir);
void save_sites(const SiteMap& data, const std::filesystem::path& dir);

// One trained-and-evaluated run.
struct RunRow {
  int scenario = 1;
  scenario::Strategy strategy = scenario::Strategy::kFLMR;
  std::vector<std::string> train_sites;
  std::string test_site;
  std::uint64_t seed = 0;
  double ssim = 0.0;
  double psnr = 0.0;
  std::optional<double> latent_distance;
};

// Scenario 1: each site held out in turn, the others train.
// Scenario 2: each site is the test site and every site trains.
// Single always trains and tests on the same site; Cross pairs every train
// site with the test site.
std::vector<RunRow> run_compare(const ExperimentConfig& cfg, const SiteMap& data, std::size_t threads);

// One row per (scenario, strategy, train, test) with mean and median over
// seeds, then an Average row per (scenario, strategy) with several combos.
std::string compare_csv(const ExperimentConfig& cfg, const std::vector<RunRow>& rows);
// One row per run.
std::string runs_csv(const ExperimentConfig& cfg, const std::vector<RunRow>& rows);

struct AblationRow {
  std::string source;
  std::string target;
  std::uint64_t seed = 0;
  metrics::MetricsReport without_cm;
  metrics::MetricsReport with_cm;
  double distance_without = 0.0;
  double distance_with = 0.0;
};

// Every ordered (source, target) pair of distinct sites, trained on the
// source alone with and without cross-site modeling.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const SiteMap& data, std::size_t threads);
std::string ablation_csv(const ExperimentConfig& cfg, const std::vector<AblationRow>& rows);

// Config as '#'-prefixed lines.
std::string config_comment(const ExperimentConfig& cfg);

}  // namespace fedrecon::cli
