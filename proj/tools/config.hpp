#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fedrecon/fl.hpp"
#include "fedrecon/scenario.hpp"
#include "fedrecon/sites.hpp"

namespace fedrecon::cli {

// Everything an experiment needs. Serialized as flat `section.key = value`
// lines; see README for the key list.
struct ExperimentConfig {
  fl::FLConfig fl;
  std::vector<std::string> sites{"A", "B", "C", "D"};
  // Profiles of the listed sites: defaults for A-D, overridden by site.<id>.* keys.
  std::map<std::string, sites::SiteProfile> profiles;
  std::size_t n_train = 200;
  std::size_t n_test = 50;
  // Empty means <out>/data.
  std::string data_dir;
  std::vector<scenario::Strategy> strategies{scenario::Strategy::kFLMR};
  std::vector<int> scenarios{1};
  std::vector<std::uint64_t> seeds{1};
  // `train` command.
  std::vector<std::string> train_sites;
  std::string test_site;
  // `export-latents` command.
  std::string model_path;

  ExperimentConfig();
  void validate() const;
  const sites::SiteProfile& profile(const std::string& id) const;
  sites::MaskParams mask_params() const { return {fl.acceleration, fl.center_fraction}; }
  // fl config for one run with this seed.
  fl::FLConfig run_config(std::uint64_t seed) const;
  bool operator==(const ExperimentConfig&) const;
};

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical form: every key, fixed order, shortest round-trip numbers.
std::string serialize_config(const ExperimentConfig& cfg);

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace fedrecon::cli
