#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedrecon/kspace.hpp"

namespace fedrecon::sites {

// Knobs of one synthetic institution. Each one shifts the image
// distribution the way a scanner, protocol or population would.
struct SiteProfile {
  std::string site_id;
  double contrast_gamma = 1.0;
  double bias_field_strength = 0.0;
  double noise_sigma = 0.0;
  double structure_scale = 1.0;
  double lesion_probability = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const SiteProfile&) const = default;
};

struct MaskParams {
  double acceleration = 4.0;
  double center_fraction = 0.08;

  bool operator==(const MaskParams&) const = default;
};

struct SiteDataset {
  SiteProfile profile;
  std::size_t image_size = 0;
  MaskParams mask_params;
  std::vector<kspace::KSpaceSample> train;
  std::vector<kspace::KSpaceSample> test;
};

// One phantom reference image in [0, 1], float32-representable so that the
// dataset file round-trips bit-exactly. Deterministic in (profile, split, index).
ad::Tensor make_reference(const SiteProfile& profile, std::size_t image_size, std::uint64_t split,
                          std::uint64_t index);

SiteDataset generate_site(const SiteProfile& profile, std::size_t n_train, std::size_t n_test,
                          std::size_t image_size, const MaskParams& mask_params, std::size_t threads = 1);

// The four default institutions "A".."D"; "C" is the small one.
std::vector<SiteProfile> default_profiles();
inline constexpr std::size_t kSmallSiteDivisor = 10;
// Train count for `site_id` when the large sites get `n_train` samples.
std::size_t default_train_count(const std::string& site_id, std::size_t n_train);

// "FLMR" dataset file; inputs are rebuilt from reference + mask on load.
std::vector<std::uint8_t> encode_dataset(const SiteDataset& ds);
SiteDataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const SiteDataset& ds, const std::filesystem::path& path);
SiteDataset load_dataset(const std::filesystem::path& path);
std::filesystem::path dataset_path(const std::filesystem::path& dir, const std::string& site_id);

// Pooled 64-bin intensity histogram over [0, 1] of the given images, normalized.
std::vector<double> intensity_histogram(std::span<const kspace::KSpaceSample> samples, std::size_t bins = 64);
double jensen_shannon(std::span<const double> p, std::span<const double> q);

bool datasets_equal(const SiteDataset& a, const SiteDataset& b);

}  // namespace fedrecon::sites
