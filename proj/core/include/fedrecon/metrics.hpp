#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fedrecon/kspace.hpp"
#include "fedrecon/model.hpp"

namespace fedrecon::metrics {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// max(ref) - min(ref).
double data_range(const ad::Tensor& ref);
// 10 log10(range^2 / MSE); +inf when the images are identical.
double psnr(const ad::Tensor& pred, const ad::Tensor& ref, double range);
// Mean SSIM over all valid 11x11 Gaussian-window positions (sigma 1.5).
double ssim(const ad::Tensor& pred, const ad::Tensor& ref, double range);
// Normalized 11x11 window, row-major.
std::vector<double> gaussian_window();

struct SampleMetrics {
  std::size_t index = 0;
  double ssim = 0.0;
  double psnr = 0.0;
};

struct MetricsReport {
  std::string strategy;
  std::vector<std::string> train_sites;
  std::string test_site;
  std::uint64_t seed = 0;
  std::vector<SampleMetrics> per_sample;
  double mean_ssim = 0.0;
  double mean_psnr = 0.0;

  // Recomputes the means from per_sample.
  void finalize();
  // Infinite PSNR values are written as the string "inf".
  std::string to_json() const;
};

// Metrics of `predictions[i]` against `samples[i].reference`.
MetricsReport evaluate_predictions(std::span<const ad::Tensor> predictions,
                                   std::span<const kspace::KSpaceSample> samples);
// Reconstructs every sample with `params` and scores it.
MetricsReport evaluate(const ParamSet& params, const model::UNetConfig& cfg,
                       std::span<const kspace::KSpaceSample> samples);
// Reconstructions of `samples`, one H x W tensor each.
std::vector<ad::Tensor> predict(const ParamSet& params, const model::UNetConfig& cfg,
                                std::span<const kspace::KSpaceSample> samples);
// The "no model" floor: the zero-filled inputs scored directly.
MetricsReport evaluate_zero_filled(std::span<const kspace::KSpaceSample> samples);

// CSV with header site_id,f0,...,fN; one row per sample holding its
// flattened bottleneck latent.
std::string latents_csv(const ParamSet& params, const model::UNetConfig& cfg,
                        std::span<const kspace::KSpaceSample> samples);
void export_latents(const ParamSet& params, const model::UNetConfig& cfg,
                    std::span<const kspace::KSpaceSample> samples, const std::filesystem::path& path);

}  // namespace fedrecon::metrics
