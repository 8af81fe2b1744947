#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "fedrecon/tensor.hpp"

// Single-coil Cartesian acquisition model: x = |F^-1(M (F y + noise))|.
namespace fedrecon::kspace {

using Rng = std::mt19937_64;

struct ComplexImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> re;
  std::vector<double> im;

  ComplexImage() = default;
  ComplexImage(std::size_t h, std::size_t w);
  static ComplexImage from_real(const ad::Tensor& image);

  double energy() const;
};

// Orthonormal 2D DFT (1/sqrt(HW) in both directions). Dimensions must be
// powers of two.
ComplexImage fft2(const ComplexImage& image);
ComplexImage ifft2(const ComplexImage& spectrum);

// Cartesian column mask. Column indices are unshifted DFT indices, so
// column j carries frequency j for j < W/2 and j - W otherwise.
struct MaskSpec {
  std::size_t width = 0;
  double acceleration = 1.0;
  double center_fraction = 0.08;
  std::vector<std::size_t> kept_columns;

  bool keeps(std::size_t column) const;
  bool operator==(const MaskSpec&) const = default;
};

std::size_t mask_column_count(std::size_t width, double acceleration);
std::size_t mask_center_count(std::size_t width, double center_fraction);
// The `count` lowest-frequency columns, in the fastMRI convention for the
// position of an even-sized block relative to DC.
std::vector<std::size_t> center_columns(std::size_t width, std::size_t count);

MaskSpec make_mask(std::size_t width, double acceleration, double center_fraction, Rng& rng);
// Throws if `mask` breaks a MaskSpec invariant.
void validate_mask(const MaskSpec& mask);

// ifft2(M * fft2(image)): the complex zero-filled image. A projection.
ComplexImage zero_fill(const ComplexImage& image, const MaskSpec& mask);

// Zero-filled magnitude image of an H x W reference. No rng draws happen
// when noise_sigma == 0.
ad::Tensor acquire(const ad::Tensor& reference, const MaskSpec& mask, double noise_sigma, Rng& rng);

struct KSpaceSample {
  ad::Tensor input;      // zero-filled x, H x W
  ad::Tensor reference;  // fully sampled y, H x W
  MaskSpec mask;
  std::string site_id;
};

// Acquires the input for `reference` and scales both by max(reference).
KSpaceSample make_sample(const ad::Tensor& reference, MaskSpec mask, double noise_sigma, Rng& rng,
                         std::string site_id);

bool is_power_of_two(std::size_t n);

}  // namespace fedrecon::kspace
