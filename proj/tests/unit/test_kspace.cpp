#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "fedrecon/error.hpp"
#include "fedrecon/kspace.hpp"
#include "fedrecon/metrics.hpp"
#include "fedrecon/sites.hpp"

namespace fedrecon::kspace {
namespace {

ComplexImage random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ComplexImage img(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    img.re[i] = n(rng);
    img.im[i] = n(rng);
  }
  return img;
}

double max_abs_diff(const ComplexImage& a, const ComplexImage& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    m = std::max({m, std::abs(a.re[i] - b.re[i]), std::abs(a.im[i] - b.im[i])});
  }
  return m;
}

// Direct O(N^2) orthonormal DFT.
ComplexImage naive_dft(const ComplexImage& x) {
  ComplexImage out(x.height, x.width);
  const double norm = 1.0 / std::sqrt(static_cast<double>(x.height * x.width));
  for (std::size_t u = 0; u < x.height; ++u) {
    for (std::size_t v = 0; v < x.width; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t r = 0; r < x.height; ++r) {
        for (std::size_t c = 0; c < x.width; ++c) {
          const double phase = -2.0 * std::numbers::pi *
                               (static_cast<double>(u * r) / static_cast<double>(x.height) +
                                static_cast<double>(v * c) / static_cast<double>(x.width));
          acc += std::complex<double>(x.re[r * x.width + c], x.im[r * x.width + c]) * std::polar(1.0, phase);
        }
      }
      out.re[u * x.width + v] = norm * acc.real();
      out.im[u * x.width + v] = norm * acc.imag();
    }
  }
  return out;
}

TEST(Fft, DeltaHasConstantSpectrum) {
  ComplexImage d(8, 16);
  d.re[0] = 1.0;
  const auto s = fft2(d);
  const double expected = 1.0 / std::sqrt(128.0);
  for (std::size_t i = 0; i < s.re.size(); ++i) {
    EXPECT_NEAR(s.re[i], expected, 1e-15);
    EXPECT_NEAR(s.im[i], 0.0, 1e-15);
  }
}

TEST(Fft, ConstantImageHasOnlyDc) {
  ComplexImage c(16, 16);
  std::fill(c.re.begin(), c.re.end(), 0.75);
  const auto s = fft2(c);
  EXPECT_NEAR(s.re[0], 0.75 * 16.0, 1e-12);
  for (std::size_t i = 1; i < s.re.size(); ++i) {
    EXPECT_NEAR(s.re[i], 0.0, 1e-12);
    EXPECT_NEAR(s.im[i], 0.0, 1e-12);
  }
}

TEST(Fft, MatchesDirectDft) {
  const auto x = random_image(8, 4, 17);
  EXPECT_LT(max_abs_diff(fft2(x), naive_dft(x)), 1e-12);
}

TEST(Fft, RoundTripAndParseval) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = random_image(32, 32, seed);
    const auto s = fft2(x);
    EXPECT_LT(max_abs_diff(ifft2(s), x), 1e-10);
    EXPECT_LT(std::abs(s.energy() - x.energy()) / x.energy(), 1e-10);
  }
}

TEST(Fft, RejectsNonPowerOfTwo) {
  EXPECT_THROW(fft2(ComplexImage(12, 16)), Error);
  EXPECT_THROW(ifft2(ComplexImage(16, 24)), Error);
}

std::vector<std::size_t> lowest_frequency_columns(std::size_t width, std::size_t count) {
  std::vector<std::size_t> cols(width);
  std::iota(cols.begin(), cols.end(), 0);
  auto freq = [&](std::size_t c) { return std::min(c, width - c); };
  std::stable_sort(cols.begin(), cols.end(), [&](auto a, auto b) { return freq(a) < freq(b); });
  cols.resize(count);
  std::sort(cols.begin(), cols.end());
  return cols;
}

TEST(Mask, Width32Af4KeepsEightWithThreeCenter) {
  Rng rng(1);
  const auto m = make_mask(32, 4.0, 0.08, rng);
  EXPECT_EQ(m.kept_columns.size(), 8u);
  EXPECT_EQ(mask_center_count(32, 0.08), 3u);
  for (std::size_t c : lowest_frequency_columns(32, 3)) EXPECT_TRUE(m.keeps(c)) << c;
  EXPECT_NO_THROW(validate_mask(m));
}

TEST(Mask, NoAccelerationKeepsAllColumns) {
  Rng rng(2);
  EXPECT_EQ(make_mask(32, 1.0, 0.08, rng).kept_columns.size(), 32u);
}

TEST(Mask, DeterministicForSeed) {
  Rng a(77), b(77), c(78);
  const auto ma = make_mask(64, 4.0, 0.08, a);
  EXPECT_EQ(ma, make_mask(64, 4.0, 0.08, b));
  EXPECT_NE(ma, make_mask(64, 4.0, 0.08, c));
}

TEST(Mask, CardinalityWithinOneColumnOfTarget) {
  Rng rng(5);
  for (std::size_t width : {16u, 32u, 64u, 128u}) {
    for (double af : {2.0, 3.0, 4.0, 5.5, 8.0}) {
      const auto m = make_mask(width, af, 0.08, rng);
      const double frac = static_cast<double>(m.kept_columns.size()) / static_cast<double>(width);
      EXPECT_GE(frac, 1.0 / af - 1.0 / static_cast<double>(width));
      EXPECT_LE(frac, 1.0 / af + 1.0 / static_cast<double>(width));
      EXPECT_EQ(m.kept_columns.size(), static_cast<std::size_t>(std::lround(static_cast<double>(width) / af)));
    }
  }
}

TEST(Mask, CenterLargerThanBudgetIsRejected) {
  Rng rng(1);
  EXPECT_THROW(make_mask(32, 16.0, 0.2, rng), Error);
}

ad::Tensor phantom(std::size_t size) {
  return sites::make_reference(sites::default_profiles()[0], size, 0, 0);
}

TEST(Acquire, FullMaskWithoutNoiseReproducesReference) {
  Rng rng(1);
  const auto ref = phantom(32);
  const auto x = acquire(ref, make_mask(32, 1.0, 0.08, rng), 0.0, rng);
  for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(x.data()[i], ref.data()[i], 1e-10);
}

TEST(Acquire, UndersamplingLosesInformation) {
  Rng rng(1);
  const auto ref = phantom(32);
  const auto full = acquire(ref, make_mask(32, 1.0, 0.08, rng), 0.0, rng);
  const auto under = acquire(ref, make_mask(32, 4.0, 0.08, rng), 0.0, rng);
  const double range = metrics::data_range(ref);
  const double p_under = metrics::psnr(under, ref, range);
  EXPECT_TRUE(std::isfinite(p_under));
  EXPECT_LT(p_under, metrics::psnr(full, ref, range));
}

TEST(Acquire, ZeroReferenceGivesZeroImage) {
  Rng rng(3);
  const auto x = acquire(ad::Tensor::zeros({16, 16}), make_mask(16, 4.0, 0.08, rng), 0.0, rng);
  for (double v : x.data()) EXPECT_EQ(v, 0.0);
}

TEST(Acquire, ShapeMismatchIsRejected) {
  Rng rng(3);
  EXPECT_THROW(acquire(ad::Tensor::zeros({16, 16}), make_mask(32, 4.0, 0.08, rng), 0.0, rng), Error);
}

TEST(Acquire, MaskingIsAProjection) {
  Rng rng(9);
  const auto mask = make_mask(32, 4.0, 0.08, rng);
  const auto once = zero_fill(ComplexImage::from_real(phantom(32)), mask);
  const auto twice = zero_fill(once, mask);
  EXPECT_LT(max_abs_diff(once, twice), 1e-10);
}

TEST(Acquire, NoiseIsDeterministicGivenRng) {
  Rng m(4);
  const auto mask = make_mask(32, 4.0, 0.08, m);
  Rng a(10), b(10);
  const auto ref = phantom(32);
  EXPECT_TRUE(ad::bit_equal(acquire(ref, mask, 0.05, a), acquire(ref, mask, 0.05, b)));
}

TEST(Sample, NormalizedByReferencePeak) {
  Rng rng(6);
  auto ref = phantom(32).clone();
  for (auto& v : ref.mutable_data()) v *= 3.0;
  const auto s = make_sample(ref, make_mask(32, 4.0, 0.08, rng), 0.0, rng, "A");
  EXPECT_EQ(*std::max_element(s.reference.data().begin(), s.reference.data().end()), 1.0);
  EXPECT_EQ(s.input.shape(), s.reference.shape());
}

}  // namespace
}  // namespace fedrecon::kspace
