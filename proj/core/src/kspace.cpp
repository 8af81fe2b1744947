#include "fedrecon/kspace.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numeric>
#include <tuple>

#include "fedrecon/error.hpp"

namespace fedrecon::kspace {
namespace {

// FFTW planning is not thread-safe; execution with new-array execute is.
// Plans are FFTW_UNALIGNED so results do not depend on buffer alignment.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(std::size_t h, std::size_t w, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(h, w, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<std::complex<double>> scratch(h * w);
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf, buf, sign,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!plan) throw Error(ErrorKind::kInvalidArgument, "FFTW could not plan a transform");
    plans_.emplace(key, plan);
    return plan;
  }

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

ComplexImage transform(const ComplexImage& image, int sign) {
  if (!is_power_of_two(image.height) || !is_power_of_two(image.width)) {
    throw Error(ErrorKind::kInvalidArgument, "FFT dimensions must be powers of two, got " +
                                                 std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  const std::size_t n = image.height * image.width;
  if (image.re.size() != n || image.im.size() != n) {
    throw Error(ErrorKind::kShapeMismatch, "complex image storage does not match its dimensions");
  }
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = {image.re[i], image.im[i]};
  fftw_plan plan = PlanCache::instance().get(image.height, image.width, sign);
  auto* io = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_execute_dft(plan, io, io);

  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  ComplexImage out(image.height, image.width);
  for (std::size_t i = 0; i < n; ++i) {
    out.re[i] = buf[i].real() * norm;
    out.im[i] = buf[i].imag() * norm;
  }
  return out;
}

void apply_mask(ComplexImage& spectrum, const MaskSpec& mask) {
  if (spectrum.width != mask.width) {
    throw Error(ErrorKind::kShapeMismatch, "mask width " + std::to_string(mask.width) + " does not match spectrum width " +
                                               std::to_string(spectrum.width));
  }
  std::vector<bool> keep(mask.width, false);
  for (std::size_t c : mask.kept_columns) keep.at(c) = true;
  for (std::size_t y = 0; y < spectrum.height; ++y) {
    for (std::size_t x = 0; x < spectrum.width; ++x) {
      if (!keep[x]) {
        spectrum.re[y * spectrum.width + x] = 0.0;
        spectrum.im[y * spectrum.width + x] = 0.0;
      }
    }
  }
}

}  // namespace

bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

ComplexImage::ComplexImage(std::size_t h, std::size_t w) : height(h), width(w), re(h * w, 0.0), im(h * w, 0.0) {}

ComplexImage ComplexImage::from_real(const ad::Tensor& image) {
  if (image.rank() != 2) {
    throw Error(ErrorKind::kShapeMismatch, "expected an H x W image, got " + ad::shape_to_string(image.shape()));
  }
  ComplexImage out(image.dim(0), image.dim(1));
  std::copy(image.data().begin(), image.data().end(), out.re.begin());
  return out;
}

double ComplexImage::energy() const {
  double e = 0.0;
  for (std::size_t i = 0; i < re.size(); ++i) e += re[i] * re[i] + im[i] * im[i];
  return e;
}

ComplexImage fft2(const ComplexImage& image) { return transform(image, FFTW_FORWARD); }
ComplexImage ifft2(const ComplexImage& spectrum) { return transform(spectrum, FFTW_BACKWARD); }

bool MaskSpec::keeps(std::size_t column) const {
  return std::binary_search(kept_columns.begin(), kept_columns.end(), column);
}

std::size_t mask_column_count(std::size_t width, double acceleration) {
  return static_cast<std::size_t>(std::lround(static_cast<double>(width) / acceleration));
}

std::size_t mask_center_count(std::size_t width, double center_fraction) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(center_fraction * static_cast<double>(width))));
}

std::vector<std::size_t> center_columns(std::size_t width, std::size_t count) {
  const std::size_t pad = (width - count + 1) / 2;
  std::vector<std::size_t> cols;
  for (std::size_t s = pad; s < pad + count; ++s) cols.push_back((s + width / 2) % width);
  std::sort(cols.begin(), cols.end());
  return cols;
}

MaskSpec make_mask(std::size_t width, double acceleration, double center_fraction, Rng& rng) {
  if (width == 0) throw Error(ErrorKind::kInvalidArgument, "mask width must be positive");
  if (!(acceleration >= 1.0)) throw Error(ErrorKind::kInvalidArgument, "acceleration must be >= 1");
  if (!(center_fraction > 0.0 && center_fraction < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "center_fraction must lie in (0, 1)");
  }
  const std::size_t total = mask_column_count(width, acceleration);
  const std::size_t center = mask_center_count(width, center_fraction);
  if (total < center || total > width) {
    throw Error(ErrorKind::kInvalidArgument, "mask keeps " + std::to_string(total) + " of " + std::to_string(width) +
                                                 " columns but needs " + std::to_string(center) + " center columns");
  }
  MaskSpec mask{width, acceleration, center_fraction, center_columns(width, center)};
  std::vector<std::size_t> candidates;
  for (std::size_t c = 0; c < width; ++c) {
    if (!mask.keeps(c)) candidates.push_back(c);
  }
  std::sample(candidates.begin(), candidates.end(), std::back_inserter(mask.kept_columns), total - center, rng);
  std::sort(mask.kept_columns.begin(), mask.kept_columns.end());
  return mask;
}

void validate_mask(const MaskSpec& mask) {
  const auto& cols = mask.kept_columns;
  if (mask.width == 0) throw Error(ErrorKind::kInvalidArgument, "mask width must be positive");
  if (cols.size() != mask_column_count(mask.width, mask.acceleration)) {
    throw Error(ErrorKind::kInvalidArgument, "mask keeps " + std::to_string(cols.size()) + " columns, expected " +
                                                 std::to_string(mask_column_count(mask.width, mask.acceleration)));
  }
  if (!std::is_sorted(cols.begin(), cols.end()) || std::adjacent_find(cols.begin(), cols.end()) != cols.end()) {
    throw Error(ErrorKind::kInvalidArgument, "mask columns must be sorted and unique");
  }
  if (!cols.empty() && cols.back() >= mask.width) throw Error(ErrorKind::kInvalidArgument, "mask column out of range");
  for (std::size_t c : center_columns(mask.width, mask_center_count(mask.width, mask.center_fraction))) {
    if (!mask.keeps(c)) throw Error(ErrorKind::kInvalidArgument, "mask drops center column " + std::to_string(c));
  }
}

ComplexImage zero_fill(const ComplexImage& image, const MaskSpec& mask) {
  ComplexImage spectrum = fft2(image);
  apply_mask(spectrum, mask);
  return ifft2(spectrum);
}

ad::Tensor acquire(const ad::Tensor& reference, const MaskSpec& mask, double noise_sigma, Rng& rng) {
  if (reference.rank() != 2 || reference.dim(1) != mask.width) {
    throw Error(ErrorKind::kShapeMismatch, "acquire: reference " + ad::shape_to_string(reference.shape()) +
                                               " does not match mask width " + std::to_string(mask.width));
  }
  if (noise_sigma < 0.0) throw Error(ErrorKind::kInvalidArgument, "noise_sigma must be non-negative");
  ComplexImage spectrum = fft2(ComplexImage::from_real(reference));
  if (noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (std::size_t i = 0; i < spectrum.re.size(); ++i) {
      spectrum.re[i] += noise(rng);
      spectrum.im[i] += noise(rng);
    }
  }
  apply_mask(spectrum, mask);
  const ComplexImage image = ifft2(spectrum);
  std::vector<double> magnitude(image.re.size());
  for (std::size_t i = 0; i < magnitude.size(); ++i) magnitude[i] = std::hypot(image.re[i], image.im[i]);
  return ad::Tensor(reference.shape(), std::move(magnitude));
}

KSpaceSample make_sample(const ad::Tensor& reference, MaskSpec mask, double noise_sigma, Rng& rng,
                         std::string site_id) {
  ad::Tensor input = acquire(reference, mask, noise_sigma, rng);
  const double peak = *std::max_element(reference.data().begin(), reference.data().end());
  ad::Tensor ref = reference.clone();
  if (peak > 0.0 && peak != 1.0) {
    for (auto& v : input.mutable_data()) v /= peak;
    for (auto& v : ref.mutable_data()) v /= peak;
  }
  ref.set_requires_grad(false);
  return {std::move(input), std::move(ref), std::move(mask), std::move(site_id)};
}

}  // namespace fedrecon::kspace
