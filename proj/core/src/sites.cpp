#include "fedrecon/sites.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "fedrecon/binary_io.hpp"
#include "fedrecon/error.hpp"
#include "fedrecon/parallel.hpp"

namespace fedrecon::sites {
namespace {

constexpr std::string_view kDatasetMagic = "FLMR";
constexpr std::uint16_t kDatasetVersion = 1;
constexpr std::uint64_t kMaskStream = 0x6d61736bULL;

struct Ellipse {
  double cx, cy, ax, ay, angle, value;

  bool contains(double x, double y) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dx = x - cx, dy = y - cy;
    const double u = (c * dx + s * dy) / ax;
    const double v = (-s * dx + c * dy) / ay;
    return u * u + v * v <= 1.0;
  }
};

kspace::Rng stream(std::uint64_t seed, std::uint64_t split, std::uint64_t index, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32), static_cast<std::uint32_t>(purpose)};
  return kspace::Rng(seq);
}

void normalize_max(std::vector<double>& v) {
  const double peak = *std::max_element(v.begin(), v.end());
  if (peak > 0.0) {
    for (auto& x : v) x /= peak;
  }
}

void validate_profile(const SiteProfile& p) {
  if (p.site_id.empty()) throw Error(ErrorKind::kInvalidArgument, "site_id must not be empty");
  if (!(p.contrast_gamma > 0.0)) throw Error(ErrorKind::kInvalidArgument, p.site_id + ": contrast_gamma must be > 0");
  if (!(p.bias_field_strength >= 0.0)) throw Error(ErrorKind::kInvalidArgument, p.site_id + ": bias_field_strength must be >= 0");
  if (!(p.noise_sigma >= 0.0)) throw Error(ErrorKind::kInvalidArgument, p.site_id + ": noise_sigma must be >= 0");
  if (!(p.structure_scale > 0.0)) throw Error(ErrorKind::kInvalidArgument, p.site_id + ": structure_scale must be > 0");
  if (!(p.lesion_probability >= 0.0 && p.lesion_probability <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, p.site_id + ": lesion_probability must lie in [0, 1]");
  }
}

void validate_size(std::size_t image_size) {
  if (!kspace::is_power_of_two(image_size) || image_size < 16) {
    throw Error(ErrorKind::kInvalidArgument, "image_size must be a power of two >= 16, got " + std::to_string(image_size));
  }
}

std::string profile_metadata(const SiteDataset& ds) {
  const auto& p = ds.profile;
  std::ostringstream out;
  out << "site_id=" << p.site_id << '\n'
      << "contrast_gamma=" << io::format_double(p.contrast_gamma) << '\n'
      << "bias_field_strength=" << io::format_double(p.bias_field_strength) << '\n'
      << "noise_sigma=" << io::format_double(p.noise_sigma) << '\n'
      << "structure_scale=" << io::format_double(p.structure_scale) << '\n'
      << "lesion_probability=" << io::format_double(p.lesion_probability) << '\n'
      << "seed=" << p.seed << '\n'
      << "image_size=" << ds.image_size << '\n'
      << "acceleration=" << io::format_double(ds.mask_params.acceleration) << '\n'
      << "center_fraction=" << io::format_double(ds.mask_params.center_fraction) << '\n'
      << "n_train=" << ds.train.size() << '\n'
      << "n_test=" << ds.test.size() << '\n';
  return out.str();
}

template <typename T>
T parse_number(const std::map<std::string, std::string>& kv, const std::string& key, std::size_t offset) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(offset, "metadata is missing key " + key);
  T value{};
  const auto& s = it->second;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || end != s.data() + s.size()) throw FormatError(offset, "bad value for " + key + ": " + s);
  return value;
}

}  // namespace

ad::Tensor make_reference(const SiteProfile& profile, std::size_t image_size, std::uint64_t split,
                          std::uint64_t index) {
  validate_profile(profile);
  validate_size(image_size);
  kspace::Rng rng = stream(profile.seed, split, index, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double s = profile.structure_scale;

  // Outer ring plus a darker interior, then random inner structures; values add.
  std::vector<Ellipse> ellipses;
  const double cx = uniform(-0.05, 0.05), cy = uniform(-0.05, 0.05);
  const double ax = std::min(0.95, s * uniform(0.70, 0.85));
  const double ay = std::min(0.95, s * uniform(0.80, 0.92));
  const double tilt = uniform(-0.2, 0.2);
  ellipses.push_back({cx, cy, ax, ay, tilt, 1.0});
  ellipses.push_back({cx, cy, 0.9 * ax, 0.9 * ay, tilt, uniform(-0.6, -0.4)});
  const int n_ellipses = std::uniform_int_distribution<int>(3, 8)(rng);
  for (int i = 2; i < n_ellipses; ++i) {
    const double r = 0.55 * std::sqrt(unit(rng));
    const double phi = uniform(0.0, 2.0 * std::numbers::pi);
    ellipses.push_back({cx + r * ax * std::cos(phi), cy + r * ay * std::sin(phi), s * uniform(0.06, 0.30),
                        s * uniform(0.06, 0.30), uniform(0.0, std::numbers::pi), uniform(-0.25, 0.35)});
  }

  const std::size_t n = image_size;
  std::vector<double> v(n * n, 0.0);
  auto coord = [n](std::size_t i) { return (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n) - 1.0; };
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (const auto& e : ellipses) {
        if (e.contains(coord(x), coord(y))) acc += e.value;
      }
      v[y * n + x] = std::max(acc, 0.0);
    }
  }
  normalize_max(v);

  for (auto& p : v) p = std::pow(p, profile.contrast_gamma);

  // Smooth multiplicative bias: a random bilinear ramp scaled to unit peak.
  const double bx = uniform(-1.0, 1.0), by = uniform(-1.0, 1.0), bxy = uniform(-1.0, 1.0);
  const double bias_peak = std::abs(bx) + std::abs(by) + std::abs(bxy);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double ramp = (bx * coord(x) + by * coord(y) + bxy * coord(x) * coord(y)) / std::max(bias_peak, 1e-12);
      v[y * n + x] *= std::max(0.0, 1.0 + profile.bias_field_strength * ramp);
    }
  }

  const bool lesion = unit(rng) < profile.lesion_probability;
  const double lr = 0.45 * std::sqrt(unit(rng));
  const double lphi = uniform(0.0, 2.0 * std::numbers::pi);
  const Ellipse spot{cx + lr * ax * std::cos(lphi), cy + lr * ay * std::sin(lphi), uniform(0.04, 0.10),
                     uniform(0.04, 0.10), uniform(0.0, std::numbers::pi), uniform(0.9, 1.0)};
  if (lesion) {
    const double peak = *std::max_element(v.begin(), v.end());
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        if (spot.contains(coord(x), coord(y))) v[y * n + x] = std::max(v[y * n + x], spot.value * std::max(peak, 1e-12));
      }
    }
  }

  if (profile.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, profile.noise_sigma);
    for (auto& p : v) p = std::max(0.0, p + noise(rng));
  }
  normalize_max(v);
  for (auto& p : v) p = static_cast<double>(static_cast<float>(p));
  return ad::Tensor({n, n}, std::move(v));
}

SiteDataset generate_site(const SiteProfile& profile, std::size_t n_train, std::size_t n_test,
                          std::size_t image_size, const MaskParams& mask_params, std::size_t threads) {
  validate_profile(profile);
  validate_size(image_size);
  if (n_train == 0 || n_test == 0) throw Error(ErrorKind::kInvalidArgument, "sample counts must be positive");

  SiteDataset ds{profile, image_size, mask_params, {}, {}};
  ds.train.resize(n_train);
  ds.test.resize(n_test);
  parallel_for(n_train + n_test, threads, [&](std::size_t i) {
    const std::uint64_t split = i < n_train ? 0 : 1;
    const std::uint64_t index = i < n_train ? i : i - n_train;
    ad::Tensor ref = make_reference(profile, image_size, split, index);
    kspace::Rng mask_rng = stream(profile.seed, split, index, kMaskStream);
    auto mask = kspace::make_mask(image_size, mask_params.acceleration, mask_params.center_fraction, mask_rng);
    auto sample = kspace::make_sample(ref, std::move(mask), 0.0, mask_rng, profile.site_id);
    (split == 0 ? ds.train[index] : ds.test[index]) = std::move(sample);
  });
  return ds;
}

std::vector<SiteProfile> default_profiles() {
  return {
      {"A", 1.0, 0.00, 0.000, 1.00, 0.10, 1101},
      {"B", 0.6, 0.35, 0.010, 0.85, 0.20, 2202},
      {"C", 1.6, 0.15, 0.020, 1.10, 0.50, 3303},
      {"D", 2.4, 0.45, 0.005, 0.75, 0.00, 4404},
  };
}

std::size_t default_train_count(const std::string& site_id, std::size_t n_train) {
  if (site_id == "C") return std::max<std::size_t>(1, n_train / kSmallSiteDivisor);
  return n_train;
}

std::vector<std::uint8_t> encode_dataset(const SiteDataset& ds) {
  if (ds.train.empty()) throw Error(ErrorKind::kInvalidArgument, "refusing to save a dataset with no training samples");
  validate_profile(ds.profile);
  io::Writer w;
  w.raw(kDatasetMagic);
  w.u16(kDatasetVersion);
  w.string(profile_metadata(ds));
  w.u32(static_cast<std::uint32_t>(ds.train.size() + ds.test.size()));
  w.u32(static_cast<std::uint32_t>(ds.image_size));
  w.u32(static_cast<std::uint32_t>(ds.image_size));
  auto write_sample = [&](const kspace::KSpaceSample& s) {
    if (s.reference.shape() != ad::Shape{ds.image_size, ds.image_size}) {
      throw Error(ErrorKind::kShapeMismatch, "sample shape " + ad::shape_to_string(s.reference.shape()) +
                                                 " does not match image_size " + std::to_string(ds.image_size));
    }
    for (double v : s.reference.data()) {
      const auto f = static_cast<float>(v);
      if (static_cast<double>(f) != v) throw Error(ErrorKind::kInvalidArgument, "reference pixel is not float32-representable");
      w.f32(f);
    }
    w.u16(static_cast<std::uint16_t>(s.mask.kept_columns.size()));
    for (std::size_t c : s.mask.kept_columns) w.u16(static_cast<std::uint16_t>(c));
  };
  for (const auto& s : ds.train) write_sample(s);
  for (const auto& s : ds.test) write_sample(s);
  return std::move(w.bytes());
}

SiteDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  r.expect_magic(kDatasetMagic);
  const std::size_t version_at = r.offset();
  if (const auto version = r.u16(); version != kDatasetVersion) {
    throw FormatError(version_at, "unsupported FLMR version " + std::to_string(version));
  }
  const std::size_t meta_at = r.offset();
  const std::string meta = r.string();
  std::map<std::string, std::string> kv;
  std::istringstream lines(meta);
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(meta_at, "metadata line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  SiteDataset ds;
  if (!kv.contains("site_id")) throw FormatError(meta_at, "metadata is missing key site_id");
  ds.profile.site_id = kv["site_id"];
  ds.profile.contrast_gamma = parse_number<double>(kv, "contrast_gamma", meta_at);
  ds.profile.bias_field_strength = parse_number<double>(kv, "bias_field_strength", meta_at);
  ds.profile.noise_sigma = parse_number<double>(kv, "noise_sigma", meta_at);
  ds.profile.structure_scale = parse_number<double>(kv, "structure_scale", meta_at);
  ds.profile.lesion_probability = parse_number<double>(kv, "lesion_probability", meta_at);
  ds.profile.seed = parse_number<std::uint64_t>(kv, "seed", meta_at);
  ds.image_size = parse_number<std::size_t>(kv, "image_size", meta_at);
  ds.mask_params.acceleration = parse_number<double>(kv, "acceleration", meta_at);
  ds.mask_params.center_fraction = parse_number<double>(kv, "center_fraction", meta_at);
  const auto n_train = parse_number<std::size_t>(kv, "n_train", meta_at);
  const auto n_test = parse_number<std::size_t>(kv, "n_test", meta_at);
  try {
    validate_profile(ds.profile);
  } catch (const Error& e) {
    throw FormatError(meta_at, e.what());
  }

  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32();
  const std::uint32_t height = r.u32();
  const std::uint32_t width = r.u32();
  if (count != n_train + n_test) throw FormatError(count_at, "sample count disagrees with metadata");
  if (n_train == 0) throw FormatError(count_at, "dataset has no training samples");
  if (height != ds.image_size || width != ds.image_size) throw FormatError(count_at, "image dims disagree with metadata");

  kspace::Rng unused;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t sample_at = r.offset();
    r.require(static_cast<std::size_t>(height) * width * sizeof(float));
    std::vector<double> pixels(static_cast<std::size_t>(height) * width);
    for (auto& p : pixels) p = static_cast<double>(r.f32());
    kspace::MaskSpec mask{width, ds.mask_params.acceleration, ds.mask_params.center_fraction, {}};
    const std::uint16_t kept = r.u16();
    for (std::uint16_t c = 0; c < kept; ++c) mask.kept_columns.push_back(r.u16());
    try {
      kspace::validate_mask(mask);
    } catch (const Error& e) {
      throw FormatError(sample_at, std::string("sample ") + std::to_string(i) + ": " + e.what());
    }
    auto sample = kspace::make_sample(ad::Tensor({height, width}, std::move(pixels)), std::move(mask), 0.0, unused,
                                      ds.profile.site_id);
    (i < n_train ? ds.train : ds.test).push_back(std::move(sample));
  }
  r.require_end();
  return ds;
}

void save_dataset(const SiteDataset& ds, const std::filesystem::path& path) { io::write_file(path, encode_dataset(ds)); }

SiteDataset load_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path)); }

std::filesystem::path dataset_path(const std::filesystem::path& dir, const std::string& site_id) {
  return dir / (site_id + ".flmr");
}

std::vector<double> intensity_histogram(std::span<const kspace::KSpaceSample> samples, std::size_t bins) {
  std::vector<double> hist(bins, 0.0);
  double total = 0.0;
  for (const auto& s : samples) {
    for (double v : s.reference.data()) {
      const auto b = std::min(bins - 1, static_cast<std::size_t>(std::clamp(v, 0.0, 1.0) * static_cast<double>(bins)));
      hist[b] += 1.0;
      total += 1.0;
    }
  }
  if (total > 0.0) {
    for (auto& h : hist) h /= total;
  }
  return hist;
}

double jensen_shannon(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error(ErrorKind::kShapeMismatch, "histograms differ in length");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return js;
}

bool datasets_equal(const SiteDataset& a, const SiteDataset& b) {
  if (!(a.profile == b.profile) || a.image_size != b.image_size || !(a.mask_params == b.mask_params)) return false;
  if (a.train.size() != b.train.size() || a.test.size() != b.test.size()) return false;
  auto same = [](const kspace::KSpaceSample& x, const kspace::KSpaceSample& y) {
    return x.site_id == y.site_id && x.mask == y.mask && ad::bit_equal(x.input, y.input) &&
           ad::bit_equal(x.reference, y.reference);
  };
  return std::equal(a.train.begin(), a.train.end(), b.train.begin(), same) &&
         std::equal(a.test.begin(), a.test.end(), b.test.begin(), same);
}

}  // namespace fedrecon::sites
