#include "fedrecon/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "fedrecon/binary_io.hpp"
#include "fedrecon/error.hpp"
#include "json.hpp"

namespace fedrecon::metrics {
namespace {

constexpr std::size_t kChunk = 16;

void require_pair(const char* op, const ad::Tensor& pred, const ad::Tensor& ref) {
  if (pred.shape() != ref.shape()) {
    throw Error(ErrorKind::kShapeMismatch, std::string(op) + ": " + ad::shape_to_string(pred.shape()) + " vs " +
                                               ad::shape_to_string(ref.shape()));
  }
  if (ref.rank() != 2) throw Error(ErrorKind::kShapeMismatch, std::string(op) + " expects H x W images");
}

void require_range(const char* op, double range) {
  if (!(range > 0.0) || !std::isfinite(range)) {
    throw Error(ErrorKind::kDomain, std::string(op) + ": data range must be positive, got " + std::to_string(range));
  }
}

// Valid-mode separable filtering of an h x w image with the 1D kernel `g`.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& g) {
  const std::size_t k = g.size();
  const std::size_t oh = h - k + 1;
  const std::size_t ow = w - k + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += g[j] * img[y * w + x + j];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += g[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

std::vector<double> gaussian_1d() {
  std::vector<double> g(kSsimWindow);
  const double c = static_cast<double>(kSsimWindow / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

nlohmann::ordered_json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace

double data_range(const ad::Tensor& ref) {
  const auto d = ref.data();
  if (d.empty()) throw Error(ErrorKind::kInvalidArgument, "data_range of an empty tensor");
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  return *hi - *lo;
}

double psnr(const ad::Tensor& pred, const ad::Tensor& ref, double range) {
  require_pair("psnr", pred, ref);
  require_range("psnr", range);
  double sse = 0.0;
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    const double d = pred.data()[i] - ref.data()[i];
    sse += d * d;
  }
  if (sse == 0.0) return kInfinity;
  const double mse = sse / static_cast<double>(ref.numel());
  return 10.0 * std::log10(range * range / mse);
}

std::vector<double> gaussian_window() {
  const auto g = gaussian_1d();
  std::vector<double> w(kSsimWindow * kSsimWindow);
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    for (std::size_t j = 0; j < kSsimWindow; ++j) w[i * kSsimWindow + j] = g[i] * g[j];
  }
  return w;
}

double ssim(const ad::Tensor& pred, const ad::Tensor& ref, double range) {
  require_pair("ssim", pred, ref);
  require_range("ssim", range);
  const std::size_t h = ref.dim(0);
  const std::size_t w = ref.dim(1);
  if (h < kSsimWindow || w < kSsimWindow) {
    throw Error(ErrorKind::kShapeMismatch, "ssim: image " + ad::shape_to_string(ref.shape()) +
                                               " is smaller than the 11x11 window");
  }
  const auto g = gaussian_1d();
  const std::vector<double> a(pred.data().begin(), pred.data().end());
  const std::vector<double> b(ref.data().begin(), ref.data().end());
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, h, w, g);
  const auto mu_b = filter_valid(b, h, w, g);
  const auto e_aa = filter_valid(aa, h, w, g);
  const auto e_bb = filter_valid(bb, h, w, g);
  const auto e_ab = filter_valid(ab, h, w, g);
  const double c1 = (kSsimK1 * range) * (kSsimK1 * range);
  const double c2 = (kSsimK2 * range) * (kSsimK2 * range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
    const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    total += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

void MetricsReport::finalize() {
  if (per_sample.empty()) throw Error(ErrorKind::kInvalidArgument, "metrics report has no samples");
  double s = 0.0;
  double p = 0.0;
  for (const auto& m : per_sample) {
    s += m.ssim;
    p += m.psnr;
  }
  mean_ssim = s / static_cast<double>(per_sample.size());
  mean_psnr = p / static_cast<double>(per_sample.size());
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["strategy"] = strategy;
  j["train_sites"] = train_sites;
  j["test_site"] = test_site;
  j["seed"] = seed;
  j["mean_ssim"] = number(mean_ssim);
  j["mean_psnr"] = number(mean_psnr);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& m : per_sample) {
    rows.push_back({{"index", m.index}, {"ssim", number(m.ssim)}, {"psnr", number(m.psnr)}});
  }
  j["per_sample"] = std::move(rows);
  return j.dump(2) + "\n";
}

MetricsReport evaluate_predictions(std::span<const ad::Tensor> predictions,
                                   std::span<const kspace::KSpaceSample> samples) {
  if (samples.empty()) throw Error(ErrorKind::kInvalidArgument, "evaluation needs at least one test sample");
  if (predictions.size() != samples.size()) {
    throw Error(ErrorKind::kInvalidArgument, std::to_string(predictions.size()) + " predictions for " +
                                                 std::to_string(samples.size()) + " samples");
  }
  MetricsReport report;
  if (!samples.empty()) report.test_site = samples.front().site_id;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& ref = samples[i].reference;
    const double range = data_range(ref);
    report.per_sample.push_back({i, ssim(predictions[i], ref, range), psnr(predictions[i], ref, range)});
  }
  report.finalize();
  return report;
}

std::vector<ad::Tensor> predict(const ParamSet& params, const model::UNetConfig& cfg,
                                std::span<const kspace::KSpaceSample> samples) {
  ParamSet frozen = params.clone();
  frozen.set_requires_grad(false);
  std::vector<ad::Tensor> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<ad::Tensor> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(samples[i].input);
    const ad::Tensor y = model::reconstruct(frozen, cfg, model::stack_images(images));
    const std::size_t h = y.dim(2);
    const std::size_t w = y.dim(3);
    for (std::size_t b = 0; b < images.size(); ++b) {
      const auto first = y.data().begin() + static_cast<std::ptrdiff_t>(b * h * w);
      out.emplace_back(ad::Shape{h, w}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(h * w)));
    }
  }
  return out;
}

MetricsReport evaluate(const ParamSet& params, const model::UNetConfig& cfg,
                       std::span<const kspace::KSpaceSample> samples) {
  if (samples.empty()) throw Error(ErrorKind::kInvalidArgument, "evaluation needs at least one test sample");
  const auto preds = predict(params, cfg, samples);
  return evaluate_predictions(preds, samples);
}

MetricsReport evaluate_zero_filled(std::span<const kspace::KSpaceSample> samples) {
  std::vector<ad::Tensor> inputs;
  for (const auto& s : samples) inputs.push_back(s.input);
  auto report = evaluate_predictions(inputs, samples);
  report.strategy = "ZeroFilled";
  return report;
}

std::string latents_csv(const ParamSet& params, const model::UNetConfig& cfg,
                        std::span<const kspace::KSpaceSample> samples) {
  ParamSet encoder = model::encoder_view(params).clone();
  encoder.set_requires_grad(false);
  std::string out;
  std::size_t width = 0;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<ad::Tensor> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(samples[i].input);
    const auto z = model::encoder_forward(encoder, cfg, model::stack_images(images)).latent.features;
    const std::size_t per = z.numel() / images.size();
    if (width == 0) {
      width = per;
      out += "site_id";
      for (std::size_t j = 0; j < per; ++j) out += ",f" + std::to_string(j);
      out += "\n";
    }
    for (std::size_t b = 0; b < images.size(); ++b) {
      out += samples[start + b].site_id;
      for (std::size_t j = 0; j < per; ++j) out += "," + io::format_double(z.data()[b * per + j]);
      out += "\n";
    }
  }
  return out;
}

void export_latents(const ParamSet& params, const model::UNetConfig& cfg,
                    std::span<const kspace::KSpaceSample> samples, const std::filesystem::path& path) {
  if (samples.empty()) throw Error(ErrorKind::kInvalidArgument, "export_latents needs at least one sample");
  io::write_text(path, latents_csv(params, cfg, samples));
}

}  // namespace fedrecon::metrics
