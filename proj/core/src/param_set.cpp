#include "fedrecon/param_set.hpp"

#include <algorithm>

#include "fedrecon/binary_io.hpp"
#include "fedrecon/error.hpp"

namespace fedrecon {
namespace {

constexpr std::string_view kParamMagic = "FLMP";
constexpr std::string_view kMetaMagic = "META";
constexpr std::uint16_t kParamVersion = 1;

}  // namespace

void ParamSet::add(std::string name, ad::Tensor tensor) {
  if (contains(name)) throw Error(ErrorKind::kInvalidArgument, "duplicate parameter name " + name);
  if (!tensor.defined()) throw Error(ErrorKind::kInvalidArgument, "undefined tensor for parameter " + name);
  entries_.emplace_back(std::move(name), std::move(tensor));
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

const ad::Tensor& ParamSet::at(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw Error(ErrorKind::kInvalidArgument, "no parameter named " + std::string(name));
}

ad::Tensor& ParamSet::at(std::string_view name) {
  return const_cast<ad::Tensor&>(static_cast<const ParamSet&>(*this).at(name));
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  out.entries_.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.entries_.emplace_back(name, t.clone());
  return out;
}

ParamSet ParamSet::view(std::span<const std::string_view> prefixes) const {
  ParamSet out;
  for (const auto& [name, t] : entries_) {
    const bool match = std::any_of(prefixes.begin(), prefixes.end(),
                                   [&](std::string_view p) { return name.starts_with(p); });
    if (match) out.entries_.emplace_back(name, t);
  }
  return out;
}

void ParamSet::assign_from(const ParamSet& source) {
  for (const auto& [name, src] : source.entries_) {
    ad::Tensor& dst = at(name);
    if (dst.shape() != src.shape()) {
      throw Error(ErrorKind::kShapeMismatch, "parameter " + name + ": " + ad::shape_to_string(dst.shape()) +
                                                 " vs " + ad::shape_to_string(src.shape()));
    }
    auto out = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), out.begin());
  }
}

void ParamSet::set_requires_grad(bool value) {
  for (auto& [name, t] : entries_) t.set_requires_grad(value);
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

bool ParamSet::shape_compatible(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (entries_[i].second.shape() != other.entries_[i].second.shape()) return false;
  }
  return true;
}

void ParamSet::require_shape_compatible(const ParamSet& other, std::string_view context) const {
  const std::size_t n = std::min(entries_.size(), other.entries_.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [na, ta] = entries_[i];
    const auto& [nb, tb] = other.entries_[i];
    if (na != nb || ta.shape() != tb.shape()) {
      throw Error(ErrorKind::kShapeMismatch, std::string(context) + ": entry " + std::to_string(i) + " differs: " + na +
                                                 ad::shape_to_string(ta.shape()) + " vs " + nb +
                                                 ad::shape_to_string(tb.shape()));
    }
  }
  if (entries_.size() != other.entries_.size()) {
    const auto& extra = entries_.size() > n ? entries_[n].first : other.entries_[n].first;
    throw Error(ErrorKind::kShapeMismatch, std::string(context) + ": entry counts differ (" +
                                               std::to_string(entries_.size()) + " vs " +
                                               std::to_string(other.entries_.size()) + "), first unmatched " + extra);
  }
}

bool ParamSet::bit_equal(const ParamSet& other) const {
  if (!shape_compatible(other)) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!ad::bit_equal(entries_[i].second, other.entries_[i].second)) return false;
  }
  return true;
}

void write_params(io::Writer& w, const ParamSet& params) {
  w.raw(kParamMagic);
  w.u16(kParamVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.string(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
  }
}

std::vector<std::uint8_t> serialize_params(const ParamSet& params) {
  io::Writer w;
  write_params(w, params);
  return std::move(w.bytes());
}

ParamSet read_params(io::Reader& r) {
  r.expect_magic(kParamMagic);
  const std::size_t version_at = r.offset();
  if (const auto version = r.u16(); version != kParamVersion) {
    throw FormatError(version_at, "unsupported FLMP version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  ParamSet out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.offset();
    std::string name = r.string();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError(entry_at, "implausible rank " + std::to_string(rank) + " for " + name);
    ad::Shape shape(rank);
    for (auto& d : shape) {
      const std::size_t dim_at = r.offset();
      d = r.u32();
      if (d == 0) throw FormatError(dim_at, "zero dimension in " + name);
    }
    const std::size_t n = ad::shape_numel(shape);
    r.require(n * sizeof(double));
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64();
    if (out.contains(name)) throw FormatError(entry_at, "duplicate parameter " + name);
    out.add(std::move(name), ad::Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

ParamSet deserialize_params(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  ParamSet out = read_params(r);
  r.require_end();
  return out;
}

void save_params(const ParamSet& params, const std::filesystem::path& path, std::string_view metadata) {
  io::Writer w;
  write_params(w, params);
  if (!metadata.empty()) {
    w.raw(kMetaMagic);
    w.string(std::string(metadata));
  }
  io::write_file(path, w.bytes());
}

ParamSet load_params(const std::filesystem::path& path, std::string* metadata) {
  const auto bytes = io::read_file(path);
  io::Reader r(bytes);
  ParamSet out = read_params(r);
  std::string meta;
  if (!r.at_end()) {
    r.expect_magic(kMetaMagic);
    meta = r.string();
  }
  r.require_end();
  if (metadata) *metadata = std::move(meta);
  return out;
}

}  // namespace fedrecon
