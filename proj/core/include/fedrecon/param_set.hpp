#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedrecon/binary_io.hpp"
#include "fedrecon/tensor.hpp"

namespace fedrecon {

// Ordered, uniquely named model weights; the unit of federated communication.
class ParamSet {
 public:
  using Entry = std::pair<std::string, ad::Tensor>;

  ParamSet() = default;

  void add(std::string name, ad::Tensor tensor);
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t numel() const;

  const ad::Tensor& at(std::string_view name) const;
  ad::Tensor& at(std::string_view name);
  bool contains(std::string_view name) const;

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Independent deep copy; every tensor becomes a fresh leaf.
  ParamSet clone() const;
  // Handles (not copies) of the entries whose name starts with any prefix.
  ParamSet view(std::span<const std::string_view> prefixes) const;
  // Overwrites values of matching names from `source` (names must exist here).
  void assign_from(const ParamSet& source);

  void set_requires_grad(bool value);
  void zero_grad();

  bool shape_compatible(const ParamSet& other) const;
  // Throws naming the first mismatched entry.
  void require_shape_compatible(const ParamSet& other, std::string_view context) const;
  bool bit_equal(const ParamSet& other) const;

 private:
  std::vector<Entry> entries_;
};

// "FLMP" binary codec: magic, u16 version, u32 count, then per entry a
// length-prefixed UTF-8 name, u32 rank + u32 dims, f64 little-endian data.
void write_params(io::Writer& w, const ParamSet& params);
ParamSet read_params(io::Reader& r);
std::vector<std::uint8_t> serialize_params(const ParamSet& params);
ParamSet deserialize_params(std::span<const std::uint8_t> bytes);
// Files may carry a trailing "META" block with free-form UTF-8 text.
void save_params(const ParamSet& params, const std::filesystem::path& path, std::string_view metadata = {});
ParamSet load_params(const std::filesystem::path& path, std::string* metadata = nullptr);

}  // namespace fedrecon
