#include "config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <set>

#include "fedrecon/binary_io.hpp"
#include "fedrecon/error.hpp"

namespace fedrecon::cli {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    const auto item = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (item.empty()) throw Error(ErrorKind::kInvalidArgument, "empty item in list '" + std::string(text) + "'");
    out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw Error(ErrorKind::kInvalidArgument,
              "config key " + std::string(key) + ": '" + std::string(value) + "' is not " + expected);
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

std::string str(bool b) { return b ? "true" : "false"; }
std::string str(double d) { return io::format_double(d); }
std::string str(std::uint64_t u) { return std::to_string(u); }

sites::SiteProfile default_profile(const std::string& id) {
  for (const auto& p : sites::default_profiles()) {
    if (p.site_id == id) return p;
  }
  sites::SiteProfile p;
  p.site_id = id;
  return p;
}

using Setter = std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;
struct Key {
  const char* name;
  Setter set;
  Getter get;
};

#define FR_SIZE(KEY, FIELD)                                                                       \
  Key {                                                                                           \
    KEY, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_u64(k, v); }, \
        [](const ExperimentConfig& c) { return str(static_cast<std::uint64_t>(c.FIELD)); }        \
  }
#define FR_REAL(KEY, FIELD)                                                                          \
  Key {                                                                                              \
    KEY, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_double(k, v); }, \
        [](const ExperimentConfig& c) { return str(c.FIELD); }                                        \
  }
#define FR_BOOL(KEY, FIELD)                                                                        \
  Key {                                                                                            \
    KEY, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_bool(k, v); }, \
        [](const ExperimentConfig& c) { return str(c.FIELD); }                                      \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      FR_SIZE("fl.local_epochs", fl.local_epochs),
      FR_SIZE("fl.global_rounds", fl.global_rounds),
      FR_REAL("fl.lr1", fl.lr1),
      FR_REAL("fl.lr2", fl.lr2),
      FR_REAL("fl.lr1_fraction", fl.lr1_fraction),
      FR_SIZE("fl.batch_size", fl.batch_size),
      FR_REAL("fl.lambda_adv", fl.lambda_adv),
      FR_BOOL("fl.inverted_source_term", fl.inverted_source_term),
      FR_REAL("fl.acceleration", fl.acceleration),
      FR_REAL("fl.center_fraction", fl.center_fraction),
      FR_SIZE("fl.image_size", fl.image_size),
      FR_BOOL("fl.weighted_average", fl.weighted_average),
      FR_BOOL("fl.persist_adam", fl.persist_adam),
      FR_SIZE("model.base_channels", fl.unet.base_channels),
      FR_SIZE("model.depth", fl.unet.depth),
      FR_SIZE("model.identifier_hidden", fl.identifier_hidden),
      Key{"data.sites",
          [](ExperimentConfig& c, std::string_view, std::string_view v) {
            c.sites = split_list(v);
            for (const auto& id : c.sites) {
              if (!c.profiles.contains(id)) c.profiles[id] = default_profile(id);
            }
          },
          [](const ExperimentConfig& c) { return join(c.sites); }},
      FR_SIZE("data.n_train", n_train),
      FR_SIZE("data.n_test", n_test),
      Key{"data.dir", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.data_dir = v; },
          [](const ExperimentConfig& c) { return c.data_dir; }},
      Key{"experiment.strategies",
          [](ExperimentConfig& c, std::string_view, std::string_view v) {
            c.strategies.clear();
            for (const auto& s : split_list(v)) c.strategies.push_back(scenario::parse_strategy(s));
          },
          [](const ExperimentConfig& c) {
            std::vector<std::string> names;
            for (auto s : c.strategies) names.emplace_back(scenario::to_string(s));
            return join(names);
          }},
      Key{"experiment.scenarios",
          [](ExperimentConfig& c, std::string_view k, std::string_view v) {
            c.scenarios.clear();
            for (const auto& s : split_list(v)) c.scenarios.push_back(static_cast<int>(to_u64(k, s)));
          },
          [](const ExperimentConfig& c) {
            std::vector<std::string> items;
            for (int s : c.scenarios) items.push_back(std::to_string(s));
            return join(items);
          }},
      Key{"experiment.seeds", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.seeds = parse_seed_list(v); },
          [](const ExperimentConfig& c) {
            std::vector<std::string> items;
            for (auto s : c.seeds) items.push_back(std::to_string(s));
            return join(items);
          }},
      Key{"experiment.train_sites",
          [](ExperimentConfig& c, std::string_view, std::string_view v) { c.train_sites = split_list(v); },
          [](const ExperimentConfig& c) { return join(c.train_sites); }},
      Key{"experiment.test_site", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.test_site = v; },
          [](const ExperimentConfig& c) { return c.test_site; }},
      Key{"experiment.model", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.model_path = v; },
          [](const ExperimentConfig& c) { return c.model_path; }},
  };
  return table;
}

#undef FR_SIZE
#undef FR_REAL
#undef FR_BOOL

constexpr const char* kProfileFields[] = {"contrast_gamma",     "bias_field_strength", "noise_sigma",
                                          "structure_scale",    "lesion_probability",  "seed"};

void set_profile_field(sites::SiteProfile& p, std::string_view field, std::string_view key, std::string_view v) {
  if (field == "contrast_gamma") p.contrast_gamma = to_double(key, v);
  else if (field == "bias_field_strength") p.bias_field_strength = to_double(key, v);
  else if (field == "noise_sigma") p.noise_sigma = to_double(key, v);
  else if (field == "structure_scale") p.structure_scale = to_double(key, v);
  else if (field == "lesion_probability") p.lesion_probability = to_double(key, v);
  else if (field == "seed") p.seed = to_u64(key, v);
  else throw Error(ErrorKind::kInvalidArgument, "unknown config key " + std::string(key));
}

std::string get_profile_field(const sites::SiteProfile& p, std::string_view field) {
  if (field == "contrast_gamma") return str(p.contrast_gamma);
  if (field == "bias_field_strength") return str(p.bias_field_strength);
  if (field == "noise_sigma") return str(p.noise_sigma);
  if (field == "structure_scale") return str(p.structure_scale);
  if (field == "lesion_probability") return str(p.lesion_probability);
  return str(p.seed);
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (const auto& id : sites) profiles[id] = default_profile(id);
}

const sites::SiteProfile& ExperimentConfig::profile(const std::string& id) const {
  auto it = profiles.find(id);
  if (it == profiles.end()) throw Error(ErrorKind::kInvalidArgument, "no profile for site " + id);
  return it->second;
}

fl::FLConfig ExperimentConfig::run_config(std::uint64_t seed) const {
  fl::FLConfig out = fl;
  out.seed = seed;
  return out;
}

bool ExperimentConfig::operator==(const ExperimentConfig& o) const { return serialize_config(*this) == serialize_config(o); }

void ExperimentConfig::validate() const {
  fl.validate();
  if (sites.empty()) throw Error(ErrorKind::kInvalidArgument, "data.sites is empty");
  std::set<std::string> seen;
  std::set<std::uint64_t> site_seeds;
  for (const auto& id : sites) {
    if (id.empty() || id.find_first_of(",:+ \t") != std::string::npos || id == fl::kServerId) {
      throw Error(ErrorKind::kInvalidArgument, "invalid site id '" + id + "'");
    }
    if (!seen.insert(id).second) throw Error(ErrorKind::kInvalidArgument, "site " + id + " listed twice in data.sites");
    const auto& p = profile(id);
    if (!(p.contrast_gamma > 0.0) || !(p.structure_scale > 0.0) || p.bias_field_strength < 0.0 ||
        p.noise_sigma < 0.0 || p.lesion_probability < 0.0 || p.lesion_probability > 1.0) {
      throw Error(ErrorKind::kInvalidArgument, "site " + id + " has an out-of-range profile value");
    }
  }
  if (n_train == 0 || n_test == 0) throw Error(ErrorKind::kInvalidArgument, "data.n_train and data.n_test must be positive");
  if (strategies.empty()) throw Error(ErrorKind::kInvalidArgument, "experiment.strategies is empty");
  if (seeds.empty()) throw Error(ErrorKind::kInvalidArgument, "experiment.seeds is empty");
  if (scenarios.empty()) throw Error(ErrorKind::kInvalidArgument, "experiment.scenarios is empty");
  for (int s : scenarios) {
    if (s != 1 && s != 2) throw Error(ErrorKind::kInvalidArgument, "experiment.scenarios: scenario must be 1 or 2");
  }
  for (const auto& id : train_sites) {
    if (!seen.contains(id)) throw Error(ErrorKind::kInvalidArgument, "experiment.train_sites: unknown site " + id);
  }
  if (!test_site.empty() && !seen.contains(test_site)) {
    throw Error(ErrorKind::kInvalidArgument, "experiment.test_site: unknown site " + test_site);
  }
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(text)) out.push_back(to_u64("seeds", item));
  if (out.empty()) throw Error(ErrorKind::kInvalidArgument, "seed list is empty");
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::vector<std::pair<std::string, std::string>> site_keys;
  std::set<std::string> assigned;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::kInvalidArgument, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (!assigned.insert(key).second) {
      throw Error(ErrorKind::kInvalidArgument, "config line " + std::to_string(line_no) + ": duplicate key " + key);
    }
    if (key.starts_with("site.")) {
      site_keys.emplace_back(key, value);
      continue;
    }
    const auto& table = keys();
    auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return key == k.name; });
    if (it == table.end()) {
      throw Error(ErrorKind::kInvalidArgument, "config line " + std::to_string(line_no) + ": unknown key " + key);
    }
    it->set(cfg, key, value);
  }
  // Profile overrides apply after data.sites, whatever their position.
  for (const auto& [key, value] : site_keys) {
    const auto dot = key.find('.', 5);
    if (dot == std::string::npos) throw Error(ErrorKind::kInvalidArgument, "unknown config key " + key);
    const std::string id = key.substr(5, dot - 5);
    if (std::find(cfg.sites.begin(), cfg.sites.end(), id) == cfg.sites.end()) {
      throw Error(ErrorKind::kInvalidArgument, "config key " + key + " names a site not in data.sites");
    }
    set_profile_field(cfg.profiles[id], std::string_view(key).substr(dot + 1), key, value);
  }
  for (auto it = cfg.profiles.begin(); it != cfg.profiles.end();) {
    if (std::find(cfg.sites.begin(), cfg.sites.end(), it->first) == cfg.sites.end()) it = cfg.profiles.erase(it);
    else ++it;
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  for (const auto& id : cfg.sites) {
    const auto& p = cfg.profile(id);
    for (const char* field : kProfileFields) out += "site." + id + "." + field + " = " + get_profile_field(p, field) + "\n";
  }
  return out;
}

}  // namespace fedrecon::cli
