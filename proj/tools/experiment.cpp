#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fedrecon/binary_io.hpp"
#include "fedrecon/crosssite.hpp"
#include "fedrecon/error.hpp"
#include "fedrecon/parallel.hpp"

namespace fedrecon::cli {
namespace {

using scenario::Strategy;

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : sep) + s;
  return out;
}

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return io::format_double(v);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// A model to train: strategy family, train sites and (for FLMRCM) the target.
struct ModelKey {
  Strategy kind;  // kSingle for any single-site model
  std::vector<std::string> train;
  std::string target;
  std::uint64_t seed;
  bool operator<(const ModelKey& o) const {
    return std::tie(seed, kind, train, target) < std::tie(o.seed, o.kind, o.train, o.target);
  }
};

std::vector<const sites::SiteDataset*> pick(const SiteMap& data, const std::vector<std::string>& ids) {
  std::vector<const sites::SiteDataset*> out;
  for (const auto& id : ids) out.push_back(&data.at(id));
  return out;
}

ParamSet train(const ExperimentConfig& cfg, const SiteMap& data, const ModelKey& key, std::size_t threads) {
  fl::FLConfig run = cfg.run_config(key.seed);
  run.threads = threads;
  const auto train_sites = pick(data, key.train);
  switch (key.kind) {
    case Strategy::kSingle: return fl::train_centralized(run, *train_sites.front());
    case Strategy::kMix: return fl::train_centralized(run, scenario::merge_sites(train_sites));
    case Strategy::kFLMR: return fl::run_flmr(run, train_sites).global;
    case Strategy::kFLMRCM: return crosssite::run_flmrcm(run, train_sites, data.at(key.target)).run.global;
    default: break;
  }
  throw Error(ErrorKind::kInvalidArgument, "no model family for this strategy");
}

// Trains every key once, in parallel, and returns the models by key.
std::map<ModelKey, ParamSet> train_all(const ExperimentConfig& cfg, const SiteMap& data,
                                       const std::vector<ModelKey>& keys, std::size_t threads) {
  std::vector<ModelKey> unique;
  std::set<ModelKey> seen;
  for (const auto& k : keys) {
    if (seen.insert(k).second) unique.push_back(k);
  }
  std::vector<ParamSet> models(unique.size());
  const std::size_t inner = std::max<std::size_t>(1, threads / std::max<std::size_t>(1, unique.size()));
  parallel_for(unique.size(), threads, [&](std::size_t i) { models[i] = train(cfg, data, unique[i], inner); });
  std::map<ModelKey, ParamSet> out;
  for (std::size_t i = 0; i < unique.size(); ++i) out.emplace(unique[i], std::move(models[i]));
  return out;
}

struct Combo {
  int scenario;
  Strategy strategy;
  std::vector<std::string> train;
  std::string test;
};

std::vector<Combo> plan(const ExperimentConfig& cfg) {
  std::vector<Combo> out;
  for (int sc : cfg.scenarios) {
    for (Strategy st : cfg.strategies) {
      for (const auto& t : cfg.sites) {
        std::vector<std::string> others;
        for (const auto& s : cfg.sites) {
          if (s != t) others.push_back(s);
        }
        if (st == Strategy::kSingle) {
          out.push_back({sc, st, {t}, t});
        } else if (st == Strategy::kCross) {
          for (const auto& s : others) out.push_back({sc, st, {s}, t});
        } else {
          auto train = sc == 1 ? others : cfg.sites;
          if (!train.empty()) out.push_back({sc, st, std::move(train), t});
        }
      }
    }
  }
  return out;
}

std::vector<ModelKey> keys_for(const Combo& c, std::uint64_t seed) {
  switch (c.strategy) {
    case Strategy::kSingle:
    case Strategy::kCross:
    case Strategy::kFused: {
      std::vector<ModelKey> out;
      for (const auto& s : c.train) out.push_back({Strategy::kSingle, {s}, {}, seed});
      return out;
    }
    case Strategy::kMix:
    case Strategy::kFLMR: return {{c.strategy, c.train, {}, seed}};
    case Strategy::kFLMRCM: return {{c.strategy, c.train, c.test, seed}};
  }
  return {};
}

std::string csv_header_comment(const ExperimentConfig& cfg) { return config_comment(cfg); }

}  // namespace

std::string config_comment(const ExperimentConfig& cfg) {
  std::string out;
  const std::string text = serialize_config(cfg);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    out += "# " + text.substr(pos, nl - pos) + "\n";
    pos = nl + 1;
  }
  return out;
}

std::filesystem::path data_dir(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  return cfg.data_dir.empty() ? out / "data" : std::filesystem::path(cfg.data_dir);
}

SiteMap generate_sites(const ExperimentConfig& cfg, std::size_t threads) {
  SiteMap out;
  for (const auto& id : cfg.sites) {
    out.emplace(id, sites::generate_site(cfg.profile(id), sites::default_train_count(id, cfg.n_train), cfg.n_test,
                                         cfg.fl.image_size, cfg.mask_params(), threads));
  }
  return out;
}

SiteMap load_sites(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  SiteMap out;
  for (const auto& id : cfg.sites) {
    const auto path = sites::dataset_path(dir, id);
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorKind::kIo, "missing dataset " + path.string() + " (run gen-data or pass --gen-data)");
    }
    auto ds = sites::load_dataset(path);
    const bool matches = ds.profile == cfg.profile(id) && ds.image_size == cfg.fl.image_size &&
                         ds.mask_params == cfg.mask_params() &&
                         ds.train.size() == sites::default_train_count(id, cfg.n_train) &&
                         ds.test.size() == cfg.n_test;
    if (!matches) {
      throw Error(ErrorKind::kInvalidArgument,
                  "dataset " + path.string() + " does not match the config (regenerate it with gen-data)");
    }
    out.emplace(id, std::move(ds));
  }
  return out;
}

void save_sites(const SiteMap& data, const std::filesystem::path& dir) {
  for (const auto& [id, ds] : data) sites::save_dataset(ds, sites::dataset_path(dir, id));
}

std::vector<RunRow> run_compare(const ExperimentConfig& cfg, const SiteMap& data, std::size_t threads) {
  cfg.validate();
  const auto combos = plan(cfg);
  if (combos.empty()) throw Error(ErrorKind::kInvalidArgument, "compare: no train/test combination to run");
  std::vector<ModelKey> keys;
  for (auto seed : cfg.seeds) {
    for (const auto& c : combos) {
      for (auto& k : keys_for(c, seed)) keys.push_back(std::move(k));
    }
  }
  const auto models = train_all(cfg, data, keys, threads);

  std::vector<RunRow> rows;
  for (auto seed : cfg.seeds) {
    for (const auto& c : combos) rows.push_back({c.scenario, c.strategy, c.train, c.test, seed, 0.0, 0.0, {}});
  }
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    RunRow& r = rows[i];
    const Combo c{r.scenario, r.strategy, r.train_sites, r.test_site};
    const auto& test = data.at(r.test_site).test;
    const auto ks = keys_for(c, r.seed);
    metrics::MetricsReport report;
    if (r.strategy == Strategy::kFused) {
      std::vector<std::vector<ad::Tensor>> preds;
      for (const auto& k : ks) preds.push_back(metrics::predict(models.at(k), cfg.fl.unet, test));
      report = metrics::evaluate_predictions(scenario::fuse_predictions(preds), test);
    } else {
      report = metrics::evaluate(models.at(ks.front()), cfg.fl.unet, test);
    }
    r.ssim = report.mean_ssim;
    r.psnr = report.mean_psnr;
    if (r.strategy == Strategy::kFLMR || r.strategy == Strategy::kFLMRCM) {
      r.latent_distance =
          crosssite::latent_distance(models.at(ks.front()), cfg.fl.unet, pick(data, r.train_sites), data.at(r.test_site));
    }
  });
  return rows;
}

std::string runs_csv(const ExperimentConfig& cfg, const std::vector<RunRow>& rows) {
  std::string out = csv_header_comment(cfg);
  out += "scenario,strategy,train_sites,test_site,seed,ssim,psnr,latent_distance\n";
  for (const auto& r : rows) {
    out += std::to_string(r.scenario) + "," + scenario::to_string(r.strategy) + "," + join(r.train_sites, "+") + "," +
           r.test_site + "," + std::to_string(r.seed) + "," + num(r.ssim) + "," + num(r.psnr) + "," +
           (r.latent_distance ? num(*r.latent_distance) : "") + "\n";
  }
  return out;
}

std::string compare_csv(const ExperimentConfig& cfg, const std::vector<RunRow>& rows) {
  struct Group {
    int scenario;
    Strategy strategy;
    std::vector<std::string> train;
    std::string test;
    std::vector<double> ssim, psnr, dist;
  };
  std::vector<Group> groups;
  for (const auto& r : rows) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
      return g.scenario == r.scenario && g.strategy == r.strategy && g.train == r.train_sites && g.test == r.test_site;
    });
    if (it == groups.end()) {
      groups.push_back({r.scenario, r.strategy, r.train_sites, r.test_site, {}, {}, {}});
      it = std::prev(groups.end());
    }
    it->ssim.push_back(r.ssim);
    it->psnr.push_back(r.psnr);
    if (r.latent_distance) it->dist.push_back(*r.latent_distance);
  }
  std::string out = csv_header_comment(cfg);
  out += "scenario,strategy,train_sites,test_site,seeds,mean_ssim,mean_psnr,median_ssim,median_psnr,latent_distance\n";
  auto emit = [&](int sc, Strategy st, const std::string& train, const std::string& test, std::size_t seeds,
                  double ms, double mp, double meds, double medp, const std::vector<double>& dist) {
    out += std::to_string(sc) + "," + scenario::to_string(st) + "," + train + "," + test + "," +
           std::to_string(seeds) + "," + num(ms) + "," + num(mp) + "," + num(meds) + "," + num(medp) + "," +
           (dist.empty() ? "" : num(mean(dist))) + "\n";
  };
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    emit(g.scenario, g.strategy, join(g.train, "+"), g.test, g.ssim.size(), mean(g.ssim), mean(g.psnr),
         median(g.ssim), median(g.psnr), g.dist);
    const bool last_of_kind = i + 1 == groups.size() || groups[i + 1].scenario != g.scenario ||
                              groups[i + 1].strategy != g.strategy;
    if (!last_of_kind) continue;
    std::vector<const Group*> kind;
    for (const auto& h : groups) {
      if (h.scenario == g.scenario && h.strategy == g.strategy) kind.push_back(&h);
    }
    if (kind.size() < 2) continue;
    // Average row: per seed the mean over combos, then mean / median over seeds.
    const std::size_t n_seeds = g.ssim.size();
    std::vector<double> s(n_seeds, 0.0), p(n_seeds, 0.0), d;
    for (const auto* h : kind) {
      for (std::size_t k = 0; k < n_seeds; ++k) {
        s[k] += h->ssim[k] / static_cast<double>(kind.size());
        p[k] += h->psnr[k] / static_cast<double>(kind.size());
      }
      d.insert(d.end(), h->dist.begin(), h->dist.end());
    }
    emit(g.scenario, g.strategy, "", "Average", n_seeds, mean(s), mean(p), median(s), median(p), d);
  }
  return out;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const SiteMap& data, std::size_t threads) {
  cfg.validate();
  if (cfg.sites.size() < 2) throw Error(ErrorKind::kInvalidArgument, "ablate-cm needs at least two sites");
  std::vector<ModelKey> keys;
  std::vector<AblationRow> rows;
  for (auto seed : cfg.seeds) {
    for (const auto& s : cfg.sites) {
      keys.push_back({Strategy::kFLMR, {s}, {}, seed});
      for (const auto& t : cfg.sites) {
        if (s == t) continue;
        keys.push_back({Strategy::kFLMRCM, {s}, t, seed});
        rows.push_back({s, t, seed, {}, {}, 0.0, 0.0});
      }
    }
  }
  const auto models = train_all(cfg, data, keys, threads);
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    auto& r = rows[i];
    const auto& without = models.at({Strategy::kFLMR, {r.source}, {}, r.seed});
    const auto& with = models.at({Strategy::kFLMRCM, {r.source}, r.target, r.seed});
    const auto& test = data.at(r.target);
    const std::vector<const sites::SiteDataset*> src{&data.at(r.source)};
    r.without_cm = metrics::evaluate(without, cfg.fl.unet, test.test);
    r.with_cm = metrics::evaluate(with, cfg.fl.unet, test.test);
    r.distance_without = crosssite::latent_distance(without, cfg.fl.unet, src, test);
    r.distance_with = crosssite::latent_distance(with, cfg.fl.unet, src, test);
  });
  return rows;
}

std::string ablation_csv(const ExperimentConfig& cfg, const std::vector<AblationRow>& rows) {
  std::string out = csv_header_comment(cfg);
  out += "source,target,seeds,ssim_without_cm,psnr_without_cm,ssim_with_cm,psnr_with_cm,"
         "latent_distance_without_cm,latent_distance_with_cm\n";
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& r : rows) {
    if (std::find(pairs.begin(), pairs.end(), std::pair{r.source, r.target}) == pairs.end()) {
      pairs.emplace_back(r.source, r.target);
    }
  }
  for (const auto& [s, t] : pairs) {
    std::vector<double> sw, pw, sc, pc, dw, dc;
    for (const auto& r : rows) {
      if (r.source != s || r.target != t) continue;
      sw.push_back(r.without_cm.mean_ssim);
      pw.push_back(r.without_cm.mean_psnr);
      sc.push_back(r.with_cm.mean_ssim);
      pc.push_back(r.with_cm.mean_psnr);
      dw.push_back(r.distance_without);
      dc.push_back(r.distance_with);
    }
    out += s + "," + t + "," + std::to_string(sw.size()) + "," + num(mean(sw)) + "," + num(mean(pw)) + "," +
           num(mean(sc)) + "," + num(mean(pc)) + "," + num(mean(dw)) + "," + num(mean(dc)) + "\n";
  }
  return out;
}

}  // namespace fedrecon::cli
