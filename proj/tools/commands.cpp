#include "commands.hpp"

#include <cstdlib>

#include "experiment.hpp"
#include "fedrecon/binary_io.hpp"
#include "fedrecon/error.hpp"
#include "fedrecon/parallel.hpp"
#include "json.hpp"

namespace fedrecon::cli {
namespace {

ExperimentConfig load(const CommandOptions& opt) {
  ExperimentConfig cfg = load_config(opt.config);
  if (opt.seeds) {
    cfg.seeds = *opt.seeds;
    cfg.validate();
  }
  return cfg;
}

SiteMap datasets(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const auto dir = data_dir(cfg, opt.out);
  if (opt.gen_data) {
    bool missing = false;
    for (const auto& id : cfg.sites) missing = missing || !std::filesystem::exists(sites::dataset_path(dir, id));
    if (missing) save_sites(generate_sites(cfg, opt.threads), dir);
  }
  return load_sites(cfg, dir);
}

void write_config(const ExperimentConfig& cfg, const CommandOptions& opt) {
  io::write_text(opt.out / "config.txt", serialize_config(cfg));
}

}  // namespace

std::size_t threads_from(std::optional<std::size_t> flag) {
  if (flag) return resolve_threads(*flag);
  if (const char* env = std::getenv("FEDRECON_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end == nullptr || *end != '\0') {
      throw Error(ErrorKind::kInvalidArgument, std::string("FEDRECON_THREADS is not a number: ") + env);
    }
    return resolve_threads(v);
  }
  return 1;
}

void cmd_gen_data(const CommandOptions& opt) {
  const auto cfg = load(opt);
  const auto dir = data_dir(cfg, opt.out);
  save_sites(generate_sites(cfg, opt.threads), dir);
  io::write_text(dir / "config.txt", serialize_config(cfg));
}

void cmd_train(const CommandOptions& opt) {
  const auto cfg = load(opt);
  if (cfg.strategies.size() != 1) {
    throw Error(ErrorKind::kInvalidArgument, "train runs exactly one strategy; experiment.strategies lists " +
                                                 std::to_string(cfg.strategies.size()));
  }
  if (cfg.train_sites.empty() || cfg.test_site.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "train needs experiment.train_sites and experiment.test_site");
  }
  const auto data = datasets(cfg, opt);
  std::vector<const sites::SiteDataset*> train;
  for (const auto& id : cfg.train_sites) train.push_back(&data.at(id));
  const auto strategy = cfg.strategies.front();
  const std::string config_text = serialize_config(cfg);
  write_config(cfg, opt);
  const std::size_t inner = std::max<std::size_t>(1, opt.threads / cfg.seeds.size());
  parallel_for(cfg.seeds.size(), opt.threads, [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    auto run = cfg.run_config(seed);
    run.threads = inner;
    const auto result = scenario::run_scenario(strategy, run, train, data.at(cfg.test_site));
    const auto dir = opt.out / ("seed-" + std::to_string(seed));
    nlohmann::ordered_json meta;
    meta["config"] = config_text;
    meta["seed"] = seed;
    if (result.fused_models.empty()) {
      save_params(result.model, dir / "model.flmp", meta.dump());
    } else {
      for (std::size_t m = 0; m < result.fused_models.size(); ++m) {
        save_params(result.fused_models[m], dir / ("model_" + cfg.train_sites[m] + ".flmp"), meta.dump());
      }
    }
    nlohmann::ordered_json j;
    j["config"] = config_text;
    j["seed"] = seed;
    j["report"] = nlohmann::ordered_json::parse(result.report.to_json());
    if (result.latent_distance) j["latent_distance"] = *result.latent_distance;
    io::write_text(dir / "metrics.json", j.dump(2) + "\n");
    nlohmann::ordered_json head;
    head["config"] = config_text;
    head["seed"] = seed;
    head["strategy"] = scenario::to_string(strategy);
    io::write_text(dir / "rounds.jsonl", head.dump() + "\n" + fl::rounds_to_jsonl(result.rounds));
  });
}

void cmd_compare(const CommandOptions& opt) {
  const auto cfg = load(opt);
  const auto data = datasets(cfg, opt);
  const auto rows = run_compare(cfg, data, opt.threads);
  write_config(cfg, opt);
  io::write_text(opt.out / "compare.csv", compare_csv(cfg, rows));
  io::write_text(opt.out / "runs.csv", runs_csv(cfg, rows));
}

void cmd_ablate_cm(const CommandOptions& opt) {
  const auto cfg = load(opt);
  const auto data = datasets(cfg, opt);
  const auto rows = run_ablation(cfg, data, opt.threads);
  write_config(cfg, opt);
  io::write_text(opt.out / "ablation.csv", ablation_csv(cfg, rows));
}

void cmd_export_latents(const CommandOptions& opt) {
  const auto cfg = load(opt);
  if (cfg.model_path.empty()) throw Error(ErrorKind::kInvalidArgument, "export-latents needs experiment.model");
  const auto params = load_params(cfg.model_path);
  params.require_shape_compatible(fl::initial_params(cfg.run_config(cfg.seeds.front())), "experiment.model");
  const auto data = datasets(cfg, opt);
  std::vector<kspace::KSpaceSample> samples;
  for (const auto& id : cfg.sites) {
    const auto& test = data.at(id).test;
    samples.insert(samples.end(), test.begin(), test.end());
  }
  write_config(cfg, opt);
  io::write_text(opt.out / "latents.csv", config_comment(cfg) + metrics::latents_csv(params, cfg.fl.unet, samples));
}

void run_command(const std::string& name, const CommandOptions& opt) {
  if (name == "gen-data") return cmd_gen_data(opt);
  if (name == "train") return cmd_train(opt);
  if (name == "compare") return cmd_compare(opt);
  if (name == "ablate-cm") return cmd_ablate_cm(opt);
  if (name == "export-latents") return cmd_export_latents(opt);
  throw Error(ErrorKind::kInvalidArgument, "unknown command " + name);
}

}  // namespace fedrecon::cli
