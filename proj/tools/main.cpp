#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "config.hpp"
#include "fedrecon/error.hpp"
#include "json.hpp"

namespace {

int exit_code(fedrecon::ErrorKind kind) {
  switch (kind) {
    case fedrecon::ErrorKind::kInvalidArgument: return 2;
    case fedrecon::ErrorKind::kIo:
    case fedrecon::ErrorKind::kFormat: return 3;
    case fedrecon::ErrorKind::kPrivacyViolation: return 4;
    default: return 1;
  }
}

void report(const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  using namespace fedrecon::cli;
  CLI::App app{"Federated MR reconstruction simulator"};
  app.require_subcommand(1, 1);

  std::string config;
  std::string out = "out";
  std::string seeds;
  std::optional<std::size_t> threads;
  bool gen_data = false;
  for (const char* name : kCommands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "experiment config file")->required();
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seeds", seeds, "comma-separated seed list, overrides experiment.seeds");
    sub->add_option("--threads", threads, "worker threads (default: FEDRECON_THREADS or 1)");
    if (std::string(name) != "gen-data") sub->add_flag("--gen-data", gen_data, "generate missing datasets first");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    CommandOptions opt;
    opt.config = config;
    opt.out = out;
    if (!seeds.empty()) opt.seeds = parse_seed_list(seeds);
    opt.threads = threads_from(threads);
    opt.gen_data = gen_data;
    run_command(app.get_subcommands().front()->get_name(), opt);
  } catch (const fedrecon::Error& e) {
    report(fedrecon::to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report("Internal", e.what());
    return 1;
  }
  return 0;
}
