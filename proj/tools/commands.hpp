#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fedrecon::cli {

struct CommandOptions {
  std::filesystem::path config;
  std::filesystem::path out = "out";
  std::optional<std::vector<std::uint64_t>> seeds;
  std::size_t threads = 1;
  // Generate missing datasets instead of failing.
  bool gen_data = false;
};

inline constexpr const char* kCommands[] = {"gen-data", "train", "compare", "ablate-cm", "export-latents"};

// --threads, else FEDRECON_THREADS, else 1.
std::size_t threads_from(std::optional<std::size_t> flag);

void cmd_gen_data(const CommandOptions& opt);
void cmd_train(const CommandOptions& opt);
void cmd_compare(const CommandOptions& opt);
void cmd_ablate_cm(const CommandOptions& opt);
void cmd_export_latents(const CommandOptions& opt);
void run_command(const std::string& name, const CommandOptions& opt);

}  // namespace fedrecon::cli
