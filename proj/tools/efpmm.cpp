// efpmm <command> --config <path.json> [--seed N] [--out DIR]
//
// Exit codes: 0 success, 1 numerical failure, 2 configuration error.

#include "efpmm/experiments.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

namespace {

int fail(int code, const std::string& what) {
  std::cerr << "efpmm: " << what << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  namespace ex = efpmm::experiments;
  namespace fs = std::filesystem;

  CLI::App app{"Market making with spot and co-integrated futures: solver and experiments"};
  app.set_version_flag("--version", ex::version());
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  for (const auto& [name, _] : ex::commands()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "random seed (overrides the config)");
    sub->add_option("--out", out_dir, "output directory (default: out/<command>)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const bool seeded = app.get_subcommands().front()->count("--seed") > 0;
  try {
    std::ifstream in(config_path);
    if (!in) return fail(2, "cannot open config " + config_path);
    nlohmann::json config;
    try {
      config = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      return fail(2, "malformed config " + config_path + ": " + e.what());
    }
    const fs::path out = out_dir.empty() ? fs::path("out") / command : fs::path(out_dir);
    const auto manifest =
        ex::run(command, config, fs::path(config_path).parent_path(), out,
                seeded ? std::optional<std::uint64_t>(seed) : std::nullopt);
    std::cout << command << ": wrote " << manifest["outputs"].size() << " file(s) to " << out.string()
              << " in " << manifest["wall_time_seconds"].get<double>() << " s\n";
    std::cout << manifest["summary"].dump(2) << '\n';
    return 0;
  } catch (const efpmm::ConfigError& e) {
    return fail(2, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(2, e.what());
  } catch (const efpmm::NumericalError& e) {
    return fail(1, std::string("numerical failure: ") + e.what());
  } catch (const std::exception& e) {
    return fail(1, e.what());
  }
}
