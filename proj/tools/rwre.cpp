// rwre <experiment> --config <path> [--seed S] [--out DIR]
//
// Output directory precedence: --out, then RWRE_OUTPUT_DIR, then the config.
// Failures print a JSON object {"error", "message"} on stderr and exit
// with 2 (config), 3 (numerical) or 1 (anything else).

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rwre/experiments.hpp"

namespace {

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random walks in random environments: experiments"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  for (const auto& name : rwre::experiment_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "output directory");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what(), 2);
  }
  const std::string experiment = app.get_subcommands().front()->get_name();

  try {
    nlohmann::json doc;
    {
      std::ifstream in(config_path);
      try {
        doc = nlohmann::json::parse(in, nullptr, true, true);
      } catch (const nlohmann::json::parse_error& e) {
        throw rwre::ConfigError(std::string("config is not valid JSON: ") + e.what());
      }
    }
    if (app.get_subcommands().front()->count("--seed")) doc["seed"] = seed;
    rwre::RunConfig cfg = rwre::config_from_json(doc, experiment);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    else if (const char* env = std::getenv("RWRE_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
    const auto manifest = rwre::run(cfg);
    std::cout << manifest.dump(2) << '\n';
    return 0;
  } catch (const rwre::ConfigError& e) {
    return fail(e.kind(), e.what(), 2);
  } catch (const rwre::NumericalFailure& e) {
    return fail(e.kind(), e.what(), 3);
  } catch (const rwre::Error& e) {
    return fail(e.kind(), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}
