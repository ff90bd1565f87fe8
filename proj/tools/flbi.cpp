// Command-line front end: run scenarios, the firmware update demo and the
// capacity calculation.

#include "flbi/scenario.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>

namespace {

std::string default_out_dir()
{
  const char *env = std::getenv("FLBI_OUT_DIR");
  return env && *env ? env : "out";
}

int run_scenario(const std::string &path, std::optional<std::uint64_t> seed, const std::string &out, bool strict)
{
  auto config = flbi::scenario::load_scenario(path, strict);
  if (seed) config.seed = *seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = flbi::scenario::run(config);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::filesystem::path dir = std::filesystem::path(out) / config.name;
  report.write(dir);
  std::cout << report.summary;
  // Wall-clock numbers vary between hosts, so they stay out of the report files.
  std::cout << "wall clock: " << wall << " s, " << (wall > 0 ? report.committed_measurements / wall : 0.0)
            << " committed measurements per wall second\n";
  std::cout << "report written to " << dir.string() << "\n";
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Two-layer permissioned blockchain simulator for smart-meter deployments"};
  app.require_subcommand(1);

  auto *run = app.add_subcommand("run", "run a scenario file and write its report");
  std::string scenario_path;
  std::optional<std::uint64_t> seed;
  std::string out = default_out_dir();
  bool strict = false;
  run->add_option("--scenario", scenario_path, "scenario JSON file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--out", out, "report directory (default $FLBI_OUT_DIR or ./out)");
  run->add_flag("--strict", strict, "reject unknown keys");

  auto *demo = app.add_subcommand("demo-firmware", "walk one meter through a firmware update");
  flbi::scenario::DemoOptions demo_options;
  std::size_t corrupt = 0;
  demo->add_option("--membership-updates", demo_options.membership_updates, "consortium key updates before release");
  demo->add_option("--version", demo_options.version, "version of the new firmware");
  demo->add_option("--seed", demo_options.seed, "seed");
  demo->add_option("--corrupt-link", corrupt, "corrupt link k of the signature chain in transit (1-based)");

  auto *cap = app.add_subcommand("capacity", "meters one bottom-layer chain can serve");
  std::uint64_t throughput = 0, interval = 0, chains = 1;
  cap->add_option("--throughput", throughput, "committed transactions per second")->required();
  cap->add_option("--interval", interval, "reading interval in seconds")->required();
  cap->add_option("--chains", chains, "number of bottom-layer chains");

  CLI11_PARSE(app, argc, argv);

  try
  {
    if (*run) return run_scenario(scenario_path, seed, out, strict);
    if (*demo)
    {
      if (corrupt > 0) demo_options.corrupt_link = corrupt;
      const auto result = flbi::scenario::demo_firmware_update(demo_options);
      for (const auto &line : result.transcript) std::cout << line << "\n";
      std::cout << "chain links: " << result.chain_links << "\n"
                << "meter version: " << result.meter_version << "\n"
                << (result.booted_new ? "booted new firmware" : "kept current firmware") << "\n";
      return 0;
    }
    if (*cap)
    {
      const auto r = flbi::scenario::capacity_report(throughput, interval, chains);
      std::cout << "meters per chain: " << r.meters_per_chain << "\n"
                << "chains: " << r.chains << "\n"
                << "total meters: " << r.total_meters << "\n";
      return 0;
    }
  }
  catch (const std::exception &e)
  {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
