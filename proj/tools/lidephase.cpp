// lidephase: simulate, fit and export magnetic-gradient dephasing of lithium
// atom-interferometer fringes.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "lidephase/cli.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out = ".";
  std::optional<long long> seed;
  std::optional<std::string> mode;
  std::optional<int> order;
  std::optional<std::string> isotope;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "key=value run configuration file");
  sub->add_option("--out", f.out, "output directory (created if needed)");
  sub->add_option("--seed", f.seed, "random seed (default 42)");
  sub->add_option("--mode", f.mode, "Zeeman energy model")
      ->check(CLI::IsMember({"linear", "breit-rabi", "breit_rabi"}));
  sub->add_option("--order", f.order, "Bragg diffraction order p")->check(CLI::PositiveNumber);
  sub->add_option("--isotope", f.isotope, "isotope selection")
      ->check(CLI::IsMember({"li6", "li7", "mix"}));
}

lidephase::KeyValueConfig load(const Flags& f) {
  auto cfg = f.config.empty() ? lidephase::KeyValueConfig{}
                              : lidephase::KeyValueConfig::load(f.config);
  if (f.seed) cfg.set("run.seed", std::to_string(*f.seed));
  if (f.mode) cfg.set("run.mode", *f.mode);
  if (f.order) cfg.set("run.order", std::to_string(*f.order));
  if (f.isotope) cfg.set("run.isotope", *f.isotope);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zeeman dephasing simulator and fitter for lithium atom interferometry"};
  app.require_subcommand(1);
  Flags flags;
  auto* simulate = app.add_subcommand("simulate", "relative visibility and phase versus current");
  auto* fit = app.add_subcommand("fit", "fit C / coil distance, S_par and contamination");
  auto* fringes = app.add_subcommand("fringes", "fit raw fringe scans and form V_r series");
  auto* export_field =
      app.add_subcommand("export-field", "B, d|B|/dx and arm separation along the beam");
  for (auto* sub : {simulate, fit, fringes, export_field}) add_common(sub, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return lidephase::cli::kConfigError;
  }

  try {
    auto cfg = load(flags);
    const std::filesystem::path out(flags.out);
    if (simulate->parsed()) return lidephase::cli::cmd_simulate(cfg, out);
    if (fit->parsed()) return lidephase::cli::cmd_fit(cfg, out, std::cerr);
    if (fringes->parsed()) return lidephase::cli::cmd_fringes(cfg, out, std::cerr);
    return lidephase::cli::cmd_export_field(cfg, out);
  } catch (...) {
    return lidephase::cli::report_exception(std::cerr);
  }
}
