#ifndef LIDEPHASE_CLI_HPP
#define LIDEPHASE_CLI_HPP

// Subcommand drivers behind the lidephase executable. Each driver reads its
// settings from a KeyValueConfig, writes its outputs atomically into an
// output directory and echoes every resolved setting into
// <subcommand>.run.cfg, which replays the run when passed back as --config.

#include <algorithm>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "lidephase/atomic_levels.hpp"
#include "lidephase/config.hpp"
#include "lidephase/csv.hpp"
#include "lidephase/errors.hpp"
#include "lidephase/field_geometry.hpp"
#include "lidephase/fringe_analysis.hpp"
#include "lidephase/param_fit.hpp"
#include "lidephase/visibility_model.hpp"

namespace lidephase::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kMissingFile = 2,
  kNoConvergence = 3,
  kDataError = 4,
};

/// Maps the exception in flight to an exit code and prints its message.
inline int report_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "error: config: " << e.what() << "\n";
    return kConfigError;
  } catch (const MissingFileError& e) {
    err << "error: " << e.what() << "\n";
    return kMissingFile;
  } catch (const FitError& e) {
    err << "error: fit did not converge: " << e.what() << "\n";
    return kNoConvergence;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const DataQualityError& e) {
    err << "error: data quality: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericalError& e) {
    err << "error: numerical: " << e.what() << "\n";
    return kDataError;
  } catch (const DomainError& e) {
    err << "error: invalid input: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

/// Keys some subcommand understands. Unused ones are tolerated so that one
/// file can drive several subcommands; anything else is rejected.
inline bool is_known_key(const std::string& key) {
  static const std::set<std::string> exact{
      "run.isotope", "run.mode", "run.order", "run.seed", "run.population",
      "run.population_file", "run.primary", "run.contamination",
      "run.contaminant_population", "run.currents", "run.noise_sigma",
      "beam.u_m_per_s", "beam.S_par", "beam.monochromatic", "beam.v3_prefactor",
      "beam.transmission", "beam.transmission_center_m_per_s", "beam.transmission_S",
      "coil.radius_m", "coil.turns", "coil.center_offset_m", "coil.axial_position_m",
      "geometry.grating_spacing_m", "geometry.laser_wavelength_m", "geometry.ambient_field_T",
      "coupling.C", "fit.data", "fit.free", "fit.parameterization", "fit.starts",
      "fit.parallel", "fringes.manifest", "fringes.dwell_s", "fringes.background_cps",
      "fringes.reject_outliers", "fringes.outlier_k", "fringes.outlier_max_fraction",
      "fringes.fit_background", "fringes.background_prior_sigma_cps",
      "fringes.allow_extrapolation", "export.z_points", "export.current_A",
      "export.velocity_m_per_s", "export.field_profile"};
  if (exact.count(key)) return true;
  for (const char* iso : {"isotope.li6.", "isotope.li7."}) {
    if (key.rfind(iso, 0) == 0) {
      const auto field = key.substr(std::string(iso).size());
      static const std::set<std::string> fields{"file", "mass_kg", "nuclear_spin",
                                                "hfs_splitting_J", "g_J", "g_I", "abundance"};
      return fields.count(field) > 0;
    }
  }
  for (const char* p : {"C", "coil_distance", "S_par", "f"}) {
    for (const char* b : {".initial", ".lower", ".upper"}) {
      if (key == std::string("fit.") + p + b) return true;
    }
  }
  return false;
}

/// Everything needed to evaluate visibility curves for one run.
struct ModelSetup {
  VisibilityModelConfig model;
  GeometryPhaseModel geometry;
  double geometry_coupling = 0.0;
  std::string isotope_choice;
};

namespace detail {

template <typename Fn>
auto as_config_error(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const DomainError& e) {
    throw ConfigError(key, e.what());
  }
}

inline IsotopeSpec resolve_isotope(KeyValueConfig& cfg, const std::string& name) {
  const std::string prefix = "isotope." + name + ".";
  IsotopeSpec base = name == "li6" ? presets::li6() : presets::li7();
  if (const auto file = cfg.optional_path(prefix + "file")) base = load_isotope(*file);
  return isotope_from_config(cfg, prefix, base);
}

inline SublevelPopulation resolve_population(KeyValueConfig& cfg, const std::string& key,
                                             const IsotopeSpec& iso, bool allow_custom) {
  const std::string choice = cfg.text(key, "unpumped");
  if (choice == "unpumped") return unpumped_population(iso);
  if (choice == "pumped_F1") {
    const HalfInteger one = HalfInteger::from_twice(2);
    if (!is_ground_level(iso, one)) {
      throw ConfigError(key, iso.name + " has no F=1 ground level to pump into");
    }
    return pumped_population(iso, one);
  }
  if (choice == "custom" && allow_custom) {
    const auto path = cfg.optional_path("run.population_file");
    if (!path) throw ConfigError("run.population_file", "required when run.population=custom");
    return load_population(*path, iso);
  }
  throw ConfigError(key, "expected unpumped, pumped_F1" + std::string(allow_custom ? " or custom" : "") +
                             ", got '" + choice + "'");
}

inline std::string normalize_mode(std::string mode) {
  std::replace(mode.begin(), mode.end(), '-', '_');
  return mode;
}

}  // namespace detail

/// Resolves isotopes, populations, beam, coil, geometry and C.
inline ModelSetup resolve_model(KeyValueConfig& cfg) {
  ModelSetup s;
  auto& m = s.model;

  s.isotope_choice = cfg.text("run.isotope", "li7");
  const std::string mode_text = detail::normalize_mode(cfg.text("run.mode", "linear"));
  m.mode = detail::as_config_error("run.mode", [&] { return parse_energy_model(mode_text); });
  m.order = cfg.integer("run.order", 1);
  if (m.order < 1) throw ConfigError("run.order", "diffraction order must be a positive integer");

  if (s.isotope_choice == "li6" || s.isotope_choice == "li7") {
    m.primary = detail::resolve_isotope(cfg, s.isotope_choice);
    m.primary_population = detail::resolve_population(cfg, "run.population", m.primary, true);
  } else if (s.isotope_choice == "mix") {
    const std::string primary = cfg.text("run.primary", "li6");
    if (primary != "li6" && primary != "li7") {
      throw ConfigError("run.primary", "expected li6 or li7, got '" + primary + "'");
    }
    const std::string other = primary == "li6" ? "li7" : "li6";
    m.primary = detail::resolve_isotope(cfg, primary);
    m.primary_population = detail::resolve_population(cfg, "run.population", m.primary, true);
    m.contaminant = detail::resolve_isotope(cfg, other);
    m.contaminant_population =
        detail::resolve_population(cfg, "run.contaminant_population", *m.contaminant, false);
    m.contamination = cfg.number("run.contamination", m.contaminant->abundance);
    if (!(m.contamination >= 0.0 && m.contamination <= 1.0)) {
      throw ConfigError("run.contamination", "must lie in [0, 1]");
    }
  } else {
    throw ConfigError("run.isotope", "expected li6, li7 or mix, got '" + s.isotope_choice + "'");
  }

  auto& beam = m.beam;
  beam.u_m_per_s = cfg.number("beam.u_m_per_s", 1065.0);
  if (!(beam.u_m_per_s > 0.0)) throw ConfigError("beam.u_m_per_s", "must be positive");
  beam.speed_ratio = cfg.number("beam.S_par", 9.0);
  if (!(beam.speed_ratio > 1.0)) throw ConfigError("beam.S_par", "must exceed 1");
  beam.monochromatic = cfg.flag("beam.monochromatic", false);
  beam.v3_prefactor = cfg.flag("beam.v3_prefactor", false);
  if (cfg.flag("beam.transmission", false)) {
    Transmission t;
    t.center_m_per_s = cfg.number("beam.transmission_center_m_per_s", beam.u_m_per_s);
    t.speed_ratio = cfg.number("beam.transmission_S", 20.0);
    if (!(t.center_m_per_s > 0.0)) {
      throw ConfigError("beam.transmission_center_m_per_s", "must be positive");
    }
    if (!(t.speed_ratio > 0.0)) throw ConfigError("beam.transmission_S", "must be positive");
    beam.transmission = t;
  }

  auto& coil = s.geometry.coil;
  coil.radius_m = cfg.number("coil.radius_m", coil.radius_m);
  coil.turns = cfg.integer("coil.turns", coil.turns);
  coil.center_offset_x_m = cfg.number("coil.center_offset_m", coil.center_offset_x_m);
  coil.axial_position_m = cfg.number("coil.axial_position_m", coil.axial_position_m);
  detail::as_config_error("coil", [&] {
    validate(coil);
    return 0;
  });

  const double spacing = cfg.number("geometry.grating_spacing_m", 0.605);
  const double wavelength = cfg.number("geometry.laser_wavelength_m", 671e-9);
  if (!(spacing > 0.0)) throw ConfigError("geometry.grating_spacing_m", "must be positive");
  if (!(wavelength > 0.0)) throw ConfigError("geometry.laser_wavelength_m", "must be positive");
  auto& geom = s.geometry.geometry;
  geom = symmetric_geometry(spacing, wavelength, m.order);
  const auto ambient = cfg.number_list("geometry.ambient_field_T", "0,0,0");
  if (ambient.size() != 3) {
    throw ConfigError("geometry.ambient_field_T", "expected three components Bx,By,Bz");
  }
  geom.ambient_field_T = {ambient[0], ambient[1], ambient[2]};

  s.geometry_coupling = reduce_to_coupling(coil, geom).value;
  cfg.derived("C_geometry", format_double(s.geometry_coupling));
  m.coupling.value = cfg.number("coupling.C", s.geometry_coupling);
  if (!(m.coupling.value > 0.0)) throw ConfigError("coupling.C", "must be positive");
  m.geometry = s.geometry;
  return s;
}

inline void write_sidecar(const KeyValueConfig& cfg, const std::filesystem::path& out_dir,
                          const std::string& subcommand) {
  std::string text = "# lidephase " + subcommand + " run; replay with --config\n";
  text += cfg.resolved_text();
  write_file_atomic(out_dir / (subcommand + ".run.cfg"), text);
}

inline void prepare_output(const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw MissingFileError(out_dir.string(), "cannot create output directory");
  }
}

inline std::vector<double> resolve_currents(KeyValueConfig& cfg) {
  const auto currents = cfg.number_list("run.currents", "0:10:0.5");
  if (currents.empty()) throw ConfigError("run.currents", "no currents given");
  for (std::size_t i = 0; i < currents.size(); ++i) {
    if (!(currents[i] >= 0.0) || !std::isfinite(currents[i])) {
      throw ConfigError("run.currents", "currents must be finite and non-negative");
    }
    if (i > 0 && !(currents[i] > currents[i - 1])) {
      throw ConfigError("run.currents", "currents must be strictly ascending");
    }
  }
  return currents;
}

inline std::string field_profile_csv(const ModelSetup& setup, double current_A, double velocity,
                                     int points) {
  const auto coil = with_current(setup.geometry.coil, current_A);
  const auto rows = field_profile(coil, setup.geometry.geometry, setup.model.primary.mass_kg,
                                  velocity, points);
  CsvWriter csv({"z_m", "B_T", "dBdx_T_per_m", "dx_m"});
  for (const auto& r : rows) {
    csv.row({format_double(r.z_m), format_double(r.field_T), format_double(r.gradient_T_per_m),
             format_double(r.separation_m)});
  }
  return csv.str();
}

/// visibility.csv: current_A, V_r, phase_rad[, sigma_V_r].
inline std::string visibility_csv(const std::vector<VisibilityPoint>& points) {
  const bool with_sigma = std::any_of(points.begin(), points.end(),
                                      [](const auto& p) { return p.sigma_visibility.has_value(); });
  std::vector<std::string> header{"current_A", "V_r", "phase_rad"};
  if (with_sigma) header.push_back("sigma_V_r");
  CsvWriter csv(header);
  for (const auto& p : points) {
    std::vector<std::string> row{format_double(p.current_A), format_double(p.visibility),
                                 format_double(p.phase_rad)};
    if (with_sigma) row.push_back(format_double(p.sigma_visibility.value_or(0.0)));
    csv.row(row);
  }
  return csv.str();
}

/// Reads current_A and V_r (required) plus optional phase_rad and sigma_V_r.
inline std::vector<VisibilityPoint> read_visibility_csv(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto cI = table.column("current_A");
  const auto cV = table.column("V_r");
  const auto cP = table.find_column("phase_rad");
  const auto cS = table.find_column("sigma_V_r");
  std::vector<VisibilityPoint> out;
  for (std::size_t r = 0; r < table.size(); ++r) {
    VisibilityPoint p;
    p.current_A = table.number(r, cI);
    p.visibility = table.number(r, cV);
    if (cP) p.phase_rad = table.number(r, *cP);
    if (cS) {
      const double s = table.number(r, *cS);
      if (!(s > 0.0)) throw ParseError(path.string(), table.line(r), "sigma_V_r must be positive");
      p.sigma_visibility = s;
    }
    if (!(p.current_A >= 0.0) || !std::isfinite(p.visibility)) {
      throw ParseError(path.string(), table.line(r),
                       "current must be non-negative and V_r finite");
    }
    out.push_back(p);
  }
  if (out.empty()) throw ParseError(path.string(), 0, "no data rows");
  return out;
}

/// Scan CSV with columns x3_m, counts.
inline std::vector<FringeSample> read_scan_csv(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto cx = table.column("x3_m");
  const auto cc = table.column("counts");
  std::vector<FringeSample> out;
  for (std::size_t r = 0; r < table.size(); ++r) {
    const double x = table.number(r, cx);
    const double c = table.number(r, cc);
    if (!(c >= 0.0) || !std::isfinite(c) || !std::isfinite(x)) {
      throw ParseError(path.string(), table.line(r), "counts must be finite and non-negative");
    }
    out.push_back({x, c});
  }
  return out;
}

inline std::string scan_csv(const FringeScan& scan) {
  CsvWriter csv({"x3_m", "counts"});
  for (const auto& s : scan.samples) csv.row({format_double(s.x3_m), format_double(s.counts)});
  return csv.str();
}

// ---------------------------------------------------------------- simulate

inline int cmd_simulate(KeyValueConfig& cfg, const std::filesystem::path& out_dir) {
  const ModelSetup setup = resolve_model(cfg);
  const auto currents = resolve_currents(cfg);
  const double noise = cfg.number("run.noise_sigma", 0.0);
  if (!(noise >= 0.0)) throw ConfigError("run.noise_sigma", "must be non-negative");
  const auto seed = static_cast<std::uint64_t>(cfg.integer("run.seed", 42));
  const bool with_profile = cfg.flag("export.field_profile", false);
  int z_points = 0;
  double profile_current = 0.0;
  double profile_velocity = 0.0;
  if (with_profile) {
    z_points = cfg.integer("export.z_points", 401);
    profile_current = cfg.number("export.current_A", 9.0);
    profile_velocity = cfg.number("export.velocity_m_per_s", setup.model.beam.u_m_per_s);
  }
  cfg.reject_unknown(is_known_key);
  prepare_output(out_dir);

  auto points = evaluate_model(setup.model, currents, {}, setup.geometry_coupling);
  if (noise > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, noise);
    for (auto& p : points) {
      p.visibility += gauss(rng);
      p.sigma_visibility = noise;
    }
  }
  write_file_atomic(out_dir / "visibility.csv", visibility_csv(points));
  if (with_profile) {
    write_file_atomic(out_dir / "field_profile.csv",
                      field_profile_csv(setup, profile_current, profile_velocity, z_points));
  }
  write_sidecar(cfg, out_dir, "simulate");
  return kOk;
}

// --------------------------------------------------------------------- fit

inline int cmd_fit(KeyValueConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log) {
  ModelSetup setup = resolve_model(cfg);
  auto& model = setup.model;
  const auto data_path = cfg.required_path("fit.data");

  const std::string param_text = cfg.text("fit.parameterization", "coupling");
  if (param_text == "coupling") {
    model.parameterization = CouplingParameterization::coupling;
  } else if (param_text == "coil_distance") {
    model.parameterization = CouplingParameterization::coil_distance;
  } else {
    throw ConfigError("fit.parameterization", "expected coupling or coil_distance");
  }
  const std::string default_free =
      std::string(param_text == "coupling" ? "C" : "coil_distance") + ",S_par";
  const std::string free_text = cfg.text("fit.free", default_free);

  FitProblem problem;
  problem.model = model;
  for (const auto& name : split(free_text, ',')) {
    const FitParameter p =
        detail::as_config_error("fit.free", [&] { return parse_fit_parameter(name); });
    double initial = 0.0, lower = 0.0, upper = 0.0;
    switch (p) {
      case FitParameter::coupling:
        initial = model.coupling.value;
        lower = initial / 10.0;
        upper = initial * 10.0;
        break;
      case FitParameter::coil_distance:
        initial = setup.geometry.coil.center_offset_x_m;
        lower = 0.002;
        upper = 0.05;
        break;
      case FitParameter::speed_ratio:
        initial = model.beam.speed_ratio;
        lower = 2.0;
        upper = 100.0;
        break;
      case FitParameter::contamination:
        initial = model.contaminant ? model.contamination : 0.0;
        lower = 0.0;
        upper = 1.0;
        break;
    }
    const std::string base = std::string("fit.") + (p == FitParameter::coupling        ? "C"
                                                     : p == FitParameter::coil_distance ? "coil_distance"
                                                     : p == FitParameter::speed_ratio   ? "S_par"
                                                                                        : "f");
    lower = cfg.number(base + ".lower", lower);
    upper = cfg.number(base + ".upper", upper);
    initial = cfg.number(base + ".initial", std::clamp(initial, lower, upper));
    problem.free.push_back({p, initial, lower, upper});
  }
  problem.start_speed_ratios = cfg.number_list("fit.starts", "5,8.5,12,16,25");
  problem.parallel_starts = cfg.flag("fit.parallel", true);
  cfg.reject_unknown(is_known_key);

  problem.data = read_visibility_csv(data_path);
  detail::as_config_error("fit.free", [&] {
    lidephase::detail::validate_problem(problem);
    return 0;
  });
  prepare_output(out_dir);
  const FitResult result = fit_visibility(problem);

  std::string report = "# lidephase fit report\n";
  auto line = [&](const std::string& k, const std::string& v) { report += k + "=" + v + "\n"; };
  line("data", data_path.string());
  line("n_data", std::to_string(problem.data.size()));
  line("n_free", std::to_string(problem.free.size()));
  line("chi2", format_double(result.chi2));
  line("chi2_reduced", format_double(result.chi2_reduced));
  line("weights", result.uniform_weights ? "uniform" : "sigma_V_r");
  line("iterations", std::to_string(result.iterations));
  line("evaluations", std::to_string(result.evaluations));
  line("last_step_norm", format_double(result.last_step_norm));
  line("start_index", std::to_string(result.start_index));
  for (const auto& e : result.estimates) {
    const std::string name = to_string(e.parameter);
    line("estimate." + name, format_double(e.value));
    line("stderr." + name, format_double(e.standard_error));
    line("at_bound." + name, e.at_bound ? "true" : "false");
    if (e.at_bound) log << "warning: " << name << " is pinned at a bound\n";
  }
  for (const auto& st : result.starts) {
    const std::string k = "start." + std::to_string(st.index) + ".";
    line(k + "S_par", format_double(st.initial_speed_ratio));
    line(k + "converged", st.converged ? "true" : "false");
    line(k + "chi2", format_double(st.chi2));
    line(k + "iterations", std::to_string(st.iterations));
  }
  write_file_atomic(out_dir / "fit_report.txt", report);

  CsvWriter res({"current_A", "V_r_data", "V_r_model", "residual", "weighted_residual"});
  for (std::size_t i = 0; i < problem.data.size(); ++i) {
    res.row({format_double(problem.data[i].current_A), format_double(problem.data[i].visibility),
             format_double(result.model_values[i]), format_double(result.residuals[i]),
             format_double(result.weighted_residuals[static_cast<Eigen::Index>(i)])});
  }
  write_file_atomic(out_dir / "fit_residuals.csv", res.str());
  write_sidecar(cfg, out_dir, "fit");
  return kOk;
}

// ----------------------------------------------------------------- fringes

struct ManifestEntry {
  std::filesystem::path file;
  std::string label;
  double current_A = 0.0;
  double timestamp_s = 0.0;
  bool is_reference = false;
  std::size_t line = 0;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto cf = table.column("file");
  const auto ci = table.column("current_A");
  const auto ct = table.column("timestamp_s");
  const auto cr = table.column("is_reference");
  std::vector<ManifestEntry> out;
  for (std::size_t r = 0; r < table.size(); ++r) {
    ManifestEntry e;
    e.label = table.text(r, cf);
    if (e.label.empty()) throw ParseError(path.string(), table.line(r), "empty file name");
    e.file = std::filesystem::path(e.label);
    if (e.file.is_relative()) e.file = path.parent_path() / e.file;
    e.current_A = table.number(r, ci);
    e.timestamp_s = table.number(r, ct);
    const auto& flag = table.text(r, cr);
    if (flag == "1" || flag == "true") {
      e.is_reference = true;
    } else if (flag != "0" && flag != "false") {
      throw ParseError(path.string(), table.line(r), "is_reference must be 0/1 or true/false");
    }
    if (e.is_reference && e.current_A != 0.0) {
      throw ParseError(path.string(), table.line(r), "reference scans must have current_A = 0");
    }
    e.line = table.line(r);
    out.push_back(e);
  }
  if (out.empty()) throw ParseError(path.string(), 0, "manifest lists no scans");
  return out;
}

inline int cmd_fringes(KeyValueConfig& cfg, const std::filesystem::path& out_dir,
                       std::ostream& log) {
  const auto manifest_path = cfg.required_path("fringes.manifest");
  const int order = cfg.integer("run.order", 1);
  if (order < 1) throw ConfigError("run.order", "diffraction order must be a positive integer");
  const double wavelength = cfg.number("geometry.laser_wavelength_m", 671e-9);
  if (!(wavelength > 0.0)) throw ConfigError("geometry.laser_wavelength_m", "must be positive");
  const double dwell = cfg.number("fringes.dwell_s", 0.1);
  if (!(dwell > 0.0)) throw ConfigError("fringes.dwell_s", "must be positive");
  const double background = cfg.number("fringes.background_cps", 0.0);
  if (!(background >= 0.0)) throw ConfigError("fringes.background_cps", "must be non-negative");
  const bool reject = cfg.flag("fringes.reject_outliers", true);
  OutlierOptions outlier_opts;
  if (reject) {
    outlier_opts.k_sigma = cfg.number("fringes.outlier_k", 5.0);
    outlier_opts.max_fraction = cfg.number("fringes.outlier_max_fraction", 0.1);
    if (!(outlier_opts.k_sigma > 0.0)) throw ConfigError("fringes.outlier_k", "must be positive");
  }
  FringeFitOptions fit_opts;
  fit_opts.fit_background = cfg.flag("fringes.fit_background", false);
  if (fit_opts.fit_background) {
    fit_opts.background_prior_sigma_cps = cfg.number("fringes.background_prior_sigma_cps", 1.0);
    if (!(fit_opts.background_prior_sigma_cps > 0.0)) {
      throw ConfigError("fringes.background_prior_sigma_cps", "must be positive");
    }
  }
  RelativeSeriesOptions series_opts;
  series_opts.allow_extrapolation = cfg.flag("fringes.allow_extrapolation", false);
  cfg.reject_unknown(is_known_key);

  auto entries = read_manifest(manifest_path);
  std::vector<std::string> unmatched;
  for (const auto& e : entries) {
    if (!std::filesystem::is_regular_file(e.file)) unmatched.push_back(e.label);
  }
  if (!unmatched.empty()) {
    std::string list;
    for (const auto& u : unmatched) list += (list.empty() ? "" : ", ") + u;
    throw MissingFileError(manifest_path.string(), "manifest entries without scan files (" + list + ")");
  }
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.timestamp_s < b.timestamp_s;
  });
  prepare_output(out_dir);

  const double k_L = 2.0 * std::numbers::pi / wavelength;
  CsvWriter fits_csv({"file", "current_A", "timestamp_s", "is_reference", "mean_level_cps",
                      "sigma_mean_level_cps", "visibility", "sigma_visibility", "phase_rad",
                      "sigma_phase_rad", "background_cps", "chi2_reduced", "degenerate",
                      "samples_used", "samples_removed"});
  CsvWriter outliers_csv({"file", "sample_index", "x3_m", "counts"});
  std::vector<TimedFit> scans, refs;
  for (const auto& e : entries) {
    FringeScan scan;
    scan.samples = read_scan_csv(e.file);
    scan.dwell_s = dwell;
    scan.background_cps = background;
    scan.current_A = e.current_A;
    scan.order = order;
    scan.laser_wavevector = k_L;
    scan.timestamp_s = e.timestamp_s;
    std::vector<std::size_t> removed;
    if (reject) {
      if (scan.samples.size() >= 12) {
        auto cleaned = reject_outliers(scan, outlier_opts);
        removed = cleaned.removed;
        scan = std::move(cleaned.scan);
      } else {
        log << "note: " << e.label << " has fewer than 12 samples; no outlier rejection\n";
      }
    }
    const auto raw_samples = read_scan_csv(e.file);
    for (std::size_t idx : removed) {
      outliers_csv.row({e.label, std::to_string(idx), format_double(raw_samples[idx].x3_m),
                        format_double(raw_samples[idx].counts)});
    }
    const FringeFit fit = fit_fringe(scan, fit_opts);
    if (fit.degenerate) log << "warning: " << e.label << ": visibility at a bound\n";
    fits_csv.row({e.label, format_double(e.current_A), format_double(e.timestamp_s),
                  e.is_reference ? "1" : "0", format_double(fit.mean_level_cps),
                  format_double(fit.sigma_mean_level), format_double(fit.visibility),
                  format_double(fit.sigma_visibility), format_double(fit.phase_rad),
                  format_double(fit.sigma_phase), format_double(fit.background_cps),
                  format_double(fit.chi2_reduced), fit.degenerate ? "1" : "0",
                  std::to_string(fit.samples_used), std::to_string(removed.size())});
    (e.is_reference ? refs : scans).push_back({fit, e.current_A, e.timestamp_s});
  }

  std::string series_text;
  if (!scans.empty()) {
    const auto series = relative_series(scans, refs, series_opts);
    CsvWriter csv({"current_A", "V_r", "phase_rad", "sigma_V_r", "sigma_phase_rad", "timestamp_s"});
    for (std::size_t i = 0; i < series.size(); ++i) {
      const auto& p = series[i];
      csv.row({format_double(p.current_A), format_double(p.visibility), format_double(p.phase_rad),
               format_double(p.sigma_visibility.value_or(0.0)),
               format_double(p.sigma_phase.value_or(0.0)), format_double(scans[i].timestamp_s)});
    }
    series_text = csv.str();
  } else {
    series_text = CsvWriter({"current_A", "V_r", "phase_rad", "sigma_V_r", "sigma_phase_rad",
                             "timestamp_s"})
                      .str();
    log << "note: manifest lists only reference scans; relative series is empty\n";
  }
  write_file_atomic(out_dir / "fringe_fits.csv", fits_csv.str());
  write_file_atomic(out_dir / "outliers.csv", outliers_csv.str());
  write_file_atomic(out_dir / "relative_series.csv", series_text);
  write_sidecar(cfg, out_dir, "fringes");
  return kOk;
}

// ------------------------------------------------------------ export-field

inline int cmd_export_field(KeyValueConfig& cfg, const std::filesystem::path& out_dir) {
  const ModelSetup setup = resolve_model(cfg);
  const int z_points = cfg.integer("export.z_points", 401);
  if (z_points < 2) throw ConfigError("export.z_points", "need at least two points");
  const double current = cfg.number("export.current_A", 9.0);
  const double velocity = cfg.number("export.velocity_m_per_s", setup.model.beam.u_m_per_s);
  if (!(velocity > 0.0)) throw ConfigError("export.velocity_m_per_s", "must be positive");
  cfg.reject_unknown(is_known_key);
  prepare_output(out_dir);
  write_file_atomic(out_dir / "field_profile.csv",
                    field_profile_csv(setup, current, velocity, z_points));
  write_sidecar(cfg, out_dir, "export-field");
  return kOk;
}

}  // namespace lidephase::cli

#endif  // LIDEPHASE_CLI_HPP
