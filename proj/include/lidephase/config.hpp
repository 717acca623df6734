#ifndef LIDEPHASE_CONFIG_HPP
#define LIDEPHASE_CONFIG_HPP

// Flat key=value configuration with section prefixes (coil.radius_m=0.015).
// Every getter records the value it resolved, defaults included, so a run can
// be replayed from the recorded set alone.

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lidephase/atomic_levels.hpp"
#include "lidephase/csv.hpp"
#include "lidephase/errors.hpp"
#include "lidephase/visibility_model.hpp"

namespace lidephase {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  /// Lines are "key = value"; blank lines and lines starting with '#' are
  /// skipped. Relative paths are later resolved against base_dir.
  static KeyValueConfig parse(const std::string& text, const std::string& origin,
                              std::filesystem::path base_dir = {}) {
    KeyValueConfig cfg;
    cfg.origin_ = origin;
    cfg.base_dir_ = std::move(base_dir);
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      const auto line = trim(raw);
      if (line.empty() || line.front() == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError(origin, line_no, "expected key=value");
      const std::string key(trim(line.substr(0, eq)));
      const std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw ParseError(origin, line_no, "empty key");
      if (cfg.entries_.count(key)) throw ParseError(origin, line_no, "duplicate key '" + key + "'");
      cfg.entries_[key] = {value, line_no, false};
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    const auto abs = std::filesystem::absolute(path).lexically_normal();
    return parse(read_text_file(path), path.string(), abs.parent_path());
  }

  /// Command-line overrides win over file entries.
  void set(const std::string& key, const std::string& value) {
    auto& e = entries_[key];
    e.value = value;
    e.line = 0;
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::optional<std::string> raw(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    it->second.used = true;
    return it->second.value;
  }

  std::string text(const std::string& key, const std::string& fallback) {
    return record(key, raw(key).value_or(fallback));
  }

  std::string required_text(const std::string& key) {
    auto v = raw(key);
    if (!v || v->empty()) throw ConfigError(key, "required key is missing");
    return record(key, *v);
  }

  double number(const std::string& key, double fallback) {
    const auto v = optional_number(key);
    return v ? *v : (record(key, format_double(fallback)), fallback);
  }

  std::optional<double> optional_number(const std::string& key) {
    const auto v = raw(key);
    if (!v) return std::nullopt;
    const auto d = parse_double(*v);
    if (!d) throw ConfigError(key, "not a number: '" + *v + "'" + where(key));
    record(key, format_double(*d));
    return d;
  }

  int integer(const std::string& key, int fallback) {
    const auto v = raw(key);
    if (!v) {
      record(key, std::to_string(fallback));
      return fallback;
    }
    const auto i = parse_integer(*v);
    if (!i || *i < std::numeric_limits<int>::min() || *i > std::numeric_limits<int>::max()) {
      throw ConfigError(key, "not an integer: '" + *v + "'" + where(key));
    }
    record(key, std::to_string(*i));
    return static_cast<int>(*i);
  }

  bool flag(const std::string& key, bool fallback) {
    const auto v = raw(key);
    bool b = fallback;
    if (v) {
      if (*v == "true" || *v == "1" || *v == "yes") {
        b = true;
      } else if (*v == "false" || *v == "0" || *v == "no") {
        b = false;
      } else {
        throw ConfigError(key, "expected true or false, got '" + *v + "'" + where(key));
      }
    }
    record(key, b ? "true" : "false");
    return b;
  }

  /// Comma list "0,1,2" or range "start:stop:step" (stop included when hit).
  std::vector<double> number_list(const std::string& key, const std::string& fallback) {
    const std::string v = raw(key).value_or(fallback);
    std::vector<double> out;
    if (v.find(':') != std::string::npos) {
      const auto parts = split(v, ':');
      std::vector<double> p;
      for (const auto& s : parts) {
        const auto d = parse_double(s);
        if (!d) throw ConfigError(key, "bad range '" + v + "'" + where(key));
        p.push_back(*d);
      }
      if (p.size() != 3 || !(p[2] > 0.0) || p[1] < p[0]) {
        throw ConfigError(key, "range must be start:stop:step with step > 0" + where(key));
      }
      const auto n = static_cast<long long>(std::floor((p[1] - p[0]) / p[2] * (1.0 + 1e-12)));
      if (n > 1000000) throw ConfigError(key, "range has too many points");
      for (long long i = 0; i <= n; ++i) out.push_back(p[0] + static_cast<double>(i) * p[2]);
    } else if (!trim(v).empty()) {
      for (const auto& s : split(v, ',')) {
        const auto d = parse_double(s);
        if (!d) throw ConfigError(key, "not a number: '" + s + "'" + where(key));
        out.push_back(*d);
      }
    }
    std::string resolved;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (i) resolved += ',';
      resolved += format_double(out[i]);
    }
    record(key, resolved);
    return out;
  }

  /// Path resolved against the directory of the config file; recorded absolute.
  std::optional<std::filesystem::path> optional_path(const std::string& key) {
    auto v = raw(key);
    if (!v || v->empty()) return std::nullopt;
    std::filesystem::path p(*v);
    if (p.is_relative() && !base_dir_.empty() && entries_[key].line != 0) p = base_dir_ / p;
    p = std::filesystem::absolute(p).lexically_normal();
    record(key, p.string());
    return p;
  }

  std::filesystem::path required_path(const std::string& key) {
    auto p = optional_path(key);
    if (!p) throw ConfigError(key, "required path is missing");
    return *p;
  }

  /// Informational value written with the resolved set; ignored on input.
  void derived(const std::string& name, const std::string& value) {
    resolved_["derived." + name] = value;
  }

  /// Throws for the first key never read, except derived.* echoes and keys
  /// the predicate accepts (settings that belong to another subcommand).
  template <typename Known>
  void reject_unknown(Known&& known) const {
    for (const auto& [key, e] : entries_) {
      if (e.used || key.rfind("derived.", 0) == 0 || known(key)) continue;
      throw ConfigError(key, "unknown configuration key" + where(key));
    }
  }

  void reject_unknown() const {
    reject_unknown([](const std::string&) { return false; });
  }

  /// Sorted key=value text of every resolved value.
  std::string resolved_text() const {
    std::string out;
    for (const auto& [k, v] : resolved_) out += k + "=" + v + "\n";
    return out;
  }

  const std::map<std::string, std::string>& resolved() const { return resolved_; }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
    bool used = false;
  };

  std::string record(const std::string& key, std::string value) {
    resolved_[key] = value;
    return value;
  }

  std::string where(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end() || it->second.line == 0) return "";
    return " (" + origin_ + ":" + std::to_string(it->second.line) + ")";
  }

  std::string origin_ = "<command line>";
  std::filesystem::path base_dir_;
  std::map<std::string, Entry> entries_;
  std::map<std::string, std::string> resolved_;
};

/// "3/2", "1.5" or "1" as a half-integer.
inline std::optional<HalfInteger> parse_half_integer(std::string_view text) {
  text = trim(text);
  const auto slash = text.find('/');
  if (slash != std::string_view::npos) {
    const auto num = parse_integer(text.substr(0, slash));
    const auto den = parse_integer(text.substr(slash + 1));
    if (!num || !den) return std::nullopt;
    if (*den == 1) return HalfInteger::from_twice(static_cast<int>(2 * *num));
    if (*den == 2) return HalfInteger::from_twice(static_cast<int>(*num));
    return std::nullopt;
  }
  const auto d = parse_double(text);
  if (!d || std::abs(2.0 * *d - std::round(2.0 * *d)) > 1e-9) return std::nullopt;
  return HalfInteger::from_twice(static_cast<int>(std::lround(2.0 * *d)));
}

inline std::string format_half_integer(HalfInteger q) {
  return q.twice() % 2 == 0 ? std::to_string(q.twice() / 2) : std::to_string(q.twice()) + "/2";
}

/// Applies prefix.{mass_kg, nuclear_spin, hfs_splitting_J, g_J, g_I,
/// abundance} on top of base and records the resolved set.
inline IsotopeSpec isotope_from_config(KeyValueConfig& cfg, const std::string& prefix,
                                       IsotopeSpec base) {
  base.mass_kg = cfg.number(prefix + "mass_kg", base.mass_kg);
  const std::string spin_key = prefix + "nuclear_spin";
  const std::string spin_text = cfg.text(spin_key, format_half_integer(base.nuclear_spin));
  const auto spin = parse_half_integer(spin_text);
  if (!spin) throw ConfigError(spin_key, "not a half-integer: '" + spin_text + "'");
  base.nuclear_spin = *spin;
  base.hfs_splitting_J = cfg.number(prefix + "hfs_splitting_J", base.hfs_splitting_J);
  base.g_J = cfg.number(prefix + "g_J", base.g_J);
  base.g_I = cfg.number(prefix + "g_I", base.g_I);
  base.abundance = cfg.number(prefix + "abundance", base.abundance);
  try {
    validate(base);
  } catch (const DomainError& e) {
    throw ConfigError(prefix, e.what());
  }
  return base;
}

/// Isotope definition file: name=Li7 plus any of the keys above (SI units).
/// Names matching a preset start from it; others must give every field.
inline IsotopeSpec load_isotope(const std::filesystem::path& path) {
  auto cfg = KeyValueConfig::load(path);
  const std::string name = cfg.required_text("name");
  IsotopeSpec base;
  if (name == "Li6" || name == "li6") {
    base = presets::li6();
  } else if (name == "Li7" || name == "li7") {
    base = presets::li7();
  } else {
    for (const char* k : {"mass_kg", "nuclear_spin", "hfs_splitting_J"}) {
      if (!cfg.has(k)) throw ConfigError(k, "required for isotope '" + name + "' in " + path.string());
    }
    base.name = name;
  }
  auto iso = isotope_from_config(cfg, "", base);
  cfg.reject_unknown();
  return iso;
}

/// Population CSV with columns F, M_F, P (half-integers as "3/2" or "1.5").
/// Weights are normalized to sum to one.
inline SublevelPopulation load_population(const std::filesystem::path& path,
                                          const IsotopeSpec& iso) {
  const auto table = CsvTable::read(path);
  const auto cF = table.column("F");
  const auto cM = table.column("M_F");
  const auto cP = table.column("P");
  SublevelPopulation pop;
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto F = parse_half_integer(table.text(r, cF));
    const auto M = parse_half_integer(table.text(r, cM));
    if (!F || !M) throw ParseError(path.string(), table.line(r), "F and M_F must be half-integers");
    const double w = table.number(r, cP);
    try {
      check_sublevel(iso, {*F, *M});
    } catch (const DomainError& e) {
      throw ParseError(path.string(), table.line(r), e.what());
    }
    if (!(w >= 0.0)) throw ParseError(path.string(), table.line(r), "weight must be non-negative");
    pop.entries.push_back({{*F, *M}, w});
  }
  const double total = pop.total_weight();
  if (!(total > 0.0)) throw ParseError(path.string(), 0, "population has zero total weight");
  for (auto& e : pop.entries) e.second /= total;
  return pop;
}

}  // namespace lidephase

#endif  // LIDEPHASE_CONFIG_HPP
