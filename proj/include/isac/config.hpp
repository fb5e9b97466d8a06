// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The isac-crlb Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------
//
// Strict INI configuration. Every key is optional; unknown keys are errors.

#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <set>

#include "isac/experiments.hpp"

namespace isac {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AppConfig {
  ExperimentConfig experiment;
  std::vector<double> alpha_values{0.0, 0.25, 0.5, 0.75, 1.0};  // pareto
  std::set<std::string> explicit_keys;                           // "section.key"
  std::string text;                                              // raw bytes, for hashing

  bool is_set(const std::string& path) const { return explicit_keys.count(path) > 0; }
};

/// Full-scale reference values: 200 realizations over all subcarriers.
inline ExperimentConfig reference_defaults() {
  ExperimentConfig c;
  c.realizations = 200;
  c.decimation = 0;
  return c;
}

/// Shrinks the array, frame and realization counts to desk scale, leaving
/// any key the user set explicitly alone.
inline void apply_desk_defaults(AppConfig& a) {
  Scenario desk = a.experiment.base;
  apply_desk_profile(desk);
  auto& e = a.experiment;
  if (!a.is_set("system.n_bs")) e.base.n_bs = desk.n_bs;
  if (!a.is_set("system.n_ue")) e.base.n_ue = desk.n_ue;
  if (!a.is_set("system.n_slots")) e.base.n_slots = desk.n_slots;
  if (!a.is_set("system.symbols_per_slot")) e.base.symbols_per_slot = desk.symbols_per_slot;
  if (!a.is_set("experiment.decimation")) e.decimation = kDeskSubcarriers;
  if (!a.is_set("experiment.realizations")) e.realizations = kDeskRealizations;
}

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Relative ridge applied to nuisance blocks when experiment.nuisance_ridge is on.
inline constexpr double kNuisanceRidge = 1e-12;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline double parse_double(const std::string& path, const std::string& raw) {
  const std::string v = trim(raw);
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size() || !std::isfinite(x))
    throw ConfigError(path + ": expected a finite number, got '" + v + "'");
  return x;
}

inline long long parse_integer(const std::string& path, const std::string& raw) {
  const std::string v = trim(raw);
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw ConfigError(path + ": expected an integer, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& path, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(path + ": expected a boolean, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : raw) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

/// Binds "section.key" names to setters; each setter validates its own field.
class Schema {
 public:
  using Setter = std::function<void(const std::string& path, const std::string& value)>;

  void add(const std::string& path, Setter set) { fields_[path] = std::move(set); }

  void real(const std::string& path, double& dst, std::function<bool(double)> ok = {}, const char* rule = "") {
    add(path, [&dst, ok, rule](const std::string& p, const std::string& v) {
      const double x = parse_double(p, v);
      if (ok && !ok(x)) throw ConfigError(p + ": " + rule);
      dst = x;
    });
  }

  void integer(const std::string& path, int& dst, long long lo, long long hi = 1ll << 30) {
    add(path, [&dst, lo, hi](const std::string& p, const std::string& v) {
      const long long x = parse_integer(p, v);
      if (x < lo || x > hi)
        throw ConfigError(p + ": must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      dst = static_cast<int>(x);
    });
  }

  void flag(const std::string& path, bool& dst) {
    add(path, [&dst](const std::string& p, const std::string& v) { dst = parse_bool(p, v); });
  }

  void reals(const std::string& path, std::vector<double>& dst, bool allow_empty = false) {
    add(path, [&dst, allow_empty](const std::string& p, const std::string& v) {
      std::vector<double> xs;
      for (const auto& item : split_list(v)) xs.push_back(parse_double(p, item));
      if (xs.empty() && !allow_empty) throw ConfigError(p + ": list must not be empty");
      dst = std::move(xs);
    });
  }

  void set(const std::string& path, const std::string& value) const {
    const auto it = fields_.find(path);
    if (it == fields_.end()) throw ConfigError("unknown key '" + path + "'");
    it->second(path, value);
  }

 private:
  std::map<std::string, Setter> fields_;
};

inline bool positive(double x) { return x > 0.0; }
inline bool non_negative(double x) { return x >= 0.0; }
inline bool unit_interval(double x) { return x >= 0.0 && x <= 1.0; }

inline Schema build_schema(AppConfig& a, std::vector<double>& pt_x, std::vector<double>& pt_y, double& bs_orient_deg,
                           double& offset_deg, std::vector<std::string>& designs) {
  ExperimentConfig& e = a.experiment;
  Scenario& s = e.base;
  Schema m;

  m.integer("system.n_bs", s.n_bs, 1, 4096);
  m.integer("system.n_ue", s.n_ue, 1, 4096);
  m.real("system.carrier_hz", s.carrier_hz, positive, "must be positive");
  m.real("system.bandwidth_hz", s.bandwidth_hz, positive, "must be positive");
  m.integer("system.n_subcarriers", s.n_subcarriers, 1, 1 << 20);
  m.integer("system.n_slots", s.n_slots, 1, 1 << 16);
  m.integer("system.symbols_per_slot", s.symbols_per_slot, 1, 1 << 16);
  m.real("system.power_budget_w", s.power_budget_w, positive, "power budget must be positive");
  m.real("system.clock_bias_s", s.clock_bias_s);
  m.real("system.orientation_offset_deg", offset_deg);
  m.real("system.rcs_ue_m2", s.rcs_ue_m2, positive, "must be positive");
  m.real("system.rcs_pt_m2", s.rcs_pt_m2, positive, "must be positive");
  m.add("system.combiner", [&s](const std::string& p, const std::string& v) {
    const std::string t = trim(v);
    if (t == "identity") s.combiner = CombinerKind::identity;
    else if (t == "dft") s.combiner = CombinerKind::dft;
    else throw ConfigError(p + ": expected identity or dft, got '" + t + "'");
  });

  m.real("noise.psd_dbm_hz", s.noise.psd_dbm_hz);
  m.real("noise.noise_figure_db", s.noise.noise_figure_db, non_negative, "must be >= 0");
  m.real("noise.path_loss_exponent", s.noise.path_loss_exponent, positive, "must be positive");
  m.real("noise.shadow_sigma_db", s.noise.shadow_sigma_db, non_negative, "must be >= 0");
  m.flag("noise.shadowing", s.noise.shadowing);

  ThresholdSet& t = e.thresholds;
  m.real("thresholds.peb_ue_ms", t.peb_ue_ms, positive, "must be positive");
  m.real("thresholds.peb_ue_bp", t.peb_ue_bp, positive, "must be positive");
  m.real("thresholds.peb_pt_ms", t.peb_pt_ms, positive, "must be positive");
  m.real("thresholds.peb_pt_bp", t.peb_pt_bp, positive, "must be positive");
  m.real("thresholds.veb_ue_bp", t.veb_ue_bp, positive, "must be positive");
  m.real("thresholds.w_peb_ue_ms", t.w_peb_ue_ms, non_negative, "must be >= 0");
  m.real("thresholds.w_peb_pt_ms", t.w_peb_pt_ms, non_negative, "must be >= 0");
  m.real("thresholds.w_peb_ue_bp", t.w_peb_ue_bp, non_negative, "must be >= 0");
  m.real("thresholds.w_veb_ue_bp", t.w_veb_ue_bp, non_negative, "must be >= 0");
  m.real("thresholds.w_peb_pt_bp", t.w_peb_pt_bp, non_negative, "must be >= 0");
  m.flag("thresholds.two_sided", t.two_sided);

  m.real("geometry.bs_x", s.bs_position.x());
  m.real("geometry.bs_y", s.bs_position.y());
  m.real("geometry.bs_orientation_deg", bs_orient_deg);
  m.real("geometry.ue_x", s.ue_position.x());
  m.real("geometry.ue_y", s.ue_position.y());
  m.real("geometry.ue_vx", s.ue_velocity.x());
  m.real("geometry.ue_vy", s.ue_velocity.y());
  m.reals("geometry.pt_x", pt_x, true);
  m.reals("geometry.pt_y", pt_y, true);

  SamplingConfig& sa = e.sampling;
  m.real("sampling.range_min", sa.range_min, positive, "must be positive");
  m.real("sampling.range_max", sa.range_max, positive, "must be positive");
  m.real("sampling.sector_deg", sa.sector_deg, [](double x) { return x >= 0 && x <= 180; }, "must lie in [0, 180]");
  m.real("sampling.min_separation", sa.min_separation, non_negative, "must be >= 0");
  m.integer("sampling.num_targets", sa.num_targets, 0, 64);
  m.real("sampling.speed", sa.speed, non_negative, "must be >= 0");

  m.real("sequential.rho", e.rho, unit_interval, "must lie in [0, 1]");
  m.integer("sequential.feedback_symbols", e.feedback_symbols, -1);
  m.real("sequential.bits_per_entry", e.bits_per_entry, positive, "must be positive");
  m.real("sequential.bits_per_symbol", e.bits_per_symbol, positive, "must be positive");

  SolverConfig& so = e.solver;
  m.add("solver.mode", [&so](const std::string& p, const std::string& v) {
    const std::string x = trim(v);
    if (x == "codebook") so.mode = SolverMode::codebook;
    else if (x == "freeform") so.mode = SolverMode::freeform;
    else throw ConfigError(p + ": expected codebook or freeform, got '" + x + "'");
  });
  m.integer("solver.max_iters", so.max_iters, 0, 1 << 20);
  m.real("solver.step_init", so.step_init, positive, "must be positive");
  m.real("solver.tolerance", so.tolerance, non_negative, "must be >= 0");
  m.integer("solver.restarts", so.restarts, -1, 1024);
  m.add("solver.rho_points", [&so](const std::string& p, const std::string& v) {
    const long long n = parse_integer(p, v);
    if (n < 1 || n > 10001) throw ConfigError(p + ": must lie in [1, 10001]");
    so.rho_grid = linear_grid(0.0, 1.0, static_cast<int>(n));
  });
  m.add("solver.rho_grid", [&so](const std::string& p, const std::string& v) {
    std::vector<double> xs;
    for (const auto& item : split_list(v)) {
      const double x = parse_double(p, item);
      if (!unit_interval(x)) throw ConfigError(p + ": values must lie in [0, 1]");
      xs.push_back(x);
    }
    if (xs.empty()) throw ConfigError(p + ": list must not be empty");
    so.rho_grid = std::move(xs);
  });

  m.add("experiment.sweep", [&e](const std::string& p, const std::string& v) {
    try {
      e.sweep = parse_sweep_variable(trim(v));
    } catch (const std::exception&) {
      throw ConfigError(p + ": expected num_targets, speed, rho or alpha, got '" + trim(v) + "'");
    }
  });
  m.reals("experiment.values", e.values);
  m.integer("experiment.realizations", e.realizations, 1, 1 << 24);
  m.add("experiment.master_seed", [&e](const std::string& p, const std::string& v) {
    const long long x = parse_integer(p, v);
    if (x < 0) throw ConfigError(p + ": must be >= 0");
    e.master_seed = static_cast<std::uint64_t>(x);
  });
  m.add("experiment.designs", [&designs](const std::string& p, const std::string& v) {
    designs = split_list(v);
    if (designs.empty()) throw ConfigError(p + ": list must not be empty");
  });
  m.integer("experiment.decimation", e.decimation, 0, 1 << 20);
  m.real("experiment.alpha", e.alpha, unit_interval, "must lie in [0, 1]");
  m.reals("experiment.alpha_values", a.alpha_values);
  m.flag("experiment.exact_coupling", e.fim.exact_coupling);
  m.add("experiment.nuisance_ridge", [&e](const std::string& p, const std::string& v) {
    e.fim.ridge = parse_bool(p, v) ? kNuisanceRidge : 0.0;
  });
  return m;
}

}  // namespace detail

/// Parses INI text. Syntax errors carry the line number, schema errors the
/// "section.key" path.
inline AppConfig parse_config_text(const std::string& text, const std::string& origin = "<config>") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  {
    std::istringstream is(text);
    try {
      pt::ini_parser::read_ini(is, tree);
    } catch (const pt::ini_parser_error& err) {
      throw ConfigError(origin + ":" + std::to_string(err.line()) + ": " + err.message());
    }
  }

  AppConfig a;
  a.experiment = reference_defaults();
  a.text = text;
  std::vector<double> pt_x, pt_y;
  double bs_orient_deg = a.experiment.base.bs_orientation * 180.0 / kPi;
  double offset_deg = a.experiment.base.orientation_offset_rad * 180.0 / kPi;
  std::vector<std::string> designs;
  const detail::Schema schema = detail::build_schema(a, pt_x, pt_y, bs_orient_deg, offset_deg, designs);

  static const std::set<std::string> sections{"system",   "noise",      "thresholds", "geometry",
                                              "sampling", "sequential", "solver",     "experiment"};
  for (const auto& [section, body] : tree) {
    if (!sections.count(section)) {
      if (body.empty() && !body.data().empty())
        throw ConfigError("key '" + section + "' appears outside any section");
      throw ConfigError("unknown section '" + section + "'");
    }
    for (const auto& [key, node] : body) {
      const std::string path = section + "." + key;
      schema.set(path, node.data());
      a.explicit_keys.insert(path);
    }
  }

  auto& e = a.experiment;
  e.base.bs_orientation = wrap_angle(bs_orient_deg * kPi / 180.0);
  e.base.orientation_offset_rad = wrap_angle(offset_deg * kPi / 180.0);
  if (pt_x.size() != pt_y.size()) throw ConfigError("geometry.pt_y: must have as many entries as geometry.pt_x");
  if (a.is_set("geometry.pt_x")) {
    e.base.pt_positions.clear();
    for (std::size_t i = 0; i < pt_x.size(); ++i) e.base.pt_positions.emplace_back(pt_x[i], pt_y[i]);
  }
  if (!designs.empty()) {
    e.designs.clear();
    for (const auto& d : designs) {
      try {
        e.designs.push_back(parse_design(d));
      } catch (const std::exception&) {
        throw ConfigError("experiment.designs: unknown design '" + d + "'");
      }
    }
  }
  for (double v : a.alpha_values)
    if (!detail::unit_interval(v)) throw ConfigError("experiment.alpha_values: values must lie in [0, 1]");
  if (e.sampling.range_max < e.sampling.range_min)
    throw ConfigError("sampling.range_max: must be >= sampling.range_min");
  try {
    e.validate();
  } catch (const std::exception& err) {
    throw ConfigError(std::string("invalid configuration: ") + err.what());
  }
  return a;
}

inline AppConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace isac
