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
// Command-line front end. Exit codes: 0 success, 1 usage or configuration
// error, 2 runtime failure.

#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iomanip>
#include <optional>

#include "isac/config.hpp"
#include "isac/selfcheck.hpp"

#ifndef ISAC_CRLB_VERSION
#define ISAC_CRLB_VERSION "0.1.0"
#endif

namespace isac::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

struct Options {
  std::string command;
  std::string config;  // empty: built-in defaults
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::string format = "csv";
  int threads = 0;  // 0: ISAC_CRLB_THREADS, else 1
  bool exact = false;
  bool full_scale = false;
  int verbosity = 0;
};

struct OutputFile {
  std::string stem;  // file name without extension
  Table table;
};

/// Loads the configuration and applies the command-line overrides.
inline AppConfig prepare(const Options& o) {
  AppConfig a = o.config.empty() ? parse_config_text("") : parse_config(o.config);
  if (!o.full_scale) apply_desk_defaults(a);
  auto& e = a.experiment;
  if (o.exact) e.decimation = 0;
  if (o.seed) e.master_seed = *o.seed;
  e.threads = resolve_threads(o.threads);
  try {
    e.validate();
  } catch (const std::exception& err) {
    throw ConfigError(std::string("invalid configuration: ") + err.what());
  }
  return a;
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline nlohmann::ordered_json metadata(const Options& o, const AppConfig& a) {
  nlohmann::ordered_json m;
  m["version"] = ISAC_CRLB_VERSION;
  m["command"] = o.command;
  m["seed"] = a.experiment.master_seed;
  m["config_hash"] = "fnv1a64:" + hex64(fnv1a(a.text));
  m["full_scale"] = o.full_scale;
  m["exact"] = o.exact;
  return m;
}

/// Same rows as the CSV; non-finite numbers become null, flags are kept.
inline nlohmann::ordered_json table_json(const Table& t) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : t.rows) {
    nlohmann::ordered_json obj = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::visit(
          [&](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, double>) {
              if (std::isfinite(v)) obj[t.columns[i]] = v;
              else obj[t.columns[i]] = nullptr;
            } else {
              obj[t.columns[i]] = v;
            }
          },
          row[i]);
    }
    rows.push_back(std::move(obj));
  }
  nlohmann::ordered_json j;
  j["columns"] = t.columns;
  j["rows"] = std::move(rows);
  return j;
}

/// Writes every file to a temporary name first, then renames; nothing is
/// left behind if any step fails.
inline std::vector<std::filesystem::path> write_outputs(const Options& o, const AppConfig& a,
                                                        const std::vector<OutputFile>& files) {
  namespace fs = std::filesystem;
  const fs::path dir(o.out);
  fs::create_directories(dir);
  const std::string ext = o.format == "json" ? ".json" : ".csv";
  std::vector<std::pair<fs::path, fs::path>> staged;
  std::vector<fs::path> done;
  try {
    for (const auto& f : files) {
      const fs::path final_path = dir / (f.stem + ext);
      const fs::path tmp = dir / ("." + f.stem + ext + ".partial");
      staged.emplace_back(tmp, final_path);
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw std::runtime_error("cannot write " + tmp.string());
      if (o.format == "json") {
        nlohmann::ordered_json j;
        j["metadata"] = metadata(o, a);
        j["table"] = f.stem;
        const auto body = table_json(f.table);
        j["columns"] = body["columns"];
        j["rows"] = body["rows"];
        os << j.dump(2) << '\n';
      } else {
        write_csv(os, f.table);
      }
      os.close();
      if (!os) throw std::runtime_error("failed writing " + tmp.string());
    }
    for (const auto& [tmp, final_path] : staged) {
      fs::rename(tmp, final_path);
      done.push_back(final_path);
    }
  } catch (...) {
    std::error_code ec;
    for (const auto& [tmp, final_path] : staged) fs::remove(tmp, ec);
    for (const auto& p : done) fs::remove(p, ec);
    throw;
  }
  return done;
}

// ---------------------------------------------------------------------------
// Subcommands

inline std::vector<OutputFile> run_crb(const AppConfig& a) {
  const ExperimentConfig& e = a.experiment;
  const Scenario& s = e.base;
  const std::uint64_t stream = e.master_seed;
  const SubcarrierSet sc = e.subcarriers();
  const Beamformer F = uniform_beamformer(s);
  const auto grid = full_grid(s.n_slots, s.symbols_per_slot);
  const StageModel ms(s, stream, Modality::ms, grid, sc, e.fim);
  const StageModel bp(s, stream, Modality::bp, grid, sc, e.fim);

  SequentialSetup setup;
  setup.scenario = s;
  setup.stream = stream;
  setup.thresholds = e.thresholds;
  setup.subcarriers = sc;
  setup.fim = e.fim;
  setup.feedback_symbols = e.feedback_symbols;
  setup.bits_per_entry = e.bits_per_entry;
  setup.bits_per_symbol = e.bits_per_symbol;
  const auto seq = SequentialProblem(setup, e.rho).evaluate(F.F, F.F);

  Table t;
  t.columns = {"source", "metric", "entity", "value", "singular"};
  const auto report = [&t](const std::string& src, const BoundReport& b) {
    t.add({src, std::string("peb"), std::string("ue"), b.singular_ue_pos ? kInf : b.peb_ue, b.singular_ue_pos});
    t.add({src, std::string("veb"), std::string("ue"), b.singular_ue_vel ? kInf : b.veb_ue, b.singular_ue_vel});
    for (std::size_t k = 0; k < b.peb_pt.size(); ++k)
      t.add({src, std::string("peb"), "pt" + std::to_string(k + 1), b.singular_pt[k] ? kInf : b.peb_pt[k],
             static_cast<bool>(b.singular_pt[k])});
    t.add({src, std::string("condition"), std::string("fim"), b.condition_number, !std::isfinite(b.condition_number)});
  };
  report("ms", crb_extract(ms.shared_fim(F.F)));
  report("bp", crb_extract(bp.shared_fim(F.F)));
  report("sequential", seq.bounds_posterior);
  t.add({std::string("sequential"), std::string("loss"), std::string("all"), seq.loss, !std::isfinite(seq.loss)});
  const TwoEpochConfig tc{0.0, stream, sc, e.fim};
  const auto snap = snapshot_ms_veb(s, tc, F);
  const auto ext = extended_ms_veb(s, tc, F);
  t.add({std::string("snapshot_ms"), std::string("veb"), std::string("ue"), snap.veb, snap.singular});
  t.add({std::string("extended_ms"), std::string("veb"), std::string("ue"), ext.veb, ext.singular});
  t.add({std::string("frame"), std::string("effective_slots"), std::string("ue"),
         static_cast<double>(snap.effective_slots), false});
  return {{"crb", std::move(t)}};
}

inline std::vector<OutputFile> run_pareto(const AppConfig& a) {
  ExperimentConfig e = a.experiment;
  e.sweep = SweepVariable::alpha;
  e.values = a.alpha_values;
  e.designs = {Design::p1};
  const auto recs = run_experiment(e);
  return {{"pareto", records_table(recs, e.sweep)}, {"pareto_summary", aggregate_table(aggregate(recs, e), e.sweep)}};
}

inline std::vector<OutputFile> run_sweep(const AppConfig& a) {
  const ExperimentConfig& e = a.experiment;
  const auto recs = run_experiment(e);
  return {{"sweep", records_table(recs, e.sweep)},
          {"sweep_summary", aggregate_table(aggregate(recs, e), e.sweep)},
          {"sweep_timing", timing_table(recs)}};
}

/// Separate and shared sequential designs over the rho grid, with the full
/// MS (rho = 1) and full BP (rho = 0) designs as references.
inline std::vector<OutputFile> run_sequential(const AppConfig& a) {
  ExperimentConfig e = a.experiment;
  e.sweep = SweepVariable::num_targets;
  e.values = {static_cast<double>(e.sampling.num_targets)};
  const int R = e.realizations;
  const std::vector<Design> seq_designs{Design::separate_seq, Design::shared_seq};
  const std::vector<Design> ref_designs{Design::full_ms, Design::full_bp};
  const std::size_t G = e.solver.rho_grid.size();

  struct PerRealization {
    std::vector<std::vector<RhoPoint>> points;  // [design][rho]
    std::vector<double> rho_star, seq_wall;
    std::vector<RunRecord> refs;
    std::string error;
  };
  std::vector<PerRealization> res(R);
  parallel_for(static_cast<std::size_t>(R), e.threads, [&](std::size_t r) {
    auto& out = res[r];
    try {
      const RealizationContext ctx = make_context(e, e.values[0], static_cast<int>(r));
      SolverConfig solver = e.solver;
      solver.seed = mix_seed(ctx.stream, 0x5eed);
      solver.threads = 1;
      SequentialSetup setup;
      setup.scenario = ctx.scenario;
      setup.stream = ctx.stream;
      setup.thresholds = e.thresholds;
      setup.subcarriers = e.subcarriers();
      setup.fim = e.fim;
      setup.feedback_symbols = e.feedback_symbols;
      setup.bits_per_entry = e.bits_per_entry;
      setup.bits_per_symbol = e.bits_per_symbol;
      for (Design d : seq_designs) {
        const auto o = d == Design::shared_seq ? solve_p3_shared(setup, solver) : solve_p2_separate(setup, solver);
        out.points.push_back(o.per_rho);
        out.rho_star.push_back(o.rho_star);
        out.seq_wall.push_back(o.wall_time_s);
      }
      for (Design d : ref_designs) out.refs.push_back(run_design(e, ctx, d));
    } catch (const std::exception& err) {
      out.error = err.what();
    }
  });
  for (int r = 0; r < R; ++r)
    if (!res[r].error.empty()) throw std::runtime_error("realization " + std::to_string(r) + ": " + res[r].error);

  const auto peb_ue = [](const BoundReport& b) { return b.singular_ue_pos ? kInf : b.peb_ue; };
  const auto veb_ue = [](const BoundReport& b) { return b.singular_ue_vel ? kInf : b.veb_ue; };
  const auto pt_med = [](const BoundReport& b) {
    std::vector<double> v;
    for (std::size_t k = 0; k < b.peb_pt.size(); ++k) v.push_back(b.singular_pt[k] ? kInf : b.peb_pt[k]);
    return median_of(v);
  };

  Table t;
  t.columns = {"rho", "design", "peb_ue", "veb_ue", "peb_pt_median", "loss", "wall_ms"};
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t di = 0; di < seq_designs.size(); ++di) {
      std::vector<double> pe, ve, pp, lo, wa;
      for (const auto& pr : res) {
        const RhoPoint& p = pr.points[di][g];
        pe.push_back(p.ok ? peb_ue(p.bounds) : kInf);
        ve.push_back(p.ok ? veb_ue(p.bounds) : kInf);
        pp.push_back(p.ok ? pt_med(p.bounds) : kInf);
        lo.push_back(p.loss);
        wa.push_back(p.wall_time_s * 1e3);
      }
      t.add({e.solver.rho_grid[g], to_string(seq_designs[di]), median_of(pe), median_of(ve), median_of(pp),
             median_of(lo), median_of(wa)});
    }
  for (std::size_t di = 0; di < ref_designs.size(); ++di) {
    std::vector<double> pe, ve, pp, lo, wa;
    for (const auto& pr : res) {
      const RunRecord& rec = pr.refs[di];
      pe.push_back(metric_value(rec, "peb_ue"));
      ve.push_back(metric_value(rec, "veb_ue"));
      pp.push_back(metric_value(rec, "peb_pt_median"));
      lo.push_back(metric_value(rec, "loss"));
      wa.push_back(rec.wall_time_s * 1e3);
    }
    t.add({ref_designs[di] == Design::full_ms ? 1.0 : 0.0, to_string(ref_designs[di]), median_of(pe), median_of(ve),
           median_of(pp), median_of(lo), median_of(wa)});
  }

  // Per-realization outcome at each design's own rho*.
  Table best;
  best.columns = {"realization", "design", "rho_star", "peb_ue", "veb_ue", "peb_pt_median", "loss", "wall_ms"};
  for (int r = 0; r < R; ++r) {
    const auto& pr = res[r];
    for (std::size_t di = 0; di < seq_designs.size(); ++di) {
      const auto& pts = pr.points[di];
      const auto it = std::find_if(pts.begin(), pts.end(), [&](const RhoPoint& p) { return p.rho == pr.rho_star[di]; });
      const BoundReport& b = it->bounds;
      best.add({std::int64_t{r}, to_string(seq_designs[di]), pr.rho_star[di], peb_ue(b), veb_ue(b), pt_med(b),
                it->loss, pr.seq_wall[di] * 1e3});
    }
    for (const auto& rec : pr.refs)
      best.add({std::int64_t{r}, to_string(rec.design), rec.rho_star, metric_value(rec, "peb_ue"),
                metric_value(rec, "veb_ue"), metric_value(rec, "peb_pt_median"), metric_value(rec, "loss"),
                rec.wall_time_s * 1e3});
  }
  return {{"sequential", std::move(t)}, {"sequential_best", std::move(best)}};
}

inline int run_validate(const AppConfig& a, std::ostream& out) {
  const auto results = selfcheck::run_all(a.experiment.master_seed);
  bool all = true;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << fmt_num(r.value) << " (limit " << fmt_num(r.limit)
        << ", " << std::fixed << std::setprecision(3) << r.seconds << " s)" << std::defaultfloat;
    if (!r.detail.empty()) out << " " << r.detail;
    out << '\n';
    all = all && r.passed;
  }
  out << (all ? "all checks passed" : "some checks failed") << '\n';
  return all ? kExitOk : kExitRuntime;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Cramer-Rao bounds and beamformer design for joint monostatic sensing and bistatic positioning",
               "isac_crlb"};
  app.set_version_flag("--version", ISAC_CRLB_VERSION);
  app.require_subcommand(1, 1);

  struct SubcommandInfo {
    const char* name;
    const char* help;
  };
  const std::vector<SubcommandInfo> subcommands_info{
      {"crb", "bounds for the scenario in [geometry] under the baseline beamformer"},
      {"pareto", "weighted-sum sweep over experiment.alpha_values"},
      {"sequential", "separate and shared sequential designs over the rho grid"},
      {"sweep", "Monte-Carlo table over experiment.values"},
      {"validate", "finite-difference and algebraic self-checks"},
  };
  std::uint64_t seed = 0;
  for (const auto& sp : subcommands_info) {
    CLI::App* sub = app.add_subcommand(sp.name, sp.help);
    sub->add_option("-c,--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("-o,--out", o.out, "output directory")->capture_default_str();
    sub->add_option("-s,--seed", seed, "master seed override");
    sub->add_option("-f,--format", o.format, "output format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
    sub->add_option("-t,--threads", o.threads, "worker threads (default: ISAC_CRLB_THREADS or 1)")
        ->check(CLI::NonNegativeNumber);
    sub->add_flag("--exact", o.exact, "use every subcarrier");
    sub->add_flag("--full-scale", o.full_scale, "reference array and frame sizes");
    sub->add_flag("-v,--verbose", o.verbosity, "progress messages on stderr");
    sub->callback([&o, sub, name = std::string(sp.name)]() {
      o.command = name;
      (void)sub;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << ISAC_CRLB_VERSION << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  for (auto* sub : app.get_subcommands())
    if (sub->count("--seed")) o.seed = seed;

  AppConfig cfg;
  try {
    cfg = prepare(o);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (o.verbosity > 0)
      err << o.command << ": seed " << cfg.experiment.master_seed << ", " << cfg.experiment.threads << " thread(s)\n";
    if (o.command == "validate") return run_validate(cfg, out);
    std::vector<OutputFile> files;
    if (o.command == "crb") files = run_crb(cfg);
    else if (o.command == "pareto") files = run_pareto(cfg);
    else if (o.command == "sequential") files = run_sequential(cfg);
    else if (o.command == "sweep") files = run_sweep(cfg);
    for (const auto& p : write_outputs(o, cfg, files)) out << p.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace isac::cli
