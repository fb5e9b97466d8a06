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
// Seeded Monte-Carlo harness and CSV emission.

#pragma once

#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "isac/optimizer.hpp"
#include "isac/table.hpp"
#include "isac/velocity.hpp"

namespace isac {

enum class SweepVariable { num_targets, speed, rho, alpha };
enum class Design { full_ms, full_bp, shared_seq, separate_seq, p1 };

inline std::string to_string(SweepVariable v) {
  switch (v) {
    case SweepVariable::num_targets: return "num_targets";
    case SweepVariable::speed: return "speed";
    case SweepVariable::rho: return "rho";
    case SweepVariable::alpha: return "alpha";
  }
  return "?";
}

inline std::string to_string(Design d) {
  switch (d) {
    case Design::full_ms: return "full_ms";
    case Design::full_bp: return "full_bp";
    case Design::shared_seq: return "shared_seq";
    case Design::separate_seq: return "separate_seq";
    case Design::p1: return "p1";
  }
  return "?";
}

inline SweepVariable parse_sweep_variable(const std::string& s) {
  for (auto v : {SweepVariable::num_targets, SweepVariable::speed, SweepVariable::rho, SweepVariable::alpha})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown sweep variable '" + s + "'");
}

inline Design parse_design(const std::string& s) {
  for (auto d : {Design::full_ms, Design::full_bp, Design::shared_seq, Design::separate_seq, Design::p1})
    if (to_string(d) == s) return d;
  throw std::invalid_argument("unknown design '" + s + "'");
}

/// Where UEs and targets are dropped.
struct SamplingConfig {
  double range_min = 5.0;     // m
  double range_max = 100.0;   // m
  double sector_deg = 60.0;   // half-width about the BS broadside
  double min_separation = 1.0;  // m between any two entities
  int num_targets = 2;
  double speed = 10.0;  // m/s

  void validate() const {
    if (!(range_min >= 0.0 && range_max >= range_min)) throw std::invalid_argument("bad range interval");
    if (!(sector_deg >= 0.0 && sector_deg <= 180.0)) throw std::invalid_argument("sector must lie in [0, 180] deg");
    if (!(min_separation >= 0.0)) throw std::invalid_argument("min_separation must be >= 0");
    if (num_targets < 0) throw std::invalid_argument("num_targets must be >= 0");
    if (!(speed >= 0.0)) throw std::invalid_argument("speed must be >= 0");
  }
};

/// Desk-scale sizes: N_B = 16, N_U = 4, L = 8, P = 10.
inline void apply_desk_profile(Scenario& s) {
  s.n_bs = 16;
  s.n_ue = 4;
  s.n_slots = 8;
  s.symbols_per_slot = 10;
}

inline constexpr int kDeskSubcarriers = 64;
inline constexpr int kDeskRealizations = 20;

struct ExperimentConfig {
  Scenario base;
  SamplingConfig sampling;
  SweepVariable sweep = SweepVariable::num_targets;
  std::vector<double> values{1, 2, 3, 4};
  int realizations = kDeskRealizations;
  std::uint64_t master_seed = 1;
  std::vector<Design> designs{Design::full_ms, Design::full_bp};
  int decimation = kDeskSubcarriers;  // subcarriers used; <= 0 or >= M: all
  ThresholdSet thresholds;
  SolverConfig solver;
  FimOptions fim;
  double alpha = 0.5;  // P1 weight when alpha is not swept
  double rho = 0.5;    // unused unless rho is swept
  int feedback_symbols = -1;
  double bits_per_entry = 32.0;
  double bits_per_symbol = 100.0;
  int threads = 1;

  void validate() const {
    base.validate();
    sampling.validate();
    thresholds.validate();
    solver.validate();
    if (realizations < 1) throw std::invalid_argument("realizations must be >= 1");
    if (values.empty()) throw std::invalid_argument("sweep values must be non-empty");
    if (designs.empty()) throw std::invalid_argument("at least one design is required");
    for (double v : values) {
      switch (sweep) {
        case SweepVariable::num_targets:
          if (v < 0 || v != std::floor(v)) throw std::invalid_argument("num_targets values must be integers >= 0");
          break;
        case SweepVariable::speed:
          if (v < 0) throw std::invalid_argument("speed values must be >= 0");
          break;
        case SweepVariable::rho:
        case SweepVariable::alpha:
          if (!(v >= 0 && v <= 1)) throw std::invalid_argument("rho/alpha values must lie in [0, 1]");
          break;
      }
    }
    if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("alpha must lie in [0, 1]");
  }

  SubcarrierSet subcarriers() const {
    if (decimation <= 0 || decimation >= base.n_subcarriers) return all_subcarriers(base.n_subcarriers);
    return decimated_subcarriers(base.n_subcarriers, decimation);
  }
};

/// Positions uniform in range and angle within the sector; targets are drawn
/// one after another so a scene with K targets extends the one with K - 1.
inline Scenario sample_scenario(const Scenario& base, const SamplingConfig& cfg, std::uint64_t stream) {
  cfg.validate();
  Rng rng = make_rng(stream);
  std::uniform_real_distribution<double> range(cfg.range_min, cfg.range_max);
  std::uniform_real_distribution<double> angle(-cfg.sector_deg * kPi / 180.0, cfg.sector_deg * kPi / 180.0);
  std::uniform_real_distribution<double> heading(-kPi, kPi);
  const auto draw = [&]() {
    const double r = range(rng), a = base.bs_orientation + angle(rng);
    return Vec2(base.bs_position + r * Vec2(std::cos(a), std::sin(a)));
  };
  const auto clear = [&](const Vec2& p, const std::vector<Vec2>& taken) {
    if ((p - base.bs_position).norm() < std::max(cfg.min_separation, 1e-9)) return false;
    for (const auto& q : taken)
      if ((p - q).norm() < cfg.min_separation) return false;
    return true;
  };
  constexpr int kMaxTries = 10000;
  Scenario s = base;
  std::vector<Vec2> taken;
  for (int e = 0; e <= cfg.num_targets; ++e) {
    Vec2 p = draw();
    for (int t = 0; !clear(p, taken); ++t) {
      if (t >= kMaxTries) throw ScenarioError("cannot place entities with the requested separation");
      p = draw();
    }
    taken.push_back(p);
  }
  const double h = heading(rng);
  s.ue_position = taken[0];
  s.pt_positions.assign(taken.begin() + 1, taken.end());
  s.ue_velocity = cfg.speed * Vec2(std::cos(h), std::sin(h));
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Records

struct RunRecord {
  double sweep_value = 0.0;
  int realization = 0;
  Design design = Design::full_ms;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double rho_star = kInf;
  double loss = kInf;
  BoundReport bounds;  // end-of-frame bounds of the design
  double peb_pt_median = kInf;
  VelocityBound snapshot, extended;
  double crb_ms = kInf;  // raw traces, as in the weighted-sum objective
  double crb_bp = kInf;
  double wall_time_s = 0.0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return kInf;
  const std::size_t n = v.size(), h = n / 2;
  std::nth_element(v.begin(), v.begin() + h, v.end());
  const double hi = v[h];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + h);
  if (!std::isfinite(lo) || !std::isfinite(hi)) return std::isfinite(lo) ? hi : lo;
  return 0.5 * (lo + hi);
}

/// Linear-interpolation quantile; infinities sort last.
inline double quantile_of(std::vector<double> v, double q) {
  if (v.empty()) return kInf;
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(std::floor(pos));
  const double f = pos - i;
  if (i + 1 >= v.size() || f == 0.0) return v[i];
  if (!std::isfinite(v[i + 1])) return v[i + 1];
  return v[i] + f * (v[i + 1] - v[i]);
}

namespace detail {

inline double pt_median(const BoundReport& r) {
  if (r.peb_pt.empty()) return kInf;
  return median_of(r.peb_pt);
}

/// Raw traces over the P1 blocks; infinite when a required block is singular.
inline std::pair<double, double> raw_traces(const FimMatrix& ms, const FimMatrix& bp) {
  const int K = static_cast<int>(ms.index.entries().size()) - 2;
  std::vector<std::string> all{"p_U", "v_U"}, ms_req{"p_U"};
  for (int k = 1; k <= K; ++k) {
    all.push_back(pt_label(k));
    ms_req.push_back(pt_label(k));
  }
  return {raw_trace_term(ms, all, ms_req, nullptr), raw_trace_term(bp, {"p_U", "v_U"}, {"p_U", "v_U"}, nullptr)};
}

}  // namespace detail

struct RealizationContext {
  Scenario scenario;
  std::uint64_t stream = 0;
  double alpha = 0.5;
  std::vector<double> rho_grid;
};

/// Runs one design on one sampled scene.
inline RunRecord run_design(const ExperimentConfig& cfg, const RealizationContext& ctx, Design d) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.design = d;
  rec.seed = ctx.stream;
  const Scenario& s = ctx.scenario;
  const SubcarrierSet sc = cfg.subcarriers();
  SolverConfig solver = cfg.solver;
  solver.seed = mix_seed(ctx.stream, 0x5eed);
  solver.threads = 1;
  solver.rho_grid = ctx.rho_grid;

  SequentialSetup setup;
  setup.scenario = s;
  setup.stream = ctx.stream;
  setup.thresholds = cfg.thresholds;
  setup.subcarriers = sc;
  setup.fim = cfg.fim;
  setup.feedback_symbols = cfg.feedback_symbols;
  setup.bits_per_entry = cfg.bits_per_entry;
  setup.bits_per_symbol = cfg.bits_per_symbol;

  const auto grid = full_grid(s.n_slots, s.symbols_per_slot);
  const StageModel ms(s, ctx.stream, Modality::ms, grid, sc, cfg.fim);
  const StageModel bp(s, ctx.stream, Modality::bp, grid, sc, cfg.fim);
  P1Setup p1s{ctx.stream, sc, cfg.fim};

  Beamformer ms_beam;  // illuminates the MS velocity estimators
  try {
    switch (d) {
      case Design::full_ms:
      case Design::full_bp: {
        // One modality owns the whole frame, so no feedback symbols are spent.
        const bool is_ms = d == Design::full_ms;
        const auto out = solve_p1(s, is_ms ? 0.0 : 1.0, solver, p1s);
        const Beamformer& F = out.beamformers[0];
        SequentialSetup full = setup;
        full.feedback_symbols = 0;
        const SequentialProblem prob(full, is_ms ? 1.0 : 0.0);
        const auto res = prob.evaluate(F.F, F.F);
        rec.loss = res.loss;
        rec.bounds = res.bounds_posterior;
        rec.rho_star = is_ms ? 1.0 : 0.0;
        ms_beam = F;
        std::tie(rec.crb_ms, rec.crb_bp) = detail::raw_traces(ms.shared_fim(F.F), bp.shared_fim(F.F));
        break;
      }
      case Design::shared_seq:
      case Design::separate_seq: {
        const auto out = d == Design::shared_seq ? solve_p3_shared(setup, solver) : solve_p2_separate(setup, solver);
        const SequentialProblem prob(setup, out.rho_star);
        const Beamformer& Fm = out.beamformers.front();
        const Beamformer& Fb = out.beamformers.back();
        const auto res = prob.evaluate(Fm.F, Fb.F);
        rec.loss = res.loss;
        rec.bounds = res.bounds_posterior;
        rec.rho_star = out.rho_star;
        ms_beam = Fm;
        std::tie(rec.crb_ms, rec.crb_bp) = detail::raw_traces(ms.shared_fim(Fm.F), bp.shared_fim(Fb.F));
        break;
      }
      case Design::p1: {
        // Both modalities share the frame; the reported bounds fuse the
        // BS-side and UE-side information without feedback accounting.
        const auto out = solve_p1(s, ctx.alpha, solver, p1s);
        const Beamformer& F = out.beamformers[0];
        const FimMatrix fm = ms.shared_fim(F.F), fb = bp.shared_fim(F.F);
        const FimMatrix post = posterior_fim(fm, fb);
        rec.bounds = crb_extract(post);
        rec.loss = loss(crb_extract(fm), rec.bounds, cfg.thresholds);
        rec.rho_star = kInf;
        ms_beam = F;
        std::tie(rec.crb_ms, rec.crb_bp) = detail::raw_traces(fm, fb);
        break;
      }
    }
    TwoEpochConfig tc{0.0, ctx.stream, sc, cfg.fim};
    rec.snapshot = snapshot_ms_veb(s, tc, ms_beam);
    rec.extended = extended_ms_veb(s, tc, ms_beam);
    rec.peb_pt_median = detail::pt_median(rec.bounds);
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.wall_time_s = detail::seconds_since(t0);
  return rec;
}

/// Stream of realization r: depends only on the master seed and r, so the
/// same scene recurs across sweep values (common random numbers).
inline std::uint64_t realization_stream(std::uint64_t master_seed, int r) {
  return mix_seed(master_seed, static_cast<std::uint64_t>(r));
}

inline RealizationContext make_context(const ExperimentConfig& cfg, double value, int r) {
  RealizationContext ctx;
  ctx.stream = realization_stream(cfg.master_seed, r);
  SamplingConfig sam = cfg.sampling;
  ctx.alpha = cfg.alpha;
  ctx.rho_grid = cfg.solver.rho_grid;
  switch (cfg.sweep) {
    case SweepVariable::num_targets: sam.num_targets = static_cast<int>(value); break;
    case SweepVariable::speed: sam.speed = value; break;
    case SweepVariable::rho: ctx.rho_grid = {value}; break;
    case SweepVariable::alpha: ctx.alpha = value; break;
  }
  ctx.scenario = sample_scenario(cfg.base, sam, ctx.stream);
  return ctx;
}

/// Records ordered by (sweep value, realization, design), independent of threading.
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::size_t nv = cfg.values.size(), nr = cfg.realizations, nd = cfg.designs.size();
  std::vector<RunRecord> out(nv * nr * nd);
  parallel_for(nv * nr, cfg.threads, [&](std::size_t job) {
    const std::size_t vi = job / nr, r = job % nr;
    const double value = cfg.values[vi];
    RealizationContext ctx;
    std::string err;
    try {
      ctx = make_context(cfg, value, static_cast<int>(r));
    } catch (const std::exception& e) {
      err = e.what();
    }
    for (std::size_t di = 0; di < nd; ++di) {
      RunRecord rec;
      if (err.empty()) {
        rec = run_design(cfg, ctx, cfg.designs[di]);
      } else {
        rec.design = cfg.designs[di];
        rec.error = err;
      }
      rec.sweep_value = value;
      rec.realization = static_cast<int>(r);
      rec.seed = realization_stream(cfg.master_seed, static_cast<int>(r));
      out[job * nd + di] = std::move(rec);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct MetricSummary {
  std::string metric;
  int count = 0;          // realizations
  double median = kInf;   // over all, singular as +inf
  double mean = kInf;     // over the non-singular subset
  int n_finite = 0;
  double p10 = kInf, p90 = kInf;
};

struct AggregateRow {
  double sweep_value = 0.0;
  Design design = Design::full_ms;
  std::vector<MetricSummary> metrics;
};

inline MetricSummary summarize(const std::string& name, const std::vector<double>& v) {
  MetricSummary m;
  m.metric = name;
  m.count = static_cast<int>(v.size());
  m.median = median_of(v);
  m.p10 = quantile_of(v, 0.1);
  m.p90 = quantile_of(v, 0.9);
  double sum = 0.0;
  for (double x : v)
    if (std::isfinite(x)) {
      sum += x;
      ++m.n_finite;
    }
  m.mean = m.n_finite ? sum / m.n_finite : kInf;
  return m;
}

inline const std::vector<std::string>& aggregate_metrics() {
  static const std::vector<std::string> names{"peb_ue", "veb_ue", "peb_pt_median", "loss",
                                              "veb_snapshot", "veb_extended", "crb_ms", "crb_bp"};
  return names;
}

inline double metric_value(const RunRecord& r, const std::string& name) {
  if (!r.ok) return kInf;
  if (name == "peb_ue") return r.bounds.singular_ue_pos ? kInf : r.bounds.peb_ue;
  if (name == "veb_ue") return r.bounds.singular_ue_vel ? kInf : r.bounds.veb_ue;
  if (name == "peb_pt_median") return r.peb_pt_median;
  if (name == "loss") return r.loss;
  if (name == "veb_snapshot") return r.snapshot.singular ? kInf : r.snapshot.veb;
  if (name == "veb_extended") return r.extended.singular ? kInf : r.extended.veb;
  if (name == "crb_ms") return r.crb_ms;
  if (name == "crb_bp") return r.crb_bp;
  throw std::invalid_argument("unknown metric " + name);
}

inline std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& recs, const ExperimentConfig& cfg) {
  std::vector<AggregateRow> rows;
  for (double v : cfg.values)
    for (Design d : cfg.designs) {
      AggregateRow row{v, d, {}};
      for (const auto& name : aggregate_metrics()) {
        std::vector<double> xs;
        for (const auto& r : recs)
          if (r.sweep_value == v && r.design == d) xs.push_back(metric_value(r, name));
        row.metrics.push_back(summarize(name, xs));
      }
      rows.push_back(std::move(row));
    }
  return rows;
}

// ---------------------------------------------------------------------------
// Tables

inline Table records_table(const std::vector<RunRecord>& recs, SweepVariable sweep) {
  Table t;
  t.columns = {"sweep_var",       "sweep_value",     "realization",     "design",          "seed",
               "ok",              "rho_star",        "loss",            "peb_ue",          "veb_ue",
               "peb_pt_median",   "veb_snapshot",    "veb_extended",    "crb_ms",          "crb_bp",
               "singular_ue_pos", "singular_ue_vel", "singular_pt",     "singular_snapshot", "singular_extended"};
  for (const auto& r : recs) {
    const bool any_pt = std::any_of(r.bounds.singular_pt.begin(), r.bounds.singular_pt.end(), [](bool b) { return b; });
    t.add({to_string(sweep), r.sweep_value, std::int64_t{r.realization}, to_string(r.design), r.seed, r.ok,
           r.rho_star, r.loss, metric_value(r, "peb_ue"), metric_value(r, "veb_ue"), r.peb_pt_median,
           metric_value(r, "veb_snapshot"), metric_value(r, "veb_extended"), r.crb_ms, r.crb_bp,
           !r.ok || r.bounds.singular_ue_pos, !r.ok || r.bounds.singular_ue_vel, !r.ok || any_pt,
           !r.ok || r.snapshot.singular, !r.ok || r.extended.singular});
  }
  return t;
}

inline Table aggregate_table(const std::vector<AggregateRow>& rows, SweepVariable sweep) {
  Table t;
  t.columns = {"sweep_var", "sweep_value", "design", "metric", "count", "median", "mean_finite", "n_finite", "p10", "p90"};
  for (const auto& row : rows)
    for (const auto& m : row.metrics)
      t.add({to_string(sweep), row.sweep_value, to_string(row.design), m.metric, std::int64_t{m.count}, m.median,
             m.mean, std::int64_t{m.n_finite}, m.p10, m.p90});
  return t;
}

/// Wall times live apart from the sweep table so the table stays byte-stable.
inline Table timing_table(const std::vector<RunRecord>& recs) {
  Table t;
  t.columns = {"sweep_value", "realization", "design", "wall_ms"};
  for (const auto& r : recs)
    t.add({r.sweep_value, std::int64_t{r.realization}, to_string(r.design), r.wall_time_s * 1e3});
  return t;
}

inline void write_records_csv(std::ostream& os, const std::vector<RunRecord>& recs, SweepVariable sweep) {
  write_csv(os, records_table(recs, sweep));
}

inline void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows, SweepVariable sweep) {
  write_csv(os, aggregate_table(rows, sweep));
}

inline void write_timing_csv(std::ostream& os, const std::vector<RunRecord>& recs) { write_csv(os, timing_table(recs)); }

}  // namespace isac
