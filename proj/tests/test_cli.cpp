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

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "isac/cli.hpp"

using namespace isac;
namespace fs = std::filesystem;
using Catch::Approx;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("isac_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "isac_crlb");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

// Small frame so Monte-Carlo subcommands finish quickly.
const char* kSmall =
    "[system]\nn_slots = 4\nsymbols_per_slot = 5\n"
    "[solver]\nrho_points = 3\nmax_iters = 20\n"
    "[experiment]\nrealizations = 2\nvalues = 1, 2\ndecimation = 16\n";

}  // namespace

TEST_CASE("empty configuration yields the reference defaults", "[cli]") {
  const AppConfig a = parse_config_text("");
  const auto& s = a.experiment.base;
  CHECK(s.n_bs == 64);
  CHECK(s.n_ue == 16);
  CHECK(s.carrier_hz == 28e9);
  CHECK(10 * std::log10(s.power_budget_w * 1e3) == Approx(-20.0));
  CHECK(s.n_subcarriers == 1024);
  CHECK(a.experiment.realizations == 200);
  CHECK(a.experiment.decimation == 0);
  CHECK(a.explicit_keys.empty());
  // Sections without keys are valid.
  CHECK(parse_config_text("[system]\n[noise]\n").experiment.base.n_bs == 64);
}

TEST_CASE("configuration errors name the offending key or line", "[cli]") {
  const auto message = [](const std::string& text) {
    try {
      parse_config_text(text, "cfg.ini");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK_THAT(message("[system]\nn_bss = 3\n"), Catch::Matchers::ContainsSubstring("n_bss"));
  CHECK_THAT(message("[system]\npower_budget_w = -1e-3\n"), Catch::Matchers::ContainsSubstring("system.power_budget_w"));
  CHECK_THAT(message("[system]\nn_bs = 4\n[noise\n"), Catch::Matchers::ContainsSubstring("cfg.ini:3"));
  CHECK_THAT(message("[system]\nn_bs = four\n"), Catch::Matchers::ContainsSubstring("system.n_bs"));
  CHECK_THAT(message("[system]\nn_bs = 0\n"), Catch::Matchers::ContainsSubstring("system.n_bs"));
  CHECK_THAT(message("[radar]\nx = 1\n"), Catch::Matchers::ContainsSubstring("radar"));
  CHECK_THAT(message("n_bs = 4\n"), Catch::Matchers::ContainsSubstring("outside"));
  CHECK_THAT(message("[geometry]\npt_x = 1, 2\npt_y = 3\n"), Catch::Matchers::ContainsSubstring("geometry.pt_y"));
  CHECK_THAT(message("[experiment]\ndesigns = full_ms, bogus\n"), Catch::Matchers::ContainsSubstring("bogus"));
  CHECK_THAT(message("[solver]\nrho_grid = 0, 1.5\n"), Catch::Matchers::ContainsSubstring("solver.rho_grid"));
}

TEST_CASE("configuration values reach the experiment", "[cli]") {
  const AppConfig a = parse_config_text(
      "[system]\nn_bs = 8\norientation_offset_deg = 90\ncombiner = dft\n"
      "[geometry]\nue_x = 12\nue_y = -3\npt_x = 20, 30\npt_y = 5, -5\n"
      "[thresholds]\ntwo_sided = true\n"
      "[experiment]\nsweep = speed\nvalues = 5, 15, 30\ndesigns = shared_seq, p1\n"
      "[solver]\nmode = freeform\nrho_grid = 0.2, 0.4\n");
  const auto& e = a.experiment;
  CHECK(e.base.n_bs == 8);
  CHECK(e.base.orientation_offset_rad == Approx(kPi / 2));
  CHECK(e.base.combiner == CombinerKind::dft);
  CHECK(e.base.ue_position == Vec2(12, -3));
  REQUIRE(e.base.pt_positions.size() == 2);
  CHECK(e.base.pt_positions[1] == Vec2(30, -5));
  CHECK(e.thresholds.two_sided);
  CHECK(e.sweep == SweepVariable::speed);
  CHECK(e.values == std::vector<double>{5, 15, 30});
  CHECK(e.designs == std::vector<Design>{Design::shared_seq, Design::p1});
  CHECK(e.solver.mode == SolverMode::freeform);
  CHECK(e.solver.rho_grid == std::vector<double>{0.2, 0.4});
  CHECK(e.fim.ridge == 0.0);
  CHECK(parse_config_text("[experiment]\nnuisance_ridge = true\n").experiment.fim.ridge == kNuisanceRidge);
}

TEST_CASE("desk profile leaves explicit keys alone", "[cli]") {
  AppConfig a = parse_config_text("[system]\nn_bs = 32\n[experiment]\nrealizations = 3\n");
  apply_desk_defaults(a);
  CHECK(a.experiment.base.n_bs == 32);
  CHECK(a.experiment.base.n_ue == 4);
  CHECK(a.experiment.realizations == 3);
  CHECK(a.experiment.decimation == kDeskSubcarriers);
}

TEST_CASE("usage errors and configuration errors exit with 1", "[cli]") {
  const fs::path dir = scratch("usage");
  CHECK(invoke({}).code == cli::kExitConfig);
  CHECK(invoke({"crb", "--format", "xml"}).code == cli::kExitConfig);
  CHECK(invoke({"crb", "--config", (dir / "missing.ini").string()}).code == cli::kExitConfig);
  put(dir / "bad.ini", "[system]\nn_bss = 3\n");
  const Run r = invoke({"crb", "--config", (dir / "bad.ini").string(), "--out", (dir / "o").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("n_bss"));
  CHECK_FALSE(fs::exists(dir / "o" / "crb.csv"));
  CHECK(invoke({"--help"}).code == cli::kExitOk);
}

TEST_CASE("runtime failures exit with 2 and leave no output", "[cli]") {
  const fs::path dir = scratch("runtime");
  put(dir / "blocker", "not a directory");
  const Run r = invoke({"crb", "--out", (dir / "blocker" / "sub").string()});
  CHECK(r.code == cli::kExitRuntime);
  // Entities cannot be placed with this separation.
  put(dir / "crowded.ini", std::string(kSmall) + "[sampling]\nrange_min = 5\nrange_max = 6\nsector_deg = 0\n");
  const Run s = invoke({"sequential", "--config", (dir / "crowded.ini").string(), "--out", (dir / "seq").string()});
  CHECK(s.code == cli::kExitRuntime);
  CHECK((!fs::exists(dir / "seq") || fs::is_empty(dir / "seq")));
}

TEST_CASE("crb emits one bound report", "[cli]") {
  const fs::path dir = scratch("crb");
  put(dir / "c.ini", "[geometry]\nue_x = 30\nue_y = 8\nue_vx = 3\nue_vy = 9\npt_x = 40, 25\npt_y = -12, 20\n");
  const Run r = invoke({"crb", "--config", (dir / "c.ini").string(), "--out", dir.string()});
  REQUIRE(r.code == 0);
  const auto rows = lines_of(slurp(dir / "crb.csv"));
  REQUIRE_FALSE(rows.empty());
  CHECK(rows[0] == "source,metric,entity,value,singular");
  CHECK(std::count_if(rows.begin(), rows.end(), [](const std::string& l) { return l.rfind("ms,peb,pt", 0) == 0; }) == 2);
  CHECK(slurp(dir / "crb.csv").find("nan") == std::string::npos);
}

TEST_CASE("sequential emits the documented columns", "[cli]") {
  const fs::path dir = scratch("sequential");
  put(dir / "s.ini", kSmall);
  const Run r = invoke({"sequential", "--config", (dir / "s.ini").string(), "--out", dir.string()});
  REQUIRE(r.code == 0);
  const auto rows = lines_of(slurp(dir / "sequential.csv"));
  REQUIRE(rows.size() == 1 + 3 * 2 + 2);
  CHECK(rows[0] == "rho,design,peb_ue,veb_ue,peb_pt_median,loss,wall_ms");
  CHECK(lines_of(slurp(dir / "sequential_best.csv")).size() == 1 + 2 * 4);
}

TEST_CASE("pareto emits one row per weight and realization", "[cli]") {
  const fs::path dir = scratch("pareto");
  put(dir / "p.ini", std::string(kSmall) + "alpha_values = 0, 0.5, 1\n");
  const Run r = invoke({"pareto", "--config", (dir / "p.ini").string(), "--out", dir.string()});
  REQUIRE(r.code == 0);
  const auto rows = lines_of(slurp(dir / "pareto.csv"));
  REQUIRE(rows.size() == 1 + 3 * 2);
  for (int realization : {0, 1}) {
    int n = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) n += rows[i].find(",p1,") != std::string::npos &&
                                                       rows[i].find("alpha,") == 0 &&
                                                       rows[i].find("," + std::to_string(realization) + ",p1,") != std::string::npos;
    CHECK(n == 3);
  }
}

TEST_CASE("sweep output is byte-identical across thread counts", "[cli]") {
  const fs::path dir = scratch("sweep");
  put(dir / "w.ini", kSmall);
  const std::string cfg = (dir / "w.ini").string();
  REQUIRE(invoke({"sweep", "--config", cfg, "--out", (dir / "a").string(), "--threads", "1"}).code == 0);
  REQUIRE(invoke({"sweep", "--config", cfg, "--out", (dir / "b").string(), "--threads", "3"}).code == 0);
  CHECK(slurp(dir / "a" / "sweep.csv") == slurp(dir / "b" / "sweep.csv"));
  CHECK(slurp(dir / "a" / "sweep_summary.csv") == slurp(dir / "b" / "sweep_summary.csv"));
  REQUIRE(invoke({"sweep", "--config", cfg, "--out", (dir / "c").string(), "--seed", "9"}).code == 0);
  CHECK(slurp(dir / "a" / "sweep.csv") != slurp(dir / "c" / "sweep.csv"));
  const std::string csv = slurp(dir / "a" / "sweep.csv");
  CHECK(csv.find('\r') == std::string::npos);
  CHECK(lines_of(csv).size() == 1 + 2 * 2 * 2);
}

TEST_CASE("JSON carries the CSV rows plus metadata", "[cli]") {
  const fs::path dir = scratch("json");
  put(dir / "w.ini",
      "[system]\nn_slots = 4\nsymbols_per_slot = 5\n[solver]\nmax_iters = 20\n"
      "[experiment]\nrealizations = 2\nvalues = 0\ndecimation = 16\n");
  const std::string cfg = (dir / "w.ini").string();
  REQUIRE(invoke({"sweep", "--config", cfg, "--out", dir.string(), "--format", "json", "--seed", "4"}).code == 0);
  REQUIRE(invoke({"sweep", "--config", cfg, "--out", dir.string(), "--seed", "4"}).code == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "sweep.json"));
  CHECK(j["metadata"]["seed"] == 4);
  CHECK(j["metadata"]["version"] == ISAC_CRLB_VERSION);
  CHECK(j["metadata"]["config_hash"].get<std::string>().rfind("fnv1a64:", 0) == 0);
  const auto csv_rows = lines_of(slurp(dir / "sweep.csv"));
  REQUIRE(j["rows"].size() == csv_rows.size() - 1);
  // K = 0 leaves BP without a position fix: null in JSON, -1 plus a flag in CSV.
  bool saw_null = false;
  for (const auto& row : j["rows"])
    if (row["design"] == "full_bp") {
      CHECK(row["peb_ue"].is_null());
      CHECK(row["singular_ue_pos"] == true);
      saw_null = true;
    }
  CHECK(saw_null);
  CHECK(j["columns"].size() == records_table({}, SweepVariable::num_targets).columns.size());
}

TEST_CASE("validate passes on a clean build", "[cli]") {
  const Run r = invoke({"validate"});
  INFO(r.out);
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("installed binary maps exit codes", "[cli]") {
  const fs::path dir = scratch("binary");
  put(dir / "bad.ini", "[system]\npower_budget_w = -1\n");
  const std::string bin = ISAC_CLI_PATH;
  const auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status(bin + " crb --config " + (dir / "bad.ini").string()) == 1);
  CHECK(status(bin + " crb --out " + (dir / "ok").string()) == 0);
  CHECK(fs::exists(dir / "ok" / "crb.csv"));
}

TEST_CASE("shipped configurations parse", "[cli]") {
  int n = 0;
  for (const auto& entry : fs::directory_iterator(ISAC_CONFIG_DIR)) {
    if (entry.path().extension() != ".ini") continue;
    INFO(entry.path().string());
    CHECK_NOTHROW(parse_config(entry.path().string()));
    ++n;
  }
  CHECK(n >= 5);
  // The reference file spells out the built-in defaults.
  const AppConfig ref = parse_config(std::string(ISAC_CONFIG_DIR) + "/reference.ini");
  const AppConfig def = parse_config_text("");
  const auto& a = ref.experiment;
  const auto& b = def.experiment;
  CHECK(a.base.n_bs == b.base.n_bs);
  CHECK(a.base.orientation_offset_rad == Approx(b.base.orientation_offset_rad));
  CHECK(a.base.power_budget_w == b.base.power_budget_w);
  CHECK(a.thresholds.peb_pt_bp == b.thresholds.peb_pt_bp);
  CHECK(a.solver.rho_grid == b.solver.rho_grid);
  CHECK(a.realizations == b.realizations);
  CHECK(a.values == b.values);
  CHECK(a.designs == b.designs);
}
