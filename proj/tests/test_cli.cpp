#include "../tools/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "fixtures.hpp"

namespace fs = std::filesystem;
using chapcli::json;
using chapsphere::BodyParams;
using chapsphere::FullState;
using chapsphere::Mat3;
using chapsphere::Rotation;
using chapsphere::Vec3;

namespace {

struct CliOutcome {
  int code = 0;
  std::string text;

  json as_json() const { return json::parse(text); }
};

CliOutcome run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full = {"chapsphere"};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const std::string& a : full) {
    argv.push_back(a.c_str());
  }
  std::ostringstream os;
  CliOutcome out;
  out.code = chapcli::cli_main(static_cast<int>(argv.size()), argv.data(), os);
  out.text = os.str();
  return out;
}

// Per-test scratch files; the directory is shared, the names are not.
fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "chapsphere_cli_tests";
  fs::create_directories(dir);
  return dir;
}

std::string write_config(const std::string& stem, const json& doc) {
  const fs::path path = scratch_dir() / (stem + ".json");
  std::ofstream out(path);
  out << doc.dump(2);
  return path.string();
}

std::string out_path(const std::string& name) {
  return (scratch_dir() / name).string();
}

std::vector<std::vector<double>> read_csv(const std::string& path,
                                          std::string* header) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  if (header) {
    *header = line;
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      row.push_back(std::stod(cell));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

// ---- simulate ---------------------------------------------------------------

TEST(Simulate, RestStateStaysPut) {
  const std::string cfg = write_config(
      "sim_rest",
      {{"initial",
        {{"omega", {0.0, 0.0, 0.0}}, {"position", {0.0, 0.0}}}},
       {"time", {{"start", 0.0}, {"end", 5.0}, {"stride", 0.5}}}});
  const std::string csv = out_path("rest.csv");
  const CliOutcome res =
      run_cli({"simulate", "--config", cfg, "--out", csv});
  ASSERT_EQ(res.code, 0) << res.text;

  const json summary = res.as_json();
  EXPECT_EQ(summary["rows"].get<int>(), 11);
  EXPECT_LE(summary["drift"]["moment"].get<double>(), 1e-12);
  EXPECT_LE(summary["drift"]["energy"].get<double>(), 1e-12);
  EXPECT_LE(summary["drift"]["contact_unit"].get<double>(), 1e-12);
  EXPECT_LE(summary["drift"]["level_form"].get<double>(), 1e-12);

  std::string header;
  const auto rows = read_csv(csv, &header);
  EXPECT_EQ(header, std::string(chapcli::detail::kCsvHeader));
  ASSERT_EQ(rows.size(), 11u);
  for (const auto& row : rows) {
    ASSERT_EQ(row.size(), 26u);
    for (int k = 10; k < 13; ++k) {
      EXPECT_EQ(row[k], 0.0);  // omega stays exactly zero at rest
    }
  }
  EXPECT_DOUBLE_EQ(rows.back()[0], 5.0);
}

TEST(Simulate, ZeroDurationWritesOneRow) {
  const std::string cfg = write_config(
      "sim_zero", {{"scenario", "shr"},
                   {"time", {{"start", 2.0}, {"end", 2.0}}}});
  const std::string csv = out_path("zero.csv");
  const CliOutcome res =
      run_cli({"simulate", "--config", cfg, "--out", csv});
  ASSERT_EQ(res.code, 0) << res.text;
  const json summary = res.as_json();
  EXPECT_EQ(summary["rows"].get<int>(), 1);
  EXPECT_EQ(summary["method"].get<std::string>(), "none");
  const auto rows = read_csv(csv, nullptr);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0][0], 2.0);
}

// Every CSV row carries enough state to recompute its derived columns, and
// the summary's drift maxima are reproducible from the rows alone.
TEST(Simulate, CsvRowsAreSelfConsistent) {
  const std::string cfg = write_config(
      "sim_roundtrip",
      {{"scenario", "shr"},
       {"time", {{"start", 0.0}, {"end", 5.0}, {"stride", 0.05}}}});
  const std::string csv = out_path("roundtrip.csv");
  const CliOutcome res =
      run_cli({"simulate", "--config", cfg, "--out", csv});
  ASSERT_EQ(res.code, 0) << res.text;
  const json summary = res.as_json();

  const auto rows = read_csv(csv, nullptr);
  ASSERT_EQ(rows.size(), summary["rows"].get<std::size_t>());

  const BodyParams body = chaptest::stb();
  const Vec3 j_ref(summary["reference"]["moment"][0].get<double>(),
                   summary["reference"]["moment"][1].get<double>(),
                   summary["reference"]["moment"][2].get<double>());
  const double t_ref = summary["reference"]["energy"].get<double>();

  double moment_drift = 0.0;
  double energy_drift = 0.0;
  double contact_drift = 0.0;
  double form_drift = 0.0;
  for (const auto& row : rows) {
    ASSERT_EQ(row.size(), 26u);
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        m(r, c) = row[1 + 3 * r + c];
      }
    }
    FullState st;
    st.A = Rotation::unchecked(m);
    st.omega = Vec3(row[10], row[11], row[12]);
    st.p = Vec3(row[13], row[14], 0.0);

    const auto me = chapsphere::moment_and_energy(st, body);
    const auto pair = chapsphere::pair_from_full(st.A, me.j);
    const double f = chapsphere::kinetic_forms(pair.u, pair.v, me.T, body).f;

    // The stored derived columns agree with recomputation from the state.
    for (int k = 0; k < 3; ++k) {
      EXPECT_EQ(row[15 + k], pair.u[k]);
      EXPECT_EQ(row[18 + k], pair.v[k]);
      EXPECT_EQ(row[21 + k], me.j[k]);
    }
    EXPECT_EQ(row[24], me.T);
    EXPECT_EQ(row[25], f);

    const double j_scale = std::max(1.0, j_ref.cwiseAbs().maxCoeff());
    moment_drift = std::max(
        moment_drift, (me.j - j_ref).cwiseAbs().maxCoeff() / j_scale);
    energy_drift = std::max(
        energy_drift, std::abs(me.T - t_ref) / std::max(1.0, std::abs(t_ref)));
    contact_drift =
        std::max(contact_drift, std::abs(pair.u.squaredNorm() - 1.0));
    form_drift = std::max(form_drift, std::abs(f));
  }
  EXPECT_NEAR(summary["drift"]["moment"].get<double>(), moment_drift, 1e-13);
  EXPECT_NEAR(summary["drift"]["energy"].get<double>(), energy_drift, 1e-13);
  EXPECT_NEAR(summary["drift"]["contact_unit"].get<double>(), contact_drift,
              1e-13);
  EXPECT_NEAR(summary["drift"]["level_form"].get<double>(), form_drift, 1e-13);
}

// ---- configuration errors ---------------------------------------------------

TEST(Config, MalformedJsonExitsTwo) {
  const fs::path path = scratch_dir() / "broken.json";
  std::ofstream(path) << "{ this is not json";
  const CliOutcome res = run_cli({"simulate", "--config", path.string(),
                                  "--out", out_path("broken.csv")});
  EXPECT_EQ(res.code, 2);
  EXPECT_NE(res.as_json().count("error"), 0u);
}

TEST(Config, UnknownKeyExitsTwo) {
  const std::string cfg =
      write_config("unknown_key", {{"bodyy", json::object()}});
  const CliOutcome res = run_cli({"verify", "--config", cfg});
  EXPECT_EQ(res.code, 2);
  EXPECT_NE(res.as_json()["error"].get<std::string>().find("unknown key"),
            std::string::npos);
}

TEST(Config, MissingFileExitsTwo) {
  const CliOutcome res =
      run_cli({"reduce", "--config", out_path("does_not_exist.json")});
  EXPECT_EQ(res.code, 2);
  EXPECT_NE(res.as_json()["error"].get<std::string>().find("cannot read"),
            std::string::npos);
}

TEST(Config, UnphysicalBodyExitsTwo) {
  const std::string cfg = write_config(
      "bad_body", {{"body", {{"inertia", {1.0, -2.0, 3.0}}}}});
  const CliOutcome res = run_cli({"reduce", "--config", cfg});
  EXPECT_EQ(res.code, 2);
}

TEST(Cli, HelpExitsZero) {
  const CliOutcome res = run_cli({"--help"});
  EXPECT_EQ(res.code, 0);
  EXPECT_NE(res.text.find("simulate"), std::string::npos);
  EXPECT_NE(res.text.find("verify"), std::string::npos);
  EXPECT_NE(res.text.find("reduce"), std::string::npos);
}

TEST(Cli, MissingSubcommandExitsTwo) {
  const CliOutcome res = run_cli({});
  EXPECT_EQ(res.code, 2);
}

// ---- verify -----------------------------------------------------------------

TEST(Verify, ReferenceLevelPassesAllChecks) {
  const std::string cfg = write_config(
      "verify_shr", {{"scenario", "shr"},
                     {"time", {{"start", 0.0}, {"end", 5.0}, {"stride", 0.5}}}});
  const CliOutcome res = run_cli({"verify", "--config", cfg});
  ASSERT_EQ(res.code, 0) << res.text;
  const json report = res.as_json();
  EXPECT_TRUE(report["passed"].get<bool>());
  EXPECT_EQ(report["checks"].size(), 16u);
  for (const auto& check : report["checks"]) {
    EXPECT_TRUE(check["pass"].get<bool>())
        << check["name"].get<std::string>() << " measured "
        << check["measured"].get<double>();
  }
  EXPECT_EQ(report.count("skipped"), 0u);
}

TEST(Verify, ZeroToleranceFailsWithExitOne) {
  const std::string cfg = write_config(
      "verify_zero_tol",
      {{"scenario", "shr"},
       {"group", "invariants"},
       {"tolerances", {{"*", 0.0}}},
       {"time", {{"start", 0.0}, {"end", 1.0}, {"stride", 0.5}}}});
  const CliOutcome res = run_cli({"verify", "--config", cfg});
  EXPECT_EQ(res.code, 1);
  const json report = res.as_json();
  EXPECT_FALSE(report["passed"].get<bool>());
}

TEST(Verify, NamedToleranceBeatsWildcard) {
  // Loosening one named check while "*" fails everything isolates the name
  // lookup order: named, then wildcard, then the built-in default.
  const std::string cfg = write_config(
      "verify_named_tol",
      {{"scenario", "shr"},
       {"group", "invariants"},
       {"tolerances", {{"*", 0.0}, {"moment-drift", 1.0}}},
       {"time", {{"start", 0.0}, {"end", 1.0}, {"stride", 0.5}}}});
  const CliOutcome res = run_cli({"verify", "--config", cfg});
  EXPECT_EQ(res.code, 1);
  for (const auto& check : res.as_json()["checks"]) {
    const bool is_moment = check["name"].get<std::string>() == "moment-drift";
    EXPECT_EQ(check["pass"].get<bool>(), is_moment);
  }
}

TEST(Verify, UnknownGroupExitsTwo) {
  const std::string cfg = write_config("verify_bad_group", {{"group", "nope"}});
  const CliOutcome res = run_cli({"verify", "--config", cfg});
  EXPECT_EQ(res.code, 2);
  EXPECT_NE(res.as_json()["error"].get<std::string>().find("unknown check"),
            std::string::npos);
}

TEST(Verify, HyperelGroupNeedsHorizontalMoment) {
  const std::string cfg = write_config(
      "verify_hyperel_tilted", {{"scenario", "tilted"}, {"group", "hyperel"}});
  const CliOutcome res = run_cli({"verify", "--config", cfg});
  EXPECT_EQ(res.code, 2);
  EXPECT_NE(res.as_json()["error"].get<std::string>().find("horizontal"),
            std::string::npos);
}

TEST(Verify, TiltedMomentSkipsHyperelChecks) {
  const std::string cfg = write_config(
      "verify_tilted",
      {{"scenario", "tilted"},
       {"time", {{"start", 0.0}, {"end", 1.0}, {"stride", 0.5}}}});
  const CliOutcome res = run_cli({"verify", "--config", cfg});
  ASSERT_EQ(res.code, 0) << res.text;
  const json report = res.as_json();
  EXPECT_EQ(report["checks"].size(), 10u);
  EXPECT_NE(report.count("skipped"), 0u);
  for (const auto& check : report["checks"]) {
    EXPECT_NE(check["group"].get<std::string>(), "hyperel");
  }
}

TEST(Verify, ParallelMatchesSerial) {
  const std::string cfg = write_config(
      "verify_par", {{"scenario", "shr"},
                     {"time", {{"start", 0.0}, {"end", 1.0}, {"stride", 0.5}}}});
  const CliOutcome serial = run_cli({"verify", "--config", cfg});
  const CliOutcome parallel =
      run_cli({"verify", "--config", cfg, "--parallel"});
  ASSERT_EQ(serial.code, 0) << serial.text;
  ASSERT_EQ(parallel.code, 0) << parallel.text;
  const json a = serial.as_json();
  const json b = parallel.as_json();
  ASSERT_EQ(a["checks"].size(), b["checks"].size());
  for (std::size_t k = 0; k < a["checks"].size(); ++k) {
    EXPECT_EQ(a["checks"][k]["name"], b["checks"][k]["name"]);
    EXPECT_EQ(a["checks"][k]["measured"].get<double>(),
              b["checks"][k]["measured"].get<double>());
  }
}

TEST(Verify, SeedFlagBeatsConfigSeed) {
  const std::string cfg = write_config(
      "verify_seed", {{"scenario", "shr"}, {"group", "geometry"}, {"seed", 7}});
  const CliOutcome from_config = run_cli({"verify", "--config", cfg});
  EXPECT_EQ(from_config.as_json()["seed"].get<long>(), 7);
  const CliOutcome from_flag =
      run_cli({"verify", "--config", cfg, "--seed", "9"});
  EXPECT_EQ(from_flag.as_json()["seed"].get<long>(), 9);
}

TEST(Verify, WritesReportFile) {
  const std::string cfg = write_config(
      "verify_out", {{"scenario", "shr"}, {"group", "geometry"}});
  const std::string path = out_path("verify_report.json");
  const CliOutcome res = run_cli({"verify", "--config", cfg, "--out", path});
  ASSERT_EQ(res.code, 0) << res.text;
  std::ifstream in(path);
  ASSERT_TRUE(in.good());
  const json file_report = json::parse(in);
  EXPECT_EQ(file_report, res.as_json());
}

// ---- reduce -----------------------------------------------------------------

TEST(Reduce, ReferenceLevelIsAlreadyHorizontal) {
  const std::string cfg = write_config("reduce_shr", {{"scenario", "shr"}});
  const CliOutcome res = run_cli({"reduce", "--config", cfg});
  ASSERT_EQ(res.code, 0) << res.text;
  const json report = res.as_json();
  EXPECT_TRUE(report["reduction"]["is_identity"].get<bool>());
  EXPECT_TRUE(report["reduction"]["inertia_physical"].get<bool>());
  EXPECT_NEAR(report["pencil"]["roots"][0].get<double>(), 0.4, 1e-12);
  EXPECT_NEAR(report["pencil"]["roots"][1].get<double>(), 1.0, 1e-12);
  ASSERT_FALSE(report["curve"].is_null());
  EXPECT_NEAR(report["curve"]["c_squared"].get<double>(), 2.4, 1e-12);
  EXPECT_NEAR(report["curve"]["d_squared"].get<double>(), 1.44, 1e-12);
  EXPECT_NEAR(report["curve"]["gamma"].get<double>(), 2.0 / 3.0, 1e-12);
}

TEST(Reduce, TiltedLevelReportsUnphysicalReduction) {
  const std::string cfg =
      write_config("reduce_tilted", {{"scenario", "tilted"}});
  const CliOutcome res = run_cli({"reduce", "--config", cfg});
  ASSERT_EQ(res.code, 0) << res.text;
  const json report = res.as_json();
  EXPECT_FALSE(report["reduction"]["is_identity"].get<bool>());
  EXPECT_FALSE(report["reduction"]["inertia_physical"].get<bool>());
  EXPECT_NEAR(report["reduction"]["t_reduced"].get<double>(),
              2.7807764064044154, 1e-9);
  EXPECT_NEAR(report["reduction"]["rho_reduced"].get<double>(),
              report["reduction"]["t_reduced"].get<double>(), 1e-12);
  EXPECT_TRUE(report["curve"].is_null());
  EXPECT_NE(report["curve_note"].get<std::string>().find("not positive"),
            std::string::npos);
}

TEST(Reduce, VerticalMomentExitsOne) {
  const std::string cfg = write_config(
      "reduce_vertical", {{"level", {{"moment", {0.0, 0.0, 3.0}}}}});
  const CliOutcome res = run_cli({"reduce", "--config", cfg});
  EXPECT_EQ(res.code, 1);
  EXPECT_NE(res.as_json()["error"].get<std::string>().find("vertical"),
            std::string::npos);
}
