#pragma once

// Command-line front end: JSON run configuration, trajectory simulation with
// CSV output and a drift summary, a grouped verification harness with
// pass/fail exit status, and emission of the horizontal reduction, pencil,
// and spectral-curve data for an energy-moment level.
//
// Exit codes: 0 success, 1 check or precondition failure, 2 configuration
// error, 3 numerical failure.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <chapsphere/fields.hpp>
#include <chapsphere/geom.hpp>
#include <chapsphere/hyperel.hpp>
#include <chapsphere/integrate.hpp>
#include <chapsphere/model.hpp>
#include <chapsphere/reduction.hpp>
#include <chapsphere/vecrot.hpp>

namespace chapcli {

using nlohmann::json;

// Configuration problems: unreadable file, malformed JSON, unknown keys,
// unphysical bodies, empty levels.  Mapped to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  chapsphere::BodyParams body{chapsphere::Vec3(1.0, 2.0, 3.0), 1.0, 1.0};
  chapsphere::Vec3 moment{2.0, 0.0, 0.0};
  double energy = 0.8;
  std::optional<chapsphere::FullState> initial;
  double t_start = 0.0;
  double t_end = 10.0;
  double stride = 0.1;
  chapsphere::IntegratorConfig integrator;
  std::string group = "all";
  std::map<std::string, double> tolerances;
  std::optional<long> seed;
  std::string scenario = "custom";
};

// ---------------------------------------------------------------------------
// JSON helpers.

namespace detail {

inline double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) {
    throw ConfigError(where + ": expected a number");
  }
  return v.get<double>();
}

inline chapsphere::Vec3 as_vec3(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 3) {
    throw ConfigError(where + ": expected an array of 3 numbers");
  }
  chapsphere::Vec3 out;
  for (int k = 0; k < 3; ++k) {
    out[k] = as_number(v[k], where);
  }
  return out;
}

inline void reject_unknown_keys(const json& obj,
                                const std::vector<std::string>& known,
                                const std::string& where) {
  for (const auto& item : obj.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
    }
  }
}

inline json json_vec(const chapsphere::Vec3& v) {
  return json::array({v[0], v[1], v[2]});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config parsing.

inline RunConfig parse_config(const json& doc) {
  if (!doc.is_object()) {
    throw ConfigError("config: top level must be a JSON object");
  }
  detail::reject_unknown_keys(
      doc,
      {"scenario", "body", "level", "initial", "time", "integrator", "group",
       "tolerances", "seed"},
      "config");

  RunConfig cfg;
  cfg.scenario = doc.value("scenario", std::string("custom"));
  if (cfg.scenario == "shr") {
    cfg.moment = chapsphere::Vec3(2.0, 0.0, 0.0);
    cfg.energy = 0.8;
  } else if (cfg.scenario == "tilted") {
    cfg.moment = chapsphere::Vec3(2.0, 0.0, 1.0);
    cfg.energy = 1.0;
  } else if (cfg.scenario != "custom") {
    throw ConfigError("config: unrecognized scenario \"" + cfg.scenario +
                      "\" (expected custom, shr, or tilted)");
  }

  if (doc.contains("body")) {
    const json& b = doc["body"];
    detail::reject_unknown_keys(b, {"inertia", "mass", "radius"}, "body");
    const chapsphere::Vec3 inertia =
        b.contains("inertia") ? detail::as_vec3(b["inertia"], "body.inertia")
                              : chapsphere::Vec3(1.0, 2.0, 3.0);
    const double mass =
        b.contains("mass") ? detail::as_number(b["mass"], "body.mass") : 1.0;
    const double radius =
        b.contains("radius") ? detail::as_number(b["radius"], "body.radius")
                             : 1.0;
    try {
      cfg.body = chapsphere::BodyParams(inertia, mass, radius);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("body: ") + e.what());
    }
  }

  if (doc.contains("level")) {
    const json& l = doc["level"];
    detail::reject_unknown_keys(l, {"moment", "energy"}, "level");
    if (l.contains("moment")) {
      cfg.moment = detail::as_vec3(l["moment"], "level.moment");
    }
    if (l.contains("energy")) {
      cfg.energy = detail::as_number(l["energy"], "level.energy");
    }
  }

  if (doc.contains("initial")) {
    const json& init = doc["initial"];
    detail::reject_unknown_keys(init, {"rotation", "omega", "position"},
                                "initial");
    if (!init.contains("omega")) {
      throw ConfigError("initial: omega is required");
    }
    chapsphere::Rotation rot = chapsphere::Rotation::identity();
    if (init.contains("rotation")) {
      const json& r = init["rotation"];
      if (r.is_array() && r.size() == 9) {
        chapsphere::Mat3 m;
        for (int row = 0; row < 3; ++row) {
          for (int col = 0; col < 3; ++col) {
            m(row, col) = detail::as_number(r[3 * row + col], "initial.rotation");
          }
        }
        try {
          rot = chapsphere::orthonormalize(m);
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("initial.rotation: ") + e.what());
        }
      } else if (r.is_object()) {
        detail::reject_unknown_keys(r, {"axis", "angle"}, "initial.rotation");
        const chapsphere::Vec3 axis =
            detail::as_vec3(r.at("axis"), "initial.rotation.axis");
        const double angle =
            detail::as_number(r.at("angle"), "initial.rotation.angle");
        if (!(axis.norm() > 0.0)) {
          throw ConfigError("initial.rotation.axis: must be nonzero");
        }
        rot = chapsphere::exp_rot(axis.normalized(), angle);
      } else {
        throw ConfigError(
            "initial.rotation: expected 9 row-major numbers or {axis, angle}");
      }
    }
    const chapsphere::Vec3 omega =
        detail::as_vec3(init["omega"], "initial.omega");
    chapsphere::Vec3 p = chapsphere::Vec3::Zero();
    if (init.contains("position")) {
      const json& pos = init["position"];
      if (!pos.is_array() || pos.size() != 2) {
        throw ConfigError("initial.position: expected [px, py]");
      }
      p[0] = detail::as_number(pos[0], "initial.position");
      p[1] = detail::as_number(pos[1], "initial.position");
    }
    cfg.initial = chapsphere::FullState{rot, omega, p};
  }

  if (doc.contains("time")) {
    const json& t = doc["time"];
    detail::reject_unknown_keys(t, {"start", "end", "stride"}, "time");
    if (t.contains("start")) {
      cfg.t_start = detail::as_number(t["start"], "time.start");
    }
    if (t.contains("end")) {
      cfg.t_end = detail::as_number(t["end"], "time.end");
    }
    if (t.contains("stride")) {
      cfg.stride = detail::as_number(t["stride"], "time.stride");
    }
  }
  if (cfg.t_end < cfg.t_start) {
    throw ConfigError("time: end must not precede start");
  }
  if (cfg.t_end > cfg.t_start && !(cfg.stride > 0.0)) {
    throw ConfigError("time: stride must be positive");
  }

  if (doc.contains("integrator")) {
    const json& ig = doc["integrator"];
    detail::reject_unknown_keys(
        ig, {"method", "abs_tol", "rel_tol", "fixed_step", "max_steps",
             "projection_interval"},
        "integrator");
    if (ig.contains("method")) {
      const std::string method = ig["method"].get<std::string>();
      if (method == "adaptive") {
        cfg.integrator.method = chapsphere::StepMethod::kEmbeddedAdaptive;
      } else if (method == "rk4") {
        cfg.integrator.method = chapsphere::StepMethod::kFixedRk4;
      } else {
        throw ConfigError("integrator.method: expected adaptive or rk4");
      }
    }
    if (ig.contains("abs_tol")) {
      cfg.integrator.abs_tol = detail::as_number(ig["abs_tol"], "integrator");
    }
    if (ig.contains("rel_tol")) {
      cfg.integrator.rel_tol = detail::as_number(ig["rel_tol"], "integrator");
    }
    if (ig.contains("fixed_step")) {
      cfg.integrator.fixed_step =
          detail::as_number(ig["fixed_step"], "integrator");
    }
    if (ig.contains("max_steps")) {
      cfg.integrator.max_steps =
          static_cast<long>(detail::as_number(ig["max_steps"], "integrator"));
    }
    if (ig.contains("projection_interval")) {
      cfg.integrator.projection_interval = static_cast<int>(
          detail::as_number(ig["projection_interval"], "integrator"));
    }
  }

  cfg.group = doc.value("group", std::string("all"));

  if (doc.contains("tolerances")) {
    const json& tols = doc["tolerances"];
    if (!tols.is_object()) {
      throw ConfigError("tolerances: expected an object of numbers");
    }
    for (const auto& item : tols.items()) {
      cfg.tolerances[item.key()] =
          detail::as_number(item.value(), "tolerances." + item.key());
    }
  }

  if (doc.contains("seed")) {
    cfg.seed = static_cast<long>(detail::as_number(doc["seed"], "seed"));
  }
  return cfg;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("config: cannot read " + path);
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Shared numerics.

namespace detail {

inline std::mt19937_64 seeded_engine(long seed, unsigned long salt) {
  return std::mt19937_64(static_cast<unsigned long long>(seed) * 0x9e3779b9ull +
                         salt);
}

// The initial state of a run: explicit when the config gives one, otherwise
// drawn from the configured level.
inline chapsphere::FullState initial_state(const RunConfig& cfg, long seed) {
  if (cfg.initial) {
    return *cfg.initial;
  }
  auto gen = seeded_engine(seed, 1);
  try {
    const chapsphere::PairState s = chapsphere::sample_pair_on_level(
        cfg.moment, cfg.energy, cfg.body, gen);
    return chapsphere::full_state_from_pair(s, cfg.moment, cfg.body);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("level: ") + e.what());
  }
}

inline void append_value(std::string& row, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.16e", v);
  if (!row.empty()) {
    row.push_back(',');
  }
  row += buf;
}

constexpr const char* kCsvHeader =
    "t,a11,a12,a13,a21,a22,a23,a31,a32,a33,w1,w2,w3,px,py,"
    "u1,u2,u3,v1,v2,v3,j1,j2,j3,T,f";

inline std::string csv_row(double t, const chapsphere::FullState& st,
                           const chapsphere::BodyParams& body) {
  // Every column is a function of the row's own (A, omega, p): u, v, j, T
  // come from the instantaneous state, and f is the kinetic identity residual
  // of those same values, so a reader can recompute the full row from the
  // state columns alone.
  const chapsphere::MomentEnergy me = chapsphere::moment_and_energy(st, body);
  const chapsphere::PairState pair = chapsphere::pair_from_full(st.A, me.j);
  const double f = chapsphere::kinetic_forms(pair.u, pair.v, me.T, body).f;

  std::string row;
  append_value(row, t);
  const chapsphere::Mat3 m = st.A.matrix();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      append_value(row, m(r, c));
    }
  }
  for (int k = 0; k < 3; ++k) append_value(row, st.omega[k]);
  append_value(row, st.p[0]);
  append_value(row, st.p[1]);
  for (int k = 0; k < 3; ++k) append_value(row, pair.u[k]);
  for (int k = 0; k < 3; ++k) append_value(row, pair.v[k]);
  for (int k = 0; k < 3; ++k) append_value(row, me.j[k]);
  append_value(row, me.T);
  append_value(row, f);
  return row;
}

struct DriftMaxima {
  double moment = 0.0;       // componentwise, relative to max(1, |j| at start)
  double energy = 0.0;       // relative to max(1, |T| at start)
  double contact_unit = 0.0; // |<u,u> - 1|
  double level_form = 0.0;   // kinetic identity residual of the row itself
};

inline void update_drift(DriftMaxima& d, const chapsphere::FullState& st,
                         const chapsphere::BodyParams& body,
                         const chapsphere::Vec3& j_ref, double t_ref) {
  const chapsphere::MomentEnergy me = chapsphere::moment_and_energy(st, body);
  const double j_scale = std::max(1.0, j_ref.cwiseAbs().maxCoeff());
  const double t_scale = std::max(1.0, std::abs(t_ref));
  d.moment = std::max(d.moment,
                      (me.j - j_ref).cwiseAbs().maxCoeff() / j_scale);
  d.energy = std::max(d.energy, std::abs(me.T - t_ref) / t_scale);
  const chapsphere::PairState pair = chapsphere::pair_from_full(st.A, me.j);
  d.contact_unit =
      std::max(d.contact_unit, std::abs(pair.u.squaredNorm() - 1.0));
  d.level_form = std::max(
      d.level_form,
      std::abs(chapsphere::kinetic_forms(pair.u, pair.v, me.T, body).f));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate: integrate the full system and emit a CSV trajectory plus a JSON
// summary of conservation drift.

inline int cmd_simulate(const RunConfig& cfg, long seed,
                        const std::string& out_path, std::ostream& os) {
  const auto wall_start = std::chrono::steady_clock::now();
  const chapsphere::FullState start = detail::initial_state(cfg, seed);
  const chapsphere::MomentEnergy ref =
      chapsphere::moment_and_energy(start, cfg.body);

  std::vector<double> times;
  for (double t = cfg.t_start; t < cfg.t_end - 1e-12 * std::max(1.0, cfg.t_end);
       t += cfg.stride) {
    times.push_back(t);
  }
  times.push_back(cfg.t_end);

  std::ofstream csv(out_path);
  if (!csv) {
    throw ConfigError("out: cannot write " + out_path);
  }
  csv << detail::kCsvHeader << "\n";

  detail::DriftMaxima drift;
  std::string method = "none";
  double achieved = 0.0;
  if (cfg.t_end == cfg.t_start) {
    csv << detail::csv_row(cfg.t_start, start, cfg.body) << "\n";
    detail::update_drift(drift, start, cfg.body, ref.j, ref.T);
  } else {
    chapsphere::Trajectory traj;
    try {
      traj = chapsphere::integrate(chapsphere::make_full_field(cfg.body),
                                   chapsphere::pack_full(start), cfg.t_start,
                                   cfg.t_end, cfg.integrator);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("integrator: ") + e.what());
    }
    method = traj.method;
    achieved = traj.achieved_tolerance;
    for (const double t : times) {
      const chapsphere::FullState st =
          chapsphere::unpack_full(chapsphere::interpolate(traj, t));
      csv << detail::csv_row(t, st, cfg.body) << "\n";
      detail::update_drift(drift, st, cfg.body, ref.j, ref.T);
    }
  }
  csv.close();

  const double runtime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    wall_start)
          .count();
  const json summary = {
      {"csv", out_path},
      {"rows", times.size()},
      {"method", method},
      {"achieved_tolerance", achieved},
      {"time", {{"start", cfg.t_start}, {"end", cfg.t_end}, {"stride", cfg.stride}}},
      {"reference", {{"moment", detail::json_vec(ref.j)}, {"energy", ref.T}}},
      {"drift",
       {{"moment", drift.moment},
        {"energy", drift.energy},
        {"contact_unit", drift.contact_unit},
        {"level_form", drift.level_form}}},
      {"runtime_seconds", runtime},
  };
  os << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// verify: named checks with per-check tolerances, grouped, optionally fanned
// out across threads.  Exit 0 iff every selected check passes.

namespace detail {

struct CheckResult {
  std::string name;
  std::string group;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct CheckSpec {
  std::string name;
  std::string group;
  double default_tolerance;
  unsigned long salt;  // decouples the random draws of distinct checks
  std::function<double(const RunConfig&, long)> run;
};

// Conservation drift of one quantity along a configured orbit.
inline DriftMaxima conservation_drift(const RunConfig& cfg, long seed,
                                      unsigned long salt) {
  auto gen = seeded_engine(seed, salt);
  chapsphere::PairState s;
  try {
    s = chapsphere::sample_pair_on_level(cfg.moment, cfg.energy, cfg.body, gen);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("level: ") + e.what());
  }
  const chapsphere::FullState start =
      chapsphere::full_state_from_pair(s, cfg.moment, cfg.body);
  const chapsphere::MomentEnergy ref =
      chapsphere::moment_and_energy(start, cfg.body);
  const double t1 = std::max(cfg.t_end, cfg.t_start + 1.0);
  const auto traj = chapsphere::integrate(
      chapsphere::make_full_field(cfg.body), chapsphere::pack_full(start),
      cfg.t_start, t1, cfg.integrator);
  DriftMaxima drift;
  const int samples = 200;
  for (int k = 0; k <= samples; ++k) {
    const double t = cfg.t_start + (t1 - cfg.t_start) * k / samples;
    update_drift(drift,
                 chapsphere::unpack_full(chapsphere::interpolate(traj, t)),
                 cfg.body, ref.j, ref.T);
  }
  return drift;
}

inline chapsphere::PairState sampled_pair(const RunConfig& cfg,
                                          std::mt19937_64& gen) {
  try {
    return chapsphere::sample_pair_on_level(cfg.moment, cfg.energy, cfg.body,
                                            gen);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("level: ") + e.what());
  }
}

inline chapsphere::ExtendedState sampled_extended(const RunConfig& cfg,
                                                  std::mt19937_64& gen) {
  const chapsphere::PairState s = sampled_pair(cfg, gen);
  const int sign = (gen() & 1ull) ? +1 : -1;
  return chapsphere::extend(s, cfg.energy, cfg.body, sign);
}

inline double check_divergence(const RunConfig& cfg, long seed,
                               unsigned long salt, bool second_realization) {
  auto gen = seeded_engine(seed, salt);
  const chapsphere::BodyParams body = cfg.body;
  const auto weight = [body](const chapsphere::FlatVec& y) {
    const chapsphere::Vec3 u = y.segment<3>(0);
    return 1.0 / std::sqrt(1.0 / body.rho() - u.dot(body.apply_j(u)));
  };
  const chapsphere::FieldEval field =
      second_realization ? chapsphere::make_second_pair_field(body)
                         : chapsphere::make_pair_field(body);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const chapsphere::FlatVec y =
        chapsphere::pack_pair(sampled_pair(cfg, gen));
    worst = std::max(worst,
                     std::abs(chapsphere::divergence_probe(field, y, weight,
                                                           1e-5)));
  }
  return worst;
}

inline double check_flow_commutation(const RunConfig& cfg, long seed,
                                     unsigned long salt) {
  auto gen = seeded_engine(seed, salt);
  chapsphere::IntegratorConfig tight;
  tight.abs_tol = 1e-12;
  tight.rel_tol = 1e-12;
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const chapsphere::ExtendedState e = sampled_extended(cfg, gen);
    worst = std::max(
        worst, chapsphere::commutation_defect(e, 0.5, 0.5, cfg.body, tight));
  }
  return worst;
}

inline double check_bracket_defect(const RunConfig& cfg, long seed,
                                   unsigned long salt) {
  auto gen = seeded_engine(seed, salt);
  const chapsphere::FieldEval xi = chapsphere::make_xi_ext_field(cfg.body);
  const chapsphere::FieldEval eta = chapsphere::make_eta_ext_field(cfg.body);
  const double eps = 1e-6;
  const auto directional = [eps](const chapsphere::FieldEval& f,
                                 const chapsphere::FlatVec& y,
                                 const chapsphere::FlatVec& w) {
    return ((f.deriv(y + eps * w) - f.deriv(y - eps * w)) / (2.0 * eps))
        .eval();
  };
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const chapsphere::FlatVec y =
        chapsphere::pack_ext(sampled_extended(cfg, gen));
    const chapsphere::FlatVec xi_y = xi.deriv(y);
    const chapsphere::FlatVec eta_y = eta.deriv(y);
    const chapsphere::FlatVec bracket =
        directional(eta, y, xi_y) - directional(xi, y, eta_y);
    worst = std::max(worst, bracket.cwiseAbs().maxCoeff());
  }
  return worst;
}

// Hyperelliptic checks share a reparametrized orbit and its coordinate path.
struct HyperelRun {
  chapsphere::CurveData curve;
  chapsphere::EllipticPath path;
};

inline HyperelRun hyperel_run(const RunConfig& cfg, long seed,
                              unsigned long salt) {
  HyperelRun run;
  run.curve = chapsphere::curve_data(cfg.body, cfg.moment, cfg.energy);
  auto gen = seeded_engine(seed, salt);
  const chapsphere::PairState start = sampled_pair(cfg, gen);
  chapsphere::IntegratorConfig fine;
  fine.method = chapsphere::StepMethod::kFixedRk4;
  fine.fixed_step = 2e-4;
  const auto traj = chapsphere::integrate(
      chapsphere::make_xi_pair_field(cfg.body), chapsphere::pack_pair(start),
      0.0, 5.0, fine);
  run.path = chapsphere::elliptic_path(traj, run.curve, 2e-4);
  return run;
}

inline double check_elliptic_round_trip(const RunConfig& cfg, long seed,
                                        unsigned long salt) {
  auto gen = seeded_engine(seed, salt);
  const chapsphere::Vec3 a = cfg.body.inertia.cwiseInverse();
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  int done = 0;
  while (done < 100) {
    chapsphere::Vec3 u(normal(gen), normal(gen), normal(gen));
    if (u.norm() < 1e-6) {
      continue;
    }
    u.normalize();
    const chapsphere::Vec3 x = a.cwiseSqrt().cwiseProduct(u);
    const auto [l2, l3] = chapsphere::elliptic_from_x(x, a);
    if (l3 - l2 < 1e-6) {
      continue;  // too close to an umbilic point for a stable round trip
    }
    const chapsphere::Vec3 y = chapsphere::y_from_elliptic(l2, l3, a);
    worst = std::max(worst,
                     (y - x.cwiseProduct(x)).cwiseAbs().maxCoeff());
    ++done;
  }
  return worst;
}

inline double check_velocity_identities(const RunConfig& cfg, long seed,
                                        unsigned long salt) {
  auto gen = seeded_engine(seed, salt);
  const chapsphere::Vec3 a = cfg.body.inertia.cwiseInverse();
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  int done = 0;
  while (done < 100) {
    chapsphere::Vec3 u(normal(gen), normal(gen), normal(gen));
    if (u.norm() < 1e-6) {
      continue;
    }
    u.normalize();
    const chapsphere::Vec3 x = a.cwiseSqrt().cwiseProduct(u);
    const auto [l2, l3] = chapsphere::elliptic_from_x(x, a);
    if (l3 - l2 < 1e-4) {
      continue;
    }
    const chapsphere::Vec3 w(normal(gen), normal(gen), normal(gen));
    const chapsphere::Vec3 grad = 2.0 * x.cwiseQuotient(a);
    const chapsphere::Vec3 xdot =
        w - (w.dot(grad) / grad.squaredNorm()) * grad;
    const auto res = chapsphere::velocity_identities(x, xdot, a);
    worst = std::max({worst, std::abs(res.speed), std::abs(res.weighted),
                      std::abs(res.cyclic)});
    ++done;
  }
  return worst;
}

inline double check_cxc_residual(const RunConfig& cfg, long seed,
                                 unsigned long salt) {
  const HyperelRun run = hyperel_run(cfg, seed, salt);
  const auto& path = run.path;
  double worst = 0.0;
  for (std::size_t k = 1; k + 1 < path.pts.size(); ++k) {
    const double dt = path.tau[k + 1] - path.tau[k - 1];
    const auto rate = chapsphere::cxc_field(path.pts[k], run.curve.c, run.curve);
    const double fd2 = (path.pts[k + 1].l2 - path.pts[k - 1].l2) / dt;
    const double fd3 = (path.pts[k + 1].l3 - path.pts[k - 1].l3) / dt;
    worst = std::max({worst, std::abs(fd2 - rate.first),
                      std::abs(fd3 - rate.second)});
  }
  return worst;
}

inline chapsphere::AbelIncrements abel_for(const RunConfig& cfg, long seed,
                                           unsigned long salt) {
  const HyperelRun run = hyperel_run(cfg, seed, salt);
  return chapsphere::abel_increments(run.path, run.curve);
}

inline double check_geometry_tangency(const RunConfig& cfg, long seed,
                                      unsigned long salt) {
  auto gen = seeded_engine(seed, salt);
  const chapsphere::TangencyData td =
      chapsphere::tangency_data(cfg.body, cfg.moment, cfg.energy);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const chapsphere::FullState st = chapsphere::full_state_from_pair(
        sampled_pair(cfg, gen), cfg.moment, cfg.body);
    for (const auto& root : td.roots) {
      if (!root.is_real) {
        continue;
      }
      worst = std::max(worst,
                       std::abs(chapsphere::tangency_residual(
                           st.A, root.alpha, cfg.body, cfg.moment,
                           cfg.energy)));
    }
  }
  return worst;
}

inline double check_geometry_orthogonality(const RunConfig& cfg, long seed,
                                           unsigned long salt) {
  auto gen = seeded_engine(seed, salt);
  const chapsphere::TangencyData td =
      chapsphere::tangency_data(cfg.body, cfg.moment, cfg.energy);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const chapsphere::PairState s = sampled_pair(cfg, gen);
    const chapsphere::Vec3 d1 = td.roots[0].direction(s.u, s.v);
    const chapsphere::Vec3 d2 = td.roots[1].direction(s.u, s.v);
    const double scale = d1.norm() * d2.norm();
    if (scale < 1e-12) {
      continue;  // a degenerate direction (horizontal constant root)
    }
    worst = std::max(worst, std::abs(d1.dot(d2)) / scale);
  }
  return worst;
}

inline bool is_reference_horizontal_level(const RunConfig& cfg) {
  return (cfg.body.inertia - chapsphere::Vec3(1.0, 2.0, 3.0)).norm() < 1e-12 &&
         std::abs(cfg.body.rho() - 1.0) < 1e-12 &&
         (cfg.moment - chapsphere::Vec3(2.0, 0.0, 0.0)).norm() < 1e-12 &&
         std::abs(cfg.energy - 0.8) < 1e-12;
}

inline std::vector<CheckSpec> check_registry(const RunConfig& cfg) {
  std::vector<CheckSpec> reg;
  reg.push_back({"moment-drift", "invariants", 1e-8, 100,
                 [](const RunConfig& c, long s) {
                   return conservation_drift(c, s, 100).moment;
                 }});
  reg.push_back({"energy-drift", "invariants", 1e-8, 100,
                 [](const RunConfig& c, long s) {
                   return conservation_drift(c, s, 100).energy;
                 }});
  reg.push_back({"contact-unit-drift", "invariants", 1e-10, 100,
                 [](const RunConfig& c, long s) {
                   return conservation_drift(c, s, 100).contact_unit;
                 }});
  reg.push_back({"level-form-drift", "invariants", 1e-10, 100,
                 [](const RunConfig& c, long s) {
                   return conservation_drift(c, s, 100).level_form;
                 }});

  reg.push_back({"xi-divergence", "measure", 1e-6, 200,
                 [](const RunConfig& c, long s) {
                   return check_divergence(c, s, 200, false);
                 }});
  reg.push_back({"eta-divergence", "measure", 1e-6, 201,
                 [](const RunConfig& c, long s) {
                   return check_divergence(c, s, 201, true);
                 }});

  reg.push_back({"flow-commutation", "commute", 1e-6, 300,
                 [](const RunConfig& c, long s) {
                   return check_flow_commutation(c, s, 300);
                 }});
  reg.push_back({"bracket-defect", "commute", 1e-5, 301,
                 [](const RunConfig& c, long s) {
                   return check_bracket_defect(c, s, 301);
                 }});

  const bool horizontal =
      std::abs(cfg.moment.z()) <= 1e-12 * cfg.moment.norm();
  if (horizontal) {
    reg.push_back({"elliptic-round-trip", "hyperel", 1e-10, 400,
                   [](const RunConfig& c, long s) {
                     return check_elliptic_round_trip(c, s, 400);
                   }});
    reg.push_back({"velocity-identities", "hyperel", 1e-9, 401,
                   [](const RunConfig& c, long s) {
                     return check_velocity_identities(c, s, 401);
                   }});
    reg.push_back({"cxc-residual", "hyperel", 1e-6, 402,
                   [](const RunConfig& c, long s) {
                     return check_cxc_residual(c, s, 402);
                   }});
    reg.push_back({"abel-holomorphic-drift", "hyperel", 1e-6, 403,
                   [](const RunConfig& c, long s) {
                     return std::abs(abel_for(c, s, 403).drift1);
                   }});
    reg.push_back({"abel-linear-deviation", "hyperel", 1e-6, 404,
                   [](const RunConfig& c, long s) {
                     return std::abs(abel_for(c, s, 404).deviation0);
                   }});
    if (is_reference_horizontal_level(cfg)) {
      reg.push_back({"speed-constant-reference", "hyperel", 1e-12, 405,
                     [](const RunConfig& c, long) {
                       const auto curve =
                           chapsphere::curve_data(c.body, c.moment, c.energy);
                       return std::abs(curve.c * curve.c - 2.4);
                     }});
    }
  }

  reg.push_back({"tangency-residual", "geometry", 1e-8, 500,
                 [](const RunConfig& c, long s) {
                   return check_geometry_tangency(c, s, 500);
                 }});
  reg.push_back({"direction-orthogonality", "geometry", 1e-12, 501,
                 [](const RunConfig& c, long s) {
                   return check_geometry_orthogonality(c, s, 501);
                 }});
  return reg;
}

}  // namespace detail

inline int cmd_verify(const RunConfig& cfg, long seed, bool parallel,
                      const std::string& out_path, std::ostream& os) {
  static const std::vector<std::string> kGroups = {
      "invariants", "measure", "commute", "hyperel", "geometry", "all"};
  if (std::find(kGroups.begin(), kGroups.end(), cfg.group) == kGroups.end()) {
    throw ConfigError("group: unknown check group \"" + cfg.group +
                      "\" (expected invariants, measure, commute, hyperel, "
                      "geometry, or all)");
  }
  const bool horizontal =
      std::abs(cfg.moment.z()) <= 1e-12 * cfg.moment.norm();
  if (cfg.group == "hyperel" && !horizontal) {
    throw ConfigError(
        "group: the hyperel checks require a horizontal moment; use the "
        "reduce command to normalize the level first");
  }

  std::vector<detail::CheckSpec> selected;
  for (auto& spec : detail::check_registry(cfg)) {
    if (cfg.group == "all" || spec.group == cfg.group) {
      selected.push_back(std::move(spec));
    }
  }

  const auto resolve_tolerance = [&cfg](const detail::CheckSpec& spec) {
    const auto named = cfg.tolerances.find(spec.name);
    if (named != cfg.tolerances.end()) {
      return named->second;
    }
    const auto star = cfg.tolerances.find("*");
    if (star != cfg.tolerances.end()) {
      return star->second;
    }
    return spec.default_tolerance;
  };

  std::vector<detail::CheckResult> results(selected.size());
  const auto run_one = [&](std::size_t k) {
    const auto& spec = selected[k];
    detail::CheckResult r;
    r.name = spec.name;
    r.group = spec.group;
    r.tolerance = resolve_tolerance(spec);
    r.measured = spec.run(cfg, seed);
    r.pass = r.measured <= r.tolerance;
    return r;
  };
  if (parallel) {
    std::vector<std::future<detail::CheckResult>> futures;
    futures.reserve(selected.size());
    for (std::size_t k = 0; k < selected.size(); ++k) {
      futures.push_back(
          std::async(std::launch::async, [&run_one, k] { return run_one(k); }));
    }
    for (std::size_t k = 0; k < selected.size(); ++k) {
      results[k] = futures[k].get();
    }
  } else {
    for (std::size_t k = 0; k < selected.size(); ++k) {
      results[k] = run_one(k);
    }
  }

  bool all_pass = true;
  json checks = json::array();
  for (const auto& r : results) {
    all_pass = all_pass && r.pass;
    checks.push_back({{"name", r.name},
                      {"group", r.group},
                      {"measured", r.measured},
                      {"tolerance", r.tolerance},
                      {"pass", r.pass}});
  }
  json report = {
      {"group", cfg.group},
      {"seed", seed},
      {"passed", all_pass},
      {"checks", checks},
  };
  if (cfg.group == "all" && !horizontal) {
    report["skipped"] =
        "hyperel checks (the configured moment is not horizontal)";
  }
  os << report.dump(2) << "\n";
  if (!out_path.empty()) {
    std::ofstream file(out_path);
    if (!file) {
      throw ConfigError("out: cannot write " + out_path);
    }
    file << report.dump(2) << "\n";
  }
  return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// reduce: horizontal normalization of the level, its quadratic pencil, and
// when realizable the spectral-curve data of the reduced level.

inline int cmd_reduce(const RunConfig& cfg, const std::string& out_path,
                      std::ostream& os) {
  json report;
  try {
    const chapsphere::HorizontalReduction red =
        chapsphere::horizontalize(cfg.body, cfg.moment, cfg.energy);
    const auto pen =
        chapsphere::pencil(chapsphere::level_sextuple(cfg.body, cfg.moment,
                                                      cfg.energy));

    report["reduction"] = {
        {"coeffs", {{red.coeffs(0, 0), red.coeffs(0, 1)},
                    {red.coeffs(1, 0), red.coeffs(1, 1)}}},
        {"f_levels", std::vector<double>(red.f_levels.data(),
                                         red.f_levels.data() + 6)},
        {"j_horizontal", detail::json_vec(red.j_horizontal)},
        {"rho_reduced", red.rho_reduced},
        {"t_reduced", red.t_reduced},
        {"inertia_reduced", detail::json_vec(red.inertia_reduced)},
        {"inertia_physical", red.inertia_physical},
        {"is_identity", red.is_identity},
    };
    report["pencil"] = {
        {"alpha", pen.alpha},
        {"beta", pen.beta},
        {"gamma", pen.gamma},
        {"discriminant", pen.discriminant},
        {"roots", {pen.roots[0], pen.roots[1]}},
        {"degenerate", pen.degenerate},
    };

    report["curve"] = nullptr;
    if (red.is_identity) {
      const auto curve =
          chapsphere::curve_data(cfg.body, cfg.moment, cfg.energy);
      report["curve"] = {
          {"a", detail::json_vec(curve.a)},
          {"rho", curve.rho},
          {"gamma", curve.gamma},
          {"coeffs", std::vector<double>(curve.coeffs.begin(),
                                         curve.coeffs.end())},
          {"branch", std::vector<double>(curve.branch.begin(),
                                         curve.branch.end())},
          {"c", curve.c},
          {"c_squared", curve.c * curve.c},
          {"d", curve.d},
          {"d_squared", curve.d * curve.d},
          {"b0", curve.b0},
          {"b1", curve.b1},
      };
    } else if (red.inertia_physical) {
      const double r = cfg.body.radius > 0.0 ? cfg.body.radius : 1.0;
      const chapsphere::BodyParams reduced(red.inertia_reduced,
                                           red.rho_reduced / (r * r), r);
      try {
        const auto curve = chapsphere::curve_data(reduced, red.j_horizontal,
                                                  red.t_reduced);
        report["curve"] = {
            {"a", detail::json_vec(curve.a)},
            {"rho", curve.rho},
            {"gamma", curve.gamma},
            {"coeffs", std::vector<double>(curve.coeffs.begin(),
                                           curve.coeffs.end())},
            {"branch", std::vector<double>(curve.branch.begin(),
                                           curve.branch.end())},
            {"c", curve.c},
            {"c_squared", curve.c * curve.c},
            {"d", curve.d},
            {"d_squared", curve.d * curve.d},
            {"b0", curve.b0},
            {"b1", curve.b1},
        };
      } catch (const std::invalid_argument& e) {
        report["curve_note"] = e.what();
      }
    } else {
      report["curve_note"] =
          "reduced inertia is not positive; the reduced level has no "
          "spectral-curve realization";
    }
  } catch (const std::invalid_argument& e) {
    const json err = {{"error", e.what()}};
    os << err.dump(2) << "\n";
    return 1;
  }

  os << report.dump(2) << "\n";
  if (!out_path.empty()) {
    std::ofstream file(out_path);
    if (!file) {
      throw ConfigError("out: cannot write " + out_path);
    }
    file << report.dump(2) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch.

inline int cli_main(int argc, const char* const* argv, std::ostream& os) {
  CLI::App app{"chapsphere: rolling-sphere simulation and verification"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  long seed = 42;
  bool parallel = false;

  CLI::App* sim = app.add_subcommand(
      "simulate", "Integrate the full system and write a CSV trajectory");
  CLI::App* ver = app.add_subcommand(
      "verify", "Run grouped checks and report pass/fail per check");
  CLI::App* red = app.add_subcommand(
      "reduce", "Emit the horizontal reduction and curve data of a level");
  for (CLI::App* sub : {sim, ver, red}) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--out", out_path, "Output path");
    sub->add_option("--seed", seed, "Seed for sampled states (default 42)");
  }
  ver->add_flag("--parallel", parallel,
                "Fan independent checks out across threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream sink;
    const int code = app.exit(e, os, sink);
    if (code != 0) {
      os << sink.str();
    }
    return code == 0 ? 0 : 2;
  }
  CLI::App* active = sim->parsed() ? sim : (ver->parsed() ? ver : red);

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      cfg = parse_config(load_json_file(config_path));
    }
    if (active->count("--seed") == 0 && cfg.seed) {
      seed = *cfg.seed;
    }
    if (sim->parsed()) {
      return cmd_simulate(cfg, seed,
                          out_path.empty() ? "trajectory.csv" : out_path, os);
    }
    if (ver->parsed()) {
      return cmd_verify(cfg, seed, parallel, out_path, os);
    }
    return cmd_reduce(cfg, out_path, os);
  } catch (const ConfigError& e) {
    os << json{{"error", e.what()}}.dump(2) << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    os << json{{"error", e.what()}}.dump(2) << "\n";
    return 2;
  } catch (const std::exception& e) {
    os << json{{"error", e.what()}}.dump(2) << "\n";
    return 3;
  }
}

}  // namespace chapcli
