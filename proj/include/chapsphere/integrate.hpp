#pragma once

// Numerical flows: an embedded Dormand-Prince 5(4) pair with step control
// (default) and a fixed-step RK4 (kept for order tests), plus dense output,
// time reparametrization, and the flow-commutation harness.

#include "chapsphere/fields.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace chapsphere {

enum class StepMethod { kFixedRk4, kEmbeddedAdaptive };

struct IntegratorConfig {
  StepMethod method = StepMethod::kEmbeddedAdaptive;
  double fixed_step = 1e-3;
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  long max_steps = 20'000'000;
  // Attitude blocks are pulled back to SO(3) every this many accepted steps.
  int projection_interval = 100;

  void validate() const {
    if (!(fixed_step > 0.0) || !(abs_tol > 0.0) || !(rel_tol > 0.0) ||
        max_steps <= 0 || projection_interval <= 0) {
      throw std::invalid_argument(
          "IntegratorConfig: step, tolerances, budgets must be positive");
    }
  }
};

struct TrajectorySample {
  double t;
  FlatVec y;
  FlatVec dydt;  // stored for cubic Hermite dense output
};

struct Trajectory {
  std::vector<TrajectorySample> samples;
  std::string method;
  std::string field_name;
  double achieved_tolerance = 0.0;  // largest accepted local error estimate
  std::vector<double> event_markers;

  const TrajectorySample& front() const { return samples.front(); }
  const TrajectorySample& back() const { return samples.back(); }

  void append(double t, FlatVec y, FlatVec dydt) {
    if (!samples.empty() && !(t > samples.back().t)) {
      throw std::logic_error("Trajectory: sample times must strictly increase");
    }
    samples.push_back({t, std::move(y), std::move(dydt)});
  }
};

namespace detail {

inline void check_finite(const FlatVec& v, const char* who) {
  if (!v.allFinite()) {
    throw std::runtime_error(std::string(who) +
                             ": non-finite derivative encountered");
  }
}

inline void project_rotation_blocks(const FieldEval& field, FlatVec& y) {
  for (const int off : field.rotation_blocks) {
    mat3_to_flat(orthonormalize(mat3_from_flat(y, off)).matrix(), y, off);
  }
}

// Attitude blocks evolve by right multiplication, so Q Q^T is conserved by
// the exact flow even off the orthogonal group.  Its change across one
// proposed step is therefore pure, exactly measurable local error.
inline double rotation_block_deposit(const FieldEval& field, const FlatVec& y0,
                                     const FlatVec& y1) {
  double worst = 0.0;
  for (const int off : field.rotation_blocks) {
    const Mat3 q0 = mat3_from_flat(y0, off);
    const Mat3 q1 = mat3_from_flat(y1, off);
    worst = std::max(
        worst,
        (q1 * q1.transpose() - q0 * q0.transpose()).cwiseAbs().maxCoeff());
  }
  return worst;
}

// Classic RK4 step.
inline FlatVec rk4_step(const FieldEval& f, const FlatVec& y, double h) {
  const FlatVec k1 = f(y);
  const FlatVec k2 = f(y + 0.5 * h * k1);
  const FlatVec k3 = f(y + 0.5 * h * k2);
  const FlatVec k4 = f(y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

inline Trajectory integrate(const FieldEval& field, const FlatVec& y0,
                            double t0, double t1,
                            const IntegratorConfig& cfg = {}) {
  cfg.validate();
  if (!(t1 > t0)) {
    throw std::invalid_argument("integrate: requires t1 > t0");
  }
  if (y0.size() != field.dim) {
    throw std::invalid_argument("integrate: state size does not match field");
  }
  if (!y0.allFinite()) {
    throw std::invalid_argument("integrate: initial state must be finite");
  }

  Trajectory traj;
  traj.method =
      cfg.method == StepMethod::kFixedRk4 ? "rk4" : "dormand-prince-5(4)";
  traj.field_name = field.name;

  FlatVec y = y0;
  FlatVec dy = field(y);
  detail::check_finite(dy, "integrate");
  traj.append(t0, y, dy);

  long accepted = 0;

  if (cfg.method == StepMethod::kFixedRk4) {
    const double span = t1 - t0;
    const long n = std::max<long>(1, std::lround(span / cfg.fixed_step));
    if (n > cfg.max_steps) {
      throw std::runtime_error("integrate: step budget exhausted");
    }
    const double h = span / static_cast<double>(n);
    for (long i = 0; i < n; ++i) {
      y = detail::rk4_step(field, y, h);
      detail::check_finite(y, "integrate");
      ++accepted;
      if (accepted % cfg.projection_interval == 0) {
        detail::project_rotation_blocks(field, y);
      }
      const double t = t0 + h * static_cast<double>(i + 1);
      dy = field(y);
      traj.append(t, y, dy);
    }
    return traj;
  }

  // Dormand-Prince 5(4) embedded pair (autonomous fields, so the stage
  // abscissae never enter the stage evaluations).
  static const double kA[7][6] = {
      {},
      {1.0 / 5.0},
      {3.0 / 40.0, 9.0 / 40.0},
      {44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0},
      {19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0},
      {9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
       -5103.0 / 18656.0},
      {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
       11.0 / 84.0}};
  static const double kB5[7] = {35.0 / 384.0,     0.0,  500.0 / 1113.0,
                                125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0,
                                0.0};
  static const double kB4[7] = {5179.0 / 57600.0,    0.0,
                                7571.0 / 16695.0,    393.0 / 640.0,
                                -92097.0 / 339200.0, 187.0 / 2100.0,
                                1.0 / 40.0};

  double t = t0;
  double h = std::min((t1 - t0) / 100.0, 0.1);
  long attempts = 0;

  while (t < t1) {
    if (++attempts > cfg.max_steps) {
      throw std::runtime_error("integrate: step budget exhausted");
    }
    h = std::min(h, t1 - t);

    FlatVec k[7];
    k[0] = dy;  // first-same-as-last from the previous accepted step
    bool finite = true;
    for (int i = 1; i < 7; ++i) {
      FlatVec yi = y;
      for (int l = 0; l < i; ++l) {
        if (kA[i][l] != 0.0) yi += (h * kA[i][l]) * k[l];
      }
      k[i] = field(yi);
      if (!k[i].allFinite()) {
        finite = false;
        break;
      }
    }
    if (!finite) {
      // Retry with a smaller step before giving up.
      h *= 0.25;
      if (h < 1e-14 * std::max(1.0, std::abs(t))) {
        throw std::runtime_error("integrate: non-finite derivative");
      }
      continue;
    }

    FlatVec y5 = y;
    FlatVec err = FlatVec::Zero(field.dim);
    for (int i = 0; i < 7; ++i) {
      if (kB5[i] != 0.0) y5 += (h * kB5[i]) * k[i];
      const double d = kB5[i] - kB4[i];
      if (d != 0.0) err += (h * d) * k[i];
    }

    // Weighted max norm: the worst component governs acceptance.
    double err_norm = 0.0;
    for (int i = 0; i < field.dim; ++i) {
      const double scale =
          cfg.abs_tol +
          cfg.rel_tol * std::max(std::abs(y[i]), std::abs(y5[i]));
      err_norm = std::max(err_norm, std::abs(err[i]) / scale);
    }
    // Attitude blocks additionally budget their per-step orthogonality
    // deposit so that a full projection cycle accumulates only a small
    // fraction of the tolerance.  Floored to stay clear of roundoff at very
    // tight tolerances.
    if (!field.rotation_blocks.empty()) {
      const double orth_scale =
          std::max((cfg.abs_tol + cfg.rel_tol) /
                       (10.0 * static_cast<double>(cfg.projection_interval)),
                   1e-14);
      err_norm = std::max(
          err_norm, detail::rotation_block_deposit(field, y, y5) / orth_scale);
    }

    if (err_norm <= 1.0) {
      t = (t1 - t - h < 1e-14 * std::max(1.0, std::abs(t1))) ? t1 : t + h;
      y = y5;
      ++accepted;
      if (accepted % cfg.projection_interval == 0) {
        detail::project_rotation_blocks(field, y);
      }
      dy = field(y);
      detail::check_finite(dy, "integrate");
      traj.append(t, y, dy);
      traj.achieved_tolerance =
          std::max(traj.achieved_tolerance, err.cwiseAbs().maxCoeff());
    }

    const double factor = (err_norm > 0.0)
                              ? 0.8 * std::pow(err_norm, -0.2)
                              : 5.0;
    h *= std::clamp(factor, 0.2, 5.0);
  }
  return traj;
}

// Cubic Hermite dense output between accepted samples.
inline FlatVec interpolate(const Trajectory& traj, double t) {
  const auto& s = traj.samples;
  if (s.empty()) {
    throw std::invalid_argument("interpolate: empty trajectory");
  }
  if (t <= s.front().t) return s.front().y;
  if (t >= s.back().t) return s.back().y;
  const auto it = std::upper_bound(
      s.begin(), s.end(), t,
      [](double value, const TrajectorySample& smp) { return value < smp.t; });
  const TrajectorySample& hi = *it;
  const TrajectorySample& lo = *(it - 1);
  const double h = hi.t - lo.t;
  const double th = (t - lo.t) / h;
  const double th2 = th * th;
  const double th3 = th2 * th;
  const double h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
  const double h10 = th3 - 2.0 * th2 + th;
  const double h01 = -2.0 * th3 + 3.0 * th2;
  const double h11 = th3 - th2;
  return h00 * lo.y + (h10 * h) * lo.dydt + h01 * hi.y + (h11 * h) * hi.dydt;
}

// Endpoint of the flow for time t (negative t runs the reversed field).
inline FlatVec flow(const FieldEval& field, const FlatVec& y0, double t,
                    const IntegratorConfig& cfg = {}) {
  if (t == 0.0) return y0;
  if (t > 0.0) return integrate(field, y0, 0.0, t, cfg).back().y;
  FieldEval reversed = field;
  const auto fwd = field.deriv;
  reversed.deriv = [fwd](const FlatVec& y) -> FlatVec { return -fwd(y); };
  reversed.name = field.name + "-reversed";
  return integrate(reversed, y0, 0.0, -t, cfg).back().y;
}

// d tau / d t = X(u)^{-1/2}: the density relating rolling time to the
// rescaled time in which the two rotational fields commute.
inline double reparam_factor(const Vec3& u, const BodyParams& body) {
  const double x = 1.0 / body.rho() - u.dot(body.apply_j(u));
  if (!(x > 0.0)) {
    throw std::runtime_error("reparam_factor: X(u) must be positive");
  }
  return 1.0 / std::sqrt(x);
}

// | flow_xi(t) flow_eta(s) - flow_eta(s) flow_xi(t) | applied to ext0,
// measured in the flat 8-vector norm.
inline double commutation_defect(const ExtendedState& ext0, double t, double s,
                                 const BodyParams& body,
                                 const IntegratorConfig& cfg = {}) {
  const FieldEval xi = make_xi_ext_field(body);
  const FieldEval eta = make_eta_ext_field(body);
  const FlatVec y0 = pack_ext(ext0);
  const FlatVec a = flow(xi, flow(eta, y0, s, cfg), t, cfg);
  const FlatVec b = flow(eta, flow(xi, y0, t, cfg), s, cfg);
  return (a - b).norm();
}

}  // namespace chapsphere
