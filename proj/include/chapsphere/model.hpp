#pragma once

// Body parameters, state representations, kinetic forms, and the conserved
// moment / energy of a dynamically asymmetric ball rolling on a plane
// without slipping.

#include "chapsphere/vecrot.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace chapsphere {

// Principal moments of inertia, mass, radius.  rho = m r^2 enters the
// rolling-constraint correction; jdiag is the diagonal of (I + rho)^{-1}.
// Zero mass (or radius) is accepted as the free-top degeneration rho = 0.
struct BodyParams {
  Vec3 inertia;
  double mass;
  double radius;

  BodyParams(const Vec3& principal_moments, double m, double r)
      : inertia(principal_moments), mass(m), radius(r) {
    if (!(inertia.minCoeff() > 0.0)) {
      throw std::invalid_argument(
          "BodyParams: principal moments must be positive");
    }
    if (!(mass >= 0.0) || !(radius >= 0.0)) {
      throw std::invalid_argument(
          "BodyParams: mass and radius must be nonnegative");
    }
  }

  double rho() const { return mass * radius * radius; }
  Vec3 jdiag() const { return (inertia.array() + rho()).inverse(); }

  Vec3 apply_inertia(const Vec3& w) const { return inertia.cwiseProduct(w); }
  // J w with J = (I + rho)^{-1}.
  Vec3 apply_j(const Vec3& w) const { return jdiag().cwiseProduct(w); }
};

// Configuration + velocity of the full system: attitude A, body angular
// velocity omega, horizontal contact point p (third component 0).
struct FullState {
  Rotation A;
  Vec3 omega = Vec3::Zero();
  Vec3 p = Vec3::Zero();
};

// (u, v) = (A^{-1} e3, A^{-1} j): the vertical direction and the moment seen
// from the body frame.  On a level of (j, T): <u,u> = 1, <u,v> = j3,
// <v,v> = |j|^2.
struct PairState {
  Vec3 u = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

// Double cover of the pair representation: z^2 = X(u), zeta^2 = Z(v),
// with the sheet convention Y(u,v) = -z zeta.
struct ExtendedState {
  Vec3 u = Vec3::Zero();
  double z = 0.0;
  Vec3 v = Vec3::Zero();
  double zeta = 0.0;
};

// A joint level of the moment j and the energy T, with the derived scale
// tau = 2T/|j|^2 and gamma = tau/(1 - tau rho).
struct LevelData {
  Vec3 j;
  double T;
  double rho;

  LevelData(const Vec3& moment, double energy, const BodyParams& body)
      : j(moment), T(energy), rho(body.rho()) {
    if (!(T >= 0.0)) {
      throw std::invalid_argument("LevelData: energy must be nonnegative");
    }
  }

  double j3() const { return j.z(); }
  double jsq() const { return j.squaredNorm(); }

  double tau() const {
    const double n = jsq();
    if (n == 0.0) {
      throw std::runtime_error("LevelData: tau undefined for zero moment");
    }
    return 2.0 * T / n;
  }

  double gamma() const {
    const double denom = 1.0 - tau() * rho;
    if (std::abs(denom) < 1e-15) {
      throw std::runtime_error(
          "LevelData: gamma undefined, 2 T rho equals |j|^2");
    }
    return tau() / denom;
  }
};

namespace detail {
inline void require_unit(const Vec3& u, const char* who) {
  if (std::abs(u.squaredNorm() - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string(who) +
                                ": direction must be a unit vector");
  }
}

// Sherman-Morrison inverse of I + rho - rho u u^T applied to nu.  Exact for
// any u (not only unit ones), which matters for evaluators that must stay
// smooth slightly off the constraint manifold.
inline Vec3 i_rho_u_inv_formula(const Vec3& nu, const Vec3& u,
                                const BodyParams& body) {
  const double rho = body.rho();
  const Vec3 ju = body.apply_j(u);
  const double denom = 1.0 - rho * u.dot(ju);
  if (std::abs(denom) < 1e-12) {
    throw std::runtime_error(
        "i_rho_u_inv: denominator 1 - rho <u,Ju> vanishes");
  }
  const Vec3 jnu = body.apply_j(nu);
  return jnu + (rho * u.dot(jnu) / denom) * ju;
}
}  // namespace detail

struct KineticForms {
  double X;
  double Y;
  double Z;
  double f;  // Y^2 - X Z, zero on admissible (u, v, T)
};

// X = 1/rho - <u,Ju>, Y = <u,Jv>, Z = 2T - <v,Jv>, f = Y^2 - X Z.
inline KineticForms kinetic_forms(const Vec3& u, const Vec3& v, double T,
                                  const BodyParams& body) {
  const double rho = body.rho();
  if (!(rho > 0.0)) {
    throw std::invalid_argument("kinetic_forms: requires rho > 0");
  }
  KineticForms k;
  k.X = 1.0 / rho - u.dot(body.apply_j(u));
  k.Y = u.dot(body.apply_j(v));
  k.Z = 2.0 * T - v.dot(body.apply_j(v));
  k.f = k.Y * k.Y - k.X * k.Z;
  return k;
}

// (I + rho) omega - rho <u, omega> u: inertia about the contact point,
// restricted to the tangent plane direction u.
inline Vec3 i_rho_u(const Vec3& omega, const Vec3& u, const BodyParams& body) {
  detail::require_unit(u, "i_rho_u");
  const double rho = body.rho();
  return body.apply_inertia(omega) + rho * (omega - u.dot(omega) * u);
}

// Closed-form inverse of i_rho_u:
//   nu -> J nu + rho <u, J nu> / (1 - rho <u, J u>) * J u.
inline Vec3 i_rho_u_inv(const Vec3& nu, const Vec3& u,
                        const BodyParams& body) {
  detail::require_unit(u, "i_rho_u_inv");
  return detail::i_rho_u_inv_formula(nu, u, body);
}

// Angular velocity on the (u, v) chart; identical to i_rho_u_inv(v, u).
inline Vec3 omega_from_pair(const PairState& s, const BodyParams& body) {
  return i_rho_u_inv(s.v, s.u, body);
}

struct MomentEnergy {
  Vec3 j;
  double T;
};

// j = A i_rho_u(omega, A^{-1} e3) (moment about the contact point, space
// frame); T = 1/2 <i_rho_u(omega, u), omega>.
inline MomentEnergy moment_and_energy(const FullState& s,
                                      const BodyParams& body) {
  const Vec3 u = s.A.apply_inverse(Vec3::UnitZ());
  const Vec3 nu = i_rho_u(s.omega, u, body);
  return {s.A * nu, 0.5 * nu.dot(s.omega)};
}

// u = A^{-1} e3, v = A^{-1} j.
inline PairState pair_from_full(const Rotation& A, const Vec3& j) {
  return {A.apply_inverse(Vec3::UnitZ()), A.apply_inverse(j)};
}

// Lift (u, v) to the double cover.  z = sign_z sqrt(X); zeta is then forced
// by Y = -z zeta (never an independent square root, so both lifts of a point
// stay on one sheet).
inline ExtendedState extend(const PairState& s, double T,
                            const BodyParams& body, int sign_z) {
  if (sign_z != 1 && sign_z != -1) {
    throw std::invalid_argument("extend: sign_z must be +1 or -1");
  }
  const KineticForms k = kinetic_forms(s.u, s.v, T, body);
  if (std::abs(k.f) > 1e-9) {
    throw std::invalid_argument(
        "extend: kinetic residual f = " + std::to_string(k.f) +
        " exceeds 1e-9; (u, v, T) is not an admissible point");
  }
  if (k.X < 0.0) {
    throw std::invalid_argument(
        "extend: X(u) < 0, no real branch through this point");
  }
  ExtendedState e;
  e.u = s.u;
  e.v = s.v;
  e.z = sign_z * std::sqrt(k.X);
  if (std::abs(e.z) > 1e-14) {
    e.zeta = -k.Y / e.z;
  } else if (k.Z > 1e-14) {
    e.zeta = sign_z * std::sqrt(k.Z);
  } else {
    throw std::runtime_error(
        "extend: z and Z both vanish, sheet is undetermined here");
  }
  return e;
}

// Rebuild a full state from (u, v) and the space-frame moment j.  The
// attitude maps u -> e3 and v -> j; it is unique when v is not parallel to u,
// otherwise (vertical moment) an arbitrary compatible completion is chosen.
inline FullState full_state_from_pair(const PairState& s, const Vec3& j,
                                      const BodyParams& body,
                                      const Vec3& p = Vec3::Zero()) {
  detail::require_unit(s.u, "full_state_from_pair");
  const double scale = std::max(1.0, j.norm());
  if (std::abs(s.u.dot(s.v) - j.z()) > 1e-9 * scale ||
      std::abs(s.v.norm() - j.norm()) > 1e-9 * scale) {
    throw std::invalid_argument(
        "full_state_from_pair: (u, v) is incompatible with the moment j");
  }
  const Vec3 w_body = s.v - s.u.dot(s.v) * s.u;
  const Vec3 w_space = j - j.z() * Vec3::UnitZ();
  Mat3 body_frame, space_frame;
  body_frame.col(0) = s.u;
  space_frame.col(0) = Vec3::UnitZ();
  if (w_body.norm() > 1e-8 * scale && w_space.norm() > 1e-8 * scale) {
    body_frame.col(1) = w_body.normalized();
    space_frame.col(1) = w_space.normalized();
  } else {
    const Vec3 aux =
        std::abs(s.u.z()) < 0.9 ? Vec3(Vec3::UnitZ()) : Vec3(Vec3::UnitX());
    body_frame.col(1) = s.u.cross(aux).normalized();
    space_frame.col(1) = Vec3::UnitX();
  }
  body_frame.col(2) = body_frame.col(0).cross(body_frame.col(1));
  space_frame.col(2) = space_frame.col(0).cross(space_frame.col(1));
  FullState out;
  out.A = orthonormalize(space_frame * body_frame.transpose());
  out.omega = omega_from_pair(s, body);
  out.p = p;
  return out;
}

// Draw a point of the level {<u,u> = 1, <u,v> = j3, <v,v> = |j|^2, f = 0}.
// The u direction is sampled uniformly and v is searched for on the circle
// { j3 u + radius (cos phi e + sin phi g) } by a sign change of f followed by
// bisection; u values whose circle misses the level are rejected.
template <class Rng>
PairState sample_pair_on_level(const Vec3& j, double T, const BodyParams& body,
                               Rng& gen, int max_tries = 1000) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const double wsq = j.squaredNorm() - j.z() * j.z();
  const double radius = std::sqrt(std::max(wsq, 0.0));
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    Vec3 u(unif(gen), unif(gen), unif(gen));
    const double n2 = u.squaredNorm();
    if (n2 < 1e-6 || n2 > 1.0) continue;
    u.normalize();
    const Vec3 e =
        u.cross(std::abs(u.x()) < 0.9 ? Vec3(Vec3::UnitX()) : Vec3(Vec3::UnitY()))
            .normalized();
    const Vec3 g = u.cross(e);
    const auto v_at = [&](double phi) -> Vec3 {
      return j.z() * u + radius * (std::cos(phi) * e + std::sin(phi) * g);
    };
    const auto f_at = [&](double phi) {
      return kinetic_forms(u, v_at(phi), T, body).f;
    };
    constexpr int kGrid = 96;
    constexpr double kStep = 2.0 * std::numbers::pi / kGrid;
    double phi_lo = 0.0;
    double f_lo = f_at(phi_lo);
    for (int i = 1; i <= kGrid; ++i) {
      const double phi = i * kStep;
      const double fi = f_at(phi);
      if ((f_lo < 0.0) != (fi < 0.0)) {
        double lo = phi_lo, hi = phi, fl = f_lo;
        for (int it = 0; it < 100; ++it) {
          const double mid = 0.5 * (lo + hi);
          const double fm = f_at(mid);
          if ((fm < 0.0) == (fl < 0.0)) {
            lo = mid;
            fl = fm;
          } else {
            hi = mid;
          }
        }
        const PairState out{u, v_at(0.5 * (lo + hi))};
        if (std::abs(kinetic_forms(u, out.v, T, body).f) <= 1e-10) {
          return out;
        }
        break;  // tangential crossing refined poorly; resample u
      }
      phi_lo = phi;
      f_lo = fi;
    }
  }
  throw std::runtime_error(
      "sample_pair_on_level: no admissible state found; the (j, T) level may "
      "be empty");
}

}  // namespace chapsphere
