#pragma once

// Relative equilibria (critical circles), the singular part of the moment
// image, the vertical-moment Euler reduction, the revolution-body invariants,
// and linearized Poincaré return maps around critical circles.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include <chapsphere/fields.hpp>
#include <chapsphere/integrate.hpp>
#include <chapsphere/model.hpp>
#include <chapsphere/vecrot.hpp>

namespace chapsphere {

// ---------------------------------------------------------------------------
// Critical circles: the body spins about a principal axis, the contact point
// runs along a straight line.

struct CriticalCircleData {
  double iota = 0.0;          // principal moment of inertia
  double omega_sq = 0.0;      // squared angular speed on the circle
  Vec3 spatial_axis;          // spatial angular velocity (A omega)
  double t_crit = 0.0;        // kinetic energy of the circle
  Vec3 contact_velocity;      // straight-line velocity of the contact point
};

inline std::array<CriticalCircleData, 3> critical_data(const BodyParams& body,
                                                       const Vec3& j) {
  if (j.norm() == 0.0) {
    throw std::invalid_argument("critical_data: zero moment has no circles");
  }
  const double rho = body.rho();
  std::array<CriticalCircleData, 3> out;
  for (int k = 0; k < 3; ++k) {
    const double iota = body.inertia[k];
    CriticalCircleData& c = out[k];
    c.iota = iota;
    const double rj = rho * j[2] / iota;
    c.spatial_axis = (j + rj * Vec3::UnitZ()) / (iota + rho);
    c.omega_sq =
        (j.squaredNorm() + 2.0 * rj * j[2] + rj * rj) / std::pow(iota + rho, 2);
    c.t_crit = 0.5 * (j.squaredNorm() + rho * j[2] * j[2] / iota) / (iota + rho);
    c.contact_velocity = body.radius * j.cross(Vec3::UnitZ()) / (iota + rho);
  }
  return out;
}

// A configuration lying on the requested critical circle.  Each principal
// axis carries two disjoint circles, told apart by the spin orientation.
inline FullState critical_circle_state(const BodyParams& body, const Vec3& j,
                                       int axis_index, int spin_sign = +1) {
  if (axis_index < 0 || axis_index > 2) {
    throw std::invalid_argument("critical_circle_state: axis index must be 0..2");
  }
  if (spin_sign != 1 && spin_sign != -1) {
    throw std::invalid_argument("critical_circle_state: spin sign must be +-1");
  }
  const CriticalCircleData data = critical_data(body, j)[axis_index];
  const double iota = data.iota;
  const double w = std::sqrt(data.omega_sq);
  const double cone = j[2] / (iota * w);  // cosine of the angle between u and the axis;
                                          // |cone| <= 1 always since
                                          // w^2 - (j3/iota)^2 = (|j|^2 - j3^2)/(iota+rho)^2
  const double cos_a = std::clamp(cone, -1.0, 1.0);
  const double sin_a = std::sqrt(std::max(0.0, 1.0 - cos_a * cos_a));
  const double s = static_cast<double>(spin_sign);

  Vec3 axis = Vec3::Zero(), side = Vec3::Zero();
  axis[axis_index] = 1.0;
  side[(axis_index + 1) % 3] = 1.0;

  const Vec3 omega0 = s * w * axis;
  const Vec3 u0 = s * cos_a * axis + sin_a * side;
  const Vec3 moment_body = i_rho_u(omega0, u0, body);
  return full_state_from_pair({u0, moment_body}, j, body);
}

// ---------------------------------------------------------------------------
// Singular part of the moment-energy image: for each principal moment the
// zero set of a quadratic form in j is an ellipsoidal shell.

struct SingularShellForm {
  double iota = 0.0;
  double rho = 0.0;
  double energy = 0.0;

  double operator()(const Vec3& j) const {
    return (j.squaredNorm() + (rho / iota) * j[2] * j[2]) /
               (2.0 * (iota + rho)) -
           energy;
  }
};

inline std::array<SingularShellForm, 3> singular_image(const BodyParams& body,
                                                       double energy) {
  if (!(energy > 0.0)) {
    throw std::invalid_argument("singular_image: energy must be positive");
  }
  std::array<SingularShellForm, 3> out;
  for (int k = 0; k < 3; ++k) {
    out[k] = SingularShellForm{body.inertia[k], body.rho(), energy};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vertical moment: the attitude dynamics closes into an Euler-type equation
// for the contact direction alone.

inline Vec3 euler_vertical_field(const Vec3& u, const BodyParams& body,
                                 double j3, double energy) {
  if (j3 == 0.0) {
    throw std::invalid_argument("euler_vertical_field: needs a nonzero vertical moment");
  }
  const double coeff = (j3 * j3 + 2.0 * energy * body.rho()) / j3;
  return coeff * u.cross(body.apply_j(u));
}

struct VerticalResiduals {
  double ellipsoid = 0.0;  // u leaves the invariant ellipsoid by this much
  Vec3 axis_alignment;     // u minus its expression through omega
};

inline VerticalResiduals vertical_consistency(const Vec3& u, const Vec3& omega,
                                              const BodyParams& body, double j3,
                                              double energy) {
  if (j3 == 0.0) {
    throw std::invalid_argument("vertical_consistency: needs a nonzero vertical moment");
  }
  const double rho = body.rho();
  const double denom = j3 * j3 + 2.0 * energy * rho;
  VerticalResiduals r;
  r.ellipsoid = u.dot(body.apply_j(u)) - 2.0 * energy / denom;
  r.axis_alignment =
      u - (j3 / denom) * (body.apply_inertia(omega) + rho * omega);
  return r;
}

// How far the rotational dynamics is from the free-top form with augmented
// inertia; vanishes identically on vertical-moment levels.
inline double vertical_euler_residual(const FullState& state,
                                      const BodyParams& body) {
  const double rho = body.rho();
  const Vec3 u = state.A.apply_inverse(Vec3::UnitZ());
  const Vec3 omega_dot = i_rho_u_inv(
      body.apply_inertia(state.omega).cross(state.omega), u, body);
  const Vec3 lhs = body.apply_inertia(omega_dot) + rho * omega_dot;
  const Vec3 rhs =
      (body.apply_inertia(state.omega) + rho * state.omega).cross(state.omega);
  return (lhs - rhs).norm();
}

// Draw a configuration on the level (j = j3 e3, T): the contact direction
// lies on the intersection of the unit sphere with an inertia ellipsoid, and
// omega is then determined by u.
template <class Rng>
FullState sample_vertical_state(const BodyParams& body, double j3,
                                double energy, Rng& rng, int max_tries = 1000) {
  if (j3 == 0.0 || !(energy > 0.0)) {
    throw std::invalid_argument("sample_vertical_state: needs j3 != 0 and positive energy");
  }
  const double rho = body.rho();
  const double target = 2.0 * energy / (j3 * j3 + 2.0 * energy * rho);
  const Vec3 jd = body.jdiag();
  if (!(target > jd.minCoeff() && target < jd.maxCoeff())) {
    throw std::invalid_argument(
        "sample_vertical_state: level is empty or critical for this body");
  }

  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto random_unit_vec = [&]() {
    while (true) {
      const Vec3 v(unit(rng), unit(rng), unit(rng));
      const double n = v.norm();
      if (n > 1e-3 && n <= 1.0) return Vec3(v / n);
    }
  };

  for (int attempt = 0; attempt < max_tries; ++attempt) {
    const Vec3 a = random_unit_vec();
    Vec3 b = random_unit_vec();
    b -= b.dot(a) * a;
    if (b.norm() < 1e-6) continue;
    b.normalize();
    auto value = [&](double phi) {
      const Vec3 u = std::cos(phi) * a + std::sin(phi) * b;
      return u.dot(body.apply_j(u)) - target;
    };
    constexpr int kGrid = 96;
    const double step = 2.0 * EIGEN_PI / kGrid;
    double prev_phi = 0.0, prev_val = value(0.0);
    for (int g = 1; g <= kGrid; ++g) {
      const double phi = g * step;
      const double val = value(phi);
      if (prev_val == 0.0 || prev_val * val < 0.0) {
        double lo = prev_phi, hi = phi, flo = prev_val;
        for (int it = 0; it < 100; ++it) {
          const double mid = 0.5 * (lo + hi);
          const double fm = value(mid);
          if (flo * fm <= 0.0) {
            hi = mid;
          } else {
            lo = mid;
            flo = fm;
          }
        }
        const double phi_root = 0.5 * (lo + hi);
        const Vec3 u = (std::cos(phi_root) * a + std::sin(phi_root) * b).normalized();
        if (std::abs(u.dot(body.apply_j(u)) - target) > 1e-10) break;
        // The body-frame moment on a vertical level is j3 u, and omega is
        // recovered from it by the pair-state constructor.
        return full_state_from_pair({u, j3 * u}, j3 * Vec3::UnitZ(), body);
      }
      prev_phi = phi;
      prev_val = val;
    }
  }
  throw std::runtime_error("sample_vertical_state: no admissible contact direction found");
}

// ---------------------------------------------------------------------------
// Solid of revolution (two equal moments): two classical constants of the
// reduced motion.

struct JelletInvariants {
  double f = 0.0;  // axial moment pairing <I omega, u>
  double g = 0.0;  // squared body-frame moment
};

inline JelletInvariants jellet_invariants(const FullState& state,
                                          const BodyParams& body) {
  const double i1 = body.inertia[0], i2 = body.inertia[1];
  if (std::abs(i1 - i2) > 1e-12 * std::max(i1, i2)) {
    throw std::invalid_argument(
        "jellet_invariants: requires a body of revolution (equal first moments)");
  }
  const Vec3 u = state.A.apply_inverse(Vec3::UnitZ());
  JelletInvariants out;
  out.f = body.apply_inertia(state.omega).dot(u);
  out.g = i_rho_u(state.omega, u, body).squaredNorm();
  return out;
}

// ---------------------------------------------------------------------------
// Linearized Poincaré return map around a critical circle, inside the fixed
// moment level.  Attitude perturbations ride along the moving frame
// (A -> A(id + hat(eps))), velocity perturbations are additive; the pair
// (eps, delta) obeys the variational equations of the rotational flow.

struct MonodromyResult {
  Eigen::Matrix2d map;
  double det = 0.0;
  double trace = 0.0;
};

namespace detail {

using Vec6 = Eigen::Matrix<double, 6, 1>;

// Derivative of the moment constraint in (eps, delta) coordinates at (u, omega).
inline Vec3 moment_constraint_derivative(const Vec3& eps, const Vec3& delta,
                                         const Vec3& u, const Vec3& omega,
                                         const BodyParams& body) {
  const double rho = body.rho();
  const Vec3 moment_body = i_rho_u(omega, u, body);
  const Vec3 du = u.cross(eps);
  return eps.cross(moment_body) + i_rho_u(delta, u, body) -
         rho * (du.dot(omega) * u + u.dot(omega) * du);
}

}  // namespace detail

inline MonodromyResult circle_monodromy(const BodyParams& body, const Vec3& j,
                                        int axis_index, int spin_sign = +1,
                                        const IntegratorConfig& cfg = {}) {
  const FullState base = critical_circle_state(body, j, axis_index, spin_sign);
  const Vec3 u0 = base.A.apply_inverse(Vec3::UnitZ());
  const Vec3 omega0 = base.omega;
  const double w = omega0.norm();
  if (w == 0.0) {
    throw std::runtime_error("circle_monodromy: stationary axis, no return time");
  }

  // Tangent space of the moment level: kernel of the constraint derivative.
  Eigen::Matrix<double, 3, 6> constraint;
  for (int k = 0; k < 6; ++k) {
    detail::Vec6 e = detail::Vec6::Zero();
    e[k] = 1.0;
    constraint.col(k) = detail::moment_constraint_derivative(
        e.head<3>(), e.tail<3>(), u0, omega0, body);
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 3, 6>> svd(
      constraint, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sigma = Vec3::Zero();
  sigma.head(svd.singularValues().size()) = svd.singularValues();
  if (sigma[2] < 1e-9 * sigma[0]) {
    throw std::runtime_error("circle_monodromy: degenerate moment level");
  }
  Eigen::Matrix<double, 6, 3> kernel = svd.matrixV().rightCols<3>();

  // Split the kernel into the flow direction and a transversal 2-plane.
  detail::Vec6 v_flow = detail::Vec6::Zero();
  v_flow.head<3>() = omega0;
  v_flow.normalize();
  if ((constraint * v_flow).norm() > 1e-9) {
    throw std::runtime_error("circle_monodromy: flow direction leaves the level");
  }
  Eigen::Matrix<double, 6, 2> transversal;
  {
    int found = 0;
    for (int k = 0; k < 3 && found < 2; ++k) {
      detail::Vec6 cand = kernel.col(k);
      cand -= cand.dot(v_flow) * v_flow;
      for (int m = 0; m < found; ++m) {
        cand -= cand.dot(transversal.col(m)) * transversal.col(m);
      }
      if (cand.norm() > 1e-6) {
        transversal.col(found++) = cand.normalized();
      }
    }
    if (found != 2) {
      throw std::runtime_error("circle_monodromy: could not frame the transversal");
    }
  }

  // Augmented state: attitude, velocity, and two variational pairs.
  const double rho = body.rho();
  FieldEval var_field;
  var_field.name = "critical-circle-variational";
  var_field.dim = 24;
  var_field.rotation_blocks = {0};
  var_field.deriv = [body, rho](const FlatVec& y) {
    const Mat3 a = mat3_from_flat(y, 0);
    const Vec3 omega = y.segment<3>(9);
    const Vec3 u = a.transpose() * Vec3::UnitZ();
    const Vec3 coriolis = body.apply_inertia(omega).cross(omega);
    const Vec3 g = detail::i_rho_u_inv_formula(coriolis, u, body);

    FlatVec dy(24);
    mat3_to_flat(a * hat(omega), dy, 0);
    dy.segment<3>(9) = g;
    for (int blk = 0; blk < 2; ++blk) {
      const Vec3 eps = y.segment<3>(12 + 6 * blk);
      const Vec3 delta = y.segment<3>(15 + 6 * blk);
      const Vec3 du = u.cross(eps);
      const Vec3 rhs = body.apply_inertia(delta).cross(omega) +
                       body.apply_inertia(omega).cross(delta) +
                       rho * (du * u.dot(g) + u * du.dot(g));
      dy.segment<3>(12 + 6 * blk) = delta + eps.cross(omega);
      dy.segment<3>(15 + 6 * blk) = detail::i_rho_u_inv_formula(rhs, u, body);
    }
    return dy;
  };

  FlatVec y0(24);
  mat3_to_flat(base.A.matrix(), y0, 0);
  y0.segment<3>(9) = omega0;
  y0.segment<6>(12) = transversal.col(0);
  y0.segment<6>(18) = transversal.col(1);

  const double period = 2.0 * EIGEN_PI / w;
  const FlatVec yp = flow(var_field, y0, period, cfg);

  const Mat3 a_return = mat3_from_flat(yp, 0);
  if ((a_return - base.A.matrix()).cwiseAbs().maxCoeff() > 1e-6 ||
      (yp.segment<3>(9) - omega0).norm() > 1e-6) {
    throw std::runtime_error("circle_monodromy: orbit failed to return");
  }

  MonodromyResult out;
  for (int col = 0; col < 2; ++col) {
    const detail::Vec6 image = yp.segment<6>(12 + 6 * col);
    out.map(0, col) = transversal.col(0).dot(image);
    out.map(1, col) = transversal.col(1).dot(image);
  }
  out.det = out.map.determinant();
  out.trace = out.map.trace();
  return out;
}

}  // namespace chapsphere
