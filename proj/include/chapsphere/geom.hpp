#pragma once

// Tangent-line geometry of an energy-moment level: the two distinguished
// values of the shift parameter that turn the level condition into a perfect
// square, the quadric surface attached to each shift, and the family of
// straight lines through the contact direction that stay tangent to that
// quadric along every motion on the level.

#include <array>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include <chapsphere/model.hpp>
#include <chapsphere/vecrot.hpp>

namespace chapsphere {

// ---------------------------------------------------------------------------
// One distinguished shift value together with the objects it induces: the
// diagonal quadric <w, diag(quadric_diag) w> = quadric_level and the rule
// d(u, v) = u_coeff u + v_coeff v for the tangent-line direction.  The rule
// fields are computed from the real part and carry geometric meaning only
// when is_real holds; a conjugate pair is reported with explicit imaginary
// parts instead of being silently projected.

struct TangencyRoot {
  double alpha = 0.0;       // real part of the shift value
  double alpha_imag = 0.0;  // imaginary part; zero for a real root
  bool is_real = true;

  Vec3 quadric_diag = Vec3::Zero();  // (I + rho)^{-1} + alpha, componentwise
  double quadric_level = 0.0;        // 1/rho + alpha
  double u_coeff = 0.0;              // alpha j3
  double v_coeff = 0.0;              // -(1/rho + alpha)

  Vec3 direction(const Vec3& u, const Vec3& v) const {
    return u_coeff * u + v_coeff * v;
  }
};

struct TangencyData {
  // First root: the plus branch of the quadratic (the larger root when both
  // are real); for a horizontal moment, the perfect-square value -2T/|j|^2
  // first and the constant value -1/rho second.
  std::array<TangencyRoot, 2> roots;
  bool horizontal = false;  // moment orthogonal to gravity: closed-form pair
};

namespace detail {

inline TangencyRoot make_tangency_root(double alpha, double alpha_imag,
                                       const BodyParams& body, double j3) {
  TangencyRoot root;
  root.alpha = alpha;
  root.alpha_imag = alpha_imag;
  root.is_real = (alpha_imag == 0.0);
  const double inv_rho = 1.0 / body.rho();
  root.quadric_diag = body.jdiag() + Vec3::Constant(alpha);
  root.quadric_level = inv_rho + alpha;
  root.u_coeff = alpha * j3;
  root.v_coeff = -(inv_rho + alpha);
  return root;
}

}  // namespace detail

// Shift values for the level with moment j and kinetic energy T: the roots of
//
//   (|j|^2 - j3^2) a^2 + (2T + |j|^2/rho) a + 2T/rho = 0,
//
// each packaged with its quadric and direction rule.  A horizontal moment
// degenerates the construction into the exact pair {-2T/|j|^2, -1/rho}, which
// the quadratic factors into termwise.  Throws std::invalid_argument for a
// vertical moment (the leading coefficient vanishes and no line family
// exists) and for a non-positive rolling parameter rho.
inline TangencyData tangency_data(const BodyParams& body, const Vec3& j,
                                  double T) {
  const double rho = body.rho();
  if (!(rho > 0.0)) {
    throw std::invalid_argument(
        "tangency_data: requires mass and radius with m r^2 > 0");
  }
  const double jsq = j.squaredNorm();
  const double j3 = j.z();
  const double horiz_sq = jsq - j3 * j3;
  if (horiz_sq <= 1e-20 * std::max(1.0, jsq)) {
    throw std::invalid_argument(
        "tangency_data: the moment is vertical (or zero); the shift "
        "quadratic degenerates");
  }

  TangencyData data;
  if (std::abs(j3) <= 1e-12 * std::sqrt(jsq)) {
    data.horizontal = true;
    data.roots[0] = detail::make_tangency_root(-2.0 * T / jsq, 0.0, body, j3);
    data.roots[1] = detail::make_tangency_root(-1.0 / rho, 0.0, body, j3);
    return data;
  }

  const double qa = horiz_sq;
  const double qb = 2.0 * T + jsq / rho;
  const double qc = 2.0 * T / rho;
  const double disc = qb * qb - 4.0 * qa * qc;
  if (disc >= 0.0) {
    // Stable real solve: the subtraction-free root first, its cofactor via
    // the product of roots.  qb > 0 on physical levels, but the sign split
    // keeps the formula exact for arbitrary algebraic inputs.
    const double s = std::sqrt(disc);
    const double q = -0.5 * (qb + (qb >= 0.0 ? s : -s));
    const double r_minus = q / qa;
    const double r_plus = qc / q;
    const double hi = std::max(r_plus, r_minus);
    const double lo = std::min(r_plus, r_minus);
    data.roots[0] = detail::make_tangency_root(hi, 0.0, body, j3);
    data.roots[1] = detail::make_tangency_root(lo, 0.0, body, j3);
  } else {
    const double re = -qb / (2.0 * qa);
    const double im = std::sqrt(-disc) / (2.0 * qa);
    data.roots[0] = detail::make_tangency_root(re, im, body, j3);
    data.roots[1] = detail::make_tangency_root(re, -im, body, j3);
  }
  return data;
}

// Discriminant of the intersection of the line s -> u + s d(u, v) with the
// quadric attached to the shift alpha, where u = A^{-1} e3 and v = A^{-1} j.
// Zero means the line is tangent to the quadric; on an (j, T) energy-moment
// level this holds identically for either root of tangency_data, so the
// value doubles as a level-membership residual.  The energy enters only
// through the choice of alpha and of the rotation sample, so off-level
// rotations return an order-one value rather than an error.
inline double tangency_residual(const Rotation& A, double alpha,
                                const BodyParams& body, const Vec3& j,
                                double T) {
  (void)T;  // the level constraint is carried by A and alpha themselves
  const double rho = body.rho();
  if (!(rho > 0.0)) {
    throw std::invalid_argument(
        "tangency_residual: requires mass and radius with m r^2 > 0");
  }
  const PairState s = pair_from_full(A, j);
  const double inv_rho = 1.0 / rho;
  const Vec3 d = alpha * j.z() * s.u - (inv_rho + alpha) * s.v;
  const Vec3 q = body.jdiag() + Vec3::Constant(alpha);

  const double qa = d.dot(q.cwiseProduct(d));
  const double qb = 2.0 * s.u.dot(q.cwiseProduct(d));
  const double qc = s.u.dot(q.cwiseProduct(s.u)) - (inv_rho + alpha);
  return qb * qb - 4.0 * qa * qc;
}

}  // namespace chapsphere
