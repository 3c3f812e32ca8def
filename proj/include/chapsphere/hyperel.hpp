#pragma once

// Genus-two spectral curve attached to a horizontal-moment energy level:
// sphero-conical coordinates on the contact-direction sphere, the quintic
// curve they move on, quadrature of the two holomorphic differentials along
// a reparametrized orbit, annulus classification of contact directions, and
// the drift laws of the planar contact trace.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "chapsphere/fields.hpp"
#include "chapsphere/integrate.hpp"
#include "chapsphere/model.hpp"

namespace chapsphere {

// ---- spectral curve --------------------------------------------------------

// Data of the quintic curve z^2 = P(lambda) carrying the sphero-conical
// motion of u on a level with horizontal moment.
//
//   P(lambda) = (-1/rho - lambda)(gamma - lambda) prod_i (a_i - lambda),
//   a_i = 1/I_i, gamma = tau / (1 - tau rho), tau = 2T/|j|^2.
//
// The speed constants satisfy
//   c^2  = (4|j|^2 - 8 rho T) / prod_i (rho a_i + 1),
//   d^2  = r^2 (|j|^2 - 2 rho T)^2 / (rho^4 prod_i (a_i + 1/rho)),
//   b0^2 = 4|j|^2 / (rho^2 (1/rho + gamma) prod_i (a_i + 1/rho)),
// and are stored with the positive square root; b1 = -b0 / rho.
struct CurveData {
  Vec3 a = Vec3::Zero();
  double rho = 0.0;
  double gamma = 0.0;
  // coeffs[k] multiplies lambda^k; the degree is exactly 5 with leading
  // coefficient -1.
  std::array<double, 6> coeffs{};
  // The five finite branch values {a1, a2, a3, -1/rho, gamma}, ascending.
  std::array<double, 5> branch{};
  double c = 0.0;
  double d = 0.0;
  double b0 = 0.0;
  double b1 = 0.0;

  // P evaluated through the factored form (better conditioned near the
  // branch values than the expanded coefficients).
  double eval(double lambda) const {
    return (-1.0 / rho - lambda) * (gamma - lambda) * (a[0] - lambda) *
           (a[1] - lambda) * (a[2] - lambda);
  }
};

// A point of the real locus seen from both coordinates: the two
// sphero-conical values together with the sheet signs of their lifts
// z_k = s_k sqrt(P(lambda_k)).
struct EllipticPoint {
  double l2 = 0.0;
  double l3 = 0.0;
  int s2 = +1;
  int s3 = +1;
};

inline CurveData curve_data(const BodyParams& body, const Vec3& j, double T) {
  const double rho = body.rho();
  if (!(rho > 0.0)) {
    throw std::invalid_argument("curve_data: requires rho > 0");
  }
  const double jsq = j.squaredNorm();
  if (!(jsq > 0.0)) {
    throw std::invalid_argument("curve_data: requires a nonzero moment");
  }
  if (std::abs(j.z()) > 1e-12 * std::sqrt(jsq)) {
    throw std::invalid_argument(
        "curve_data: requires a horizontal moment (j3 = 0)");
  }
  // Critical energies jsq / (2 (I_i + rho)). The real locus is nonempty only
  // strictly between the extreme ones, and the curve degenerates on the
  // middle one.
  Vec3 crit;
  for (int i = 0; i < 3; ++i) crit[i] = jsq / (2.0 * (body.inertia[i] + rho));
  const double tmin = crit.minCoeff();
  const double tmax = crit.maxCoeff();
  if (!(T > tmin)) {
    throw std::invalid_argument(
        "curve_data: requires 2 T (max I_i + rho) > |j|^2; the energy " +
        std::to_string(T) + " does not exceed the lowest critical level " +
        std::to_string(tmin));
  }
  if (!(T < tmax)) {
    throw std::invalid_argument(
        "curve_data: requires 2 T (min I_i + rho) < |j|^2; the energy " +
        std::to_string(T) + " is not below the highest critical level " +
        std::to_string(tmax));
  }

  const double tau = 2.0 * T / jsq;
  const double denom = 1.0 - tau * rho;
  if (std::abs(denom) < 1e-15 * (1.0 + tau * rho)) {
    throw std::invalid_argument(
        "curve_data: requires 2 T rho != |j|^2 (gamma would be infinite)");
  }

  CurveData curve;
  curve.a = body.inertia.cwiseInverse();
  curve.rho = rho;
  curve.gamma = tau / denom;

  const std::array<double, 5> roots = {curve.a[0], curve.a[1], curve.a[2],
                                       -1.0 / rho, curve.gamma};
  curve.branch = roots;
  std::sort(curve.branch.begin(), curve.branch.end());
  const double scale =
      std::max(std::abs(curve.branch.front()), std::abs(curve.branch.back()));
  for (int i = 0; i + 1 < 5; ++i) {
    if (curve.branch[i + 1] - curve.branch[i] <= 1e-12 * std::max(1.0, scale)) {
      throw std::invalid_argument(
          "curve_data: branch values collide near lambda = " +
          std::to_string(curve.branch[i]) +
          " (the level sits on a critical energy or on repeated moments)");
    }
  }

  // Expand -prod (lambda - root) into monomial coefficients.
  std::array<double, 6> mono{};
  mono[0] = 1.0;
  int deg = 0;
  for (double r : roots) {
    for (int k = deg + 1; k > 0; --k) mono[k] = mono[k - 1] - r * mono[k];
    mono[0] *= -r;
    ++deg;
  }
  for (int k = 0; k <= 5; ++k) curve.coeffs[k] = -mono[k];

  const double prod_rho = (curve.a.array() + 1.0 / rho).prod();
  curve.c = std::sqrt((4.0 * jsq - 8.0 * rho * T) /
                      (rho * rho * rho * prod_rho));
  curve.d = body.radius * (jsq - 2.0 * rho * T) /
            (rho * rho * std::sqrt(prod_rho));
  curve.b0 = 2.0 * std::sqrt(jsq / (rho * rho * (1.0 / rho + curve.gamma) *
                                    prod_rho));
  curve.b1 = -curve.b0 / rho;
  return curve;
}

// ---- sphero-conical coordinates --------------------------------------------

// Squares y_i = x_i^2 of the sphere point with coordinates (lambda2, lambda3)
// (the third coordinate is pinned at 0):
//   y_i = a_i (a_i - lambda2)(a_i - lambda3) / prod_{k != i} (a_i - a_k).
inline Vec3 y_from_elliptic(double l2, double l3, const Vec3& a) {
  for (int i = 0; i < 3; ++i) {
    const int k = (i + 1) % 3;
    if (std::abs(a[i] - a[k]) <= 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff())) {
      throw std::invalid_argument(
          "y_from_elliptic: repeated reciprocal moments a_" +
          std::to_string(i + 1) + " = a_" + std::to_string(k + 1));
    }
  }
  Vec3 y;
  for (int i = 0; i < 3; ++i) {
    double denom = 1.0;
    for (int k = 0; k < 3; ++k)
      if (k != i) denom *= a[i] - a[k];
    y[i] = a[i] * (a[i] - l2) * (a[i] - l3) / denom;
  }
  return y;
}

// Coordinates (lambda2 <= lambda3) of a point on the sphere
// sum_i x_i^2 / a_i = 1: the two nonzero roots of
//   lambda^2 - (sum_i (a_i - x_i^2)) lambda + a1 a2 a3 sum_i x_i^2/a_i^2 = 0.
inline std::pair<double, double> elliptic_from_x(const Vec3& x,
                                                 const Vec3& a) {
  const double on_sphere = (x.array().square() / a.array()).sum();
  if (std::abs(on_sphere - 1.0) > 1e-9) {
    throw std::invalid_argument(
        "elliptic_from_x: x is off the coordinate sphere, sum x_i^2/a_i = " +
        std::to_string(on_sphere));
  }
  const double sum = (a.array() - x.array().square()).sum();
  const double prod =
      a.prod() * (x.array().square() / a.array().square()).sum();
  const double mid = 0.5 * sum;
  double disc = mid * mid - prod;
  if (disc < 0.0) {
    // Exactly real in exact arithmetic; roundoff near an umbilic point can
    // push the discriminant slightly negative.
    if (std::sqrt(-disc) > 1e-12 * std::max(1.0, std::abs(sum))) {
      throw std::runtime_error(
          "elliptic_from_x: complex coordinate roots beyond the roundoff "
          "clamp");
    }
    disc = 0.0;
  }
  const double hi = mid + std::sqrt(disc);
  const double lo = hi > 0.0 ? prod / hi : mid - std::sqrt(disc);
  return {lo, hi};
}

// Residuals of the three quadratic velocity identities tying a tangent pair
// (x, xdot) of the coordinate sphere to the coordinate speeds
// Lambda_k = d lambda_k / dt:
//   4 sum xdot_i^2        = (l2 - l3) [l2   L2^2/S(l2) - l3   L3^2/S(l3)],
//   4 sum xdot_i^2 / a_i  = (l2 - l3) [     L2^2/S(l2) -      L3^2/S(l3)],
//   4 sum_cyc (a_i xdot_i x_k - a_k xdot_k x_i)^2 / (a_i a_k)
//                         = (l2 - l3) [l2^2 L2^2/S(l2) - l3^2 L3^2/S(l3)],
// with S(lambda) = prod_i (a_i - lambda).
struct VelocityResiduals {
  double speed = 0.0;     // full squared speed
  double weighted = 0.0;  // 1/a_i-weighted squared speed
  double cyclic = 0.0;    // cyclic cross-term sum
};

inline VelocityResiduals velocity_identities(const Vec3& x, const Vec3& xdot,
                                             const Vec3& a) {
  const auto [l2, l3] = elliptic_from_x(x, a);
  if (std::abs(l2 - l3) < 1e-8 * std::max(1.0, std::abs(l2) + std::abs(l3))) {
    throw std::runtime_error(
        "velocity_identities: coordinates too close to the umbilic diagonal");
  }
  // Implicit differentiation of sum x_i^2 / (a_i - lambda_k) = 1.
  auto coordinate_speed = [&](double l) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double g = a[i] - l;
      num += 2.0 * x[i] * xdot[i] / g;
      den += x[i] * x[i] / (g * g);
    }
    return -num / den;
  };
  const double big2 = coordinate_speed(l2);
  const double big3 = coordinate_speed(l3);
  auto s_at = [&](double l) {
    return (a[0] - l) * (a[1] - l) * (a[2] - l);
  };
  const double q2 = big2 * big2 / s_at(l2);
  const double q3 = big3 * big3 / s_at(l3);
  const double gap = l2 - l3;

  VelocityResiduals out;
  out.speed = std::abs(4.0 * xdot.squaredNorm() - gap * (l2 * q2 - l3 * q3));
  out.weighted = std::abs(
      4.0 * (xdot.array().square() / a.array()).sum() - gap * (q2 - q3));
  double cyc = 0.0;
  for (int i = 0; i < 3; ++i) {
    const int k = (i + 1) % 3;
    const double num = a[i] * xdot[i] * x[k] - a[k] * xdot[k] * x[i];
    cyc += num * num / (a[i] * a[k]);
  }
  out.cyclic = std::abs(4.0 * cyc - gap * (l2 * l2 * q2 - l3 * l3 * q3));
  return out;
}

// ---- coordinate flow on the curve ------------------------------------------

// Rational flow of the coordinate pair for given lifts z_k and speed c:
//   d l2 / dtau = z2 (-c l3) / (l2 - l3),
//   d l3 / dtau = z3 (-c l2) / (l2 - l3).
inline std::pair<double, double> cxc_rates(double l2, double l3, double z2,
                                           double z3, double c) {
  const double gap = l2 - l3;
  if (std::abs(gap) < 1e-14 * std::max({1.0, std::abs(l2), std::abs(l3)})) {
    throw std::runtime_error(
        "cxc_rates: coordinates coincide, the flow is singular on the "
        "diagonal");
  }
  return {z2 * (-c * l3) / gap, z3 * (-c * l2) / gap};
}

namespace detail {
// Lift lambda to z = s sqrt(P(lambda)), clamping tiny negative P values that
// appear when a measured coordinate overshoots a branch value by roundoff.
inline double curve_lift(double lambda, int sheet, const CurveData& curve) {
  double p = curve.eval(lambda);
  if (p < 0.0) {
    const double span =
        std::max(1.0, curve.branch.back() - curve.branch.front());
    if (p < -1e-9 * span * span * span * span * span) {
      throw std::runtime_error(
          "curve_lift: P(lambda) < 0, the point is off the real locus");
    }
    p = 0.0;
  }
  return sheet * std::sqrt(p);
}
}  // namespace detail

inline std::pair<double, double> cxc_field(const EllipticPoint& pt, double c,
                                           const CurveData& curve) {
  return cxc_rates(pt.l2, pt.l3, detail::curve_lift(pt.l2, pt.s2, curve),
                   detail::curve_lift(pt.l3, pt.s3, curve), c);
}

// ---- coordinate path of a reparametrized orbit -----------------------------

// Sphero-conical trace of an orbit: coordinate values ordered by continuity
// plus sheet signs reconstructed from the direction of travel.
struct EllipticPath {
  std::vector<double> tau;
  std::vector<EllipticPoint> pts;
};

// Resample a trajectory of a reparametrized pair (dim 6) or extended (dim 8)
// field at spacing dt and convert the u component to curve coordinates.
//
// Sheet bookkeeping: each sign satisfies s_k = sigma_k sign(d lambda_k /
// dtau) for a per-orbit constant sigma_k, because the flow flips sheet
// exactly where the coordinate turns around at a branch value.  sigma_k is
// calibrated once against the rational flow with speed +c, then the signs
// follow the measured direction of travel.
inline EllipticPath elliptic_path(const Trajectory& traj,
                                  const CurveData& curve, double dt) {
  if (traj.samples.empty()) {
    throw std::invalid_argument("elliptic_path: empty trajectory");
  }
  const Eigen::Index dim = traj.front().y.size();
  if (dim != 6 && dim != 8) {
    throw std::invalid_argument(
        "elliptic_path: expected a pair (6) or extended (8) trajectory");
  }
  const double t0 = traj.front().t;
  const double t1 = traj.back().t;
  std::size_t count = 1;
  if (t1 > t0) {
    if (!(dt > 0.0)) {
      throw std::invalid_argument("elliptic_path: requires dt > 0");
    }
    count = static_cast<std::size_t>(std::ceil((t1 - t0) / dt - 1e-9)) + 1;
  }

  EllipticPath path;
  path.tau.resize(count);
  path.pts.resize(count);
  const Vec3 sqrt_a = curve.a.cwiseSqrt();
  for (std::size_t m = 0; m < count; ++m) {
    const double t =
        (m + 1 == count) ? t1 : t0 + static_cast<double>(m) * dt;
    const FlatVec y = interpolate(traj, t);
    const Vec3 u = y.segment<3>(0);
    const Vec3 x = sqrt_a.cwiseProduct(u);
    auto [lo, hi] = elliptic_from_x(x, curve.a);
    path.tau[m] = t;
    EllipticPoint& pt = path.pts[m];
    if (m == 0) {
      pt.l2 = lo;
      pt.l3 = hi;
    } else {
      // Nearest-match continuity with the previous sample.
      const EllipticPoint& prev = path.pts[m - 1];
      const double keep = std::abs(prev.l2 - lo) + std::abs(prev.l3 - hi);
      const double swap = std::abs(prev.l2 - hi) + std::abs(prev.l3 - lo);
      pt.l2 = keep <= swap ? lo : hi;
      pt.l3 = keep <= swap ? hi : lo;
    }
  }

  if (count < 3) return path;  // no direction information to set sheets

  // Centered travel directions of each coordinate.
  std::array<std::vector<double>, 2> diff;
  for (int k = 0; k < 2; ++k) diff[k].resize(count);
  auto coord = [&](std::size_t m, int k) {
    return k == 0 ? path.pts[m].l2 : path.pts[m].l3;
  };
  for (int k = 0; k < 2; ++k) {
    // Second-order one-sided differences at the ends: a contact inside the
    // final step would leave a first-order difference with the wrong sign.
    diff[k][0] = -3.0 * coord(0, k) + 4.0 * coord(1, k) - coord(2, k);
    diff[k][count - 1] = 3.0 * coord(count - 1, k) -
                         4.0 * coord(count - 2, k) + coord(count - 3, k);
    for (std::size_t m = 1; m + 1 < count; ++m)
      diff[k][m] = coord(m + 1, k) - coord(m - 1, k);
  }

  for (int k = 0; k < 2; ++k) {
    // Calibrate sigma_k at the sample where both the measured direction and
    // the +c prediction are most trustworthy.
    double best = 0.0;
    int sigma = +1;
    for (std::size_t m = 0; m < count; ++m) {
      EllipticPoint probe = path.pts[m];
      probe.s2 = probe.s3 = +1;
      double predicted;
      try {
        const auto rates = cxc_field(probe, curve.c, curve);
        predicted = k == 0 ? rates.first : rates.second;
      } catch (const std::runtime_error&) {
        continue;  // off-locus roundoff right at a branch contact
      }
      const double witness = std::abs(predicted * diff[k][m]);
      if (witness > best) {
        best = witness;
        // s = sign(measured rate / predicted unsigned rate) together with
        // s = sigma sign(measured rate) leaves sigma = sign(prediction).
        sigma = predicted >= 0.0 ? +1 : -1;
      }
    }
    int sign = sigma;
    for (std::size_t m = 0; m < count; ++m) {
      if (diff[k][m] != 0.0) sign = diff[k][m] > 0.0 ? sigma : -sigma;
      (k == 0 ? path.pts[m].s2 : path.pts[m].s3) = sign;
    }
  }
  return path;
}

// ---- quadrature of the two differentials ------------------------------------

// Accumulated increments of the differentials beta_i = lambda^i / z dlambda
// (i = 0, 1) between the moving divisor points, evaluated from the lambda3
// point to the lambda2 point:
//   total_i = int_{path of l2} beta_i - int_{path of l3} beta_i.
// On an orbit of the reparametrized flow total_1 stays constant and total_0
// grows linearly with speed c, so the report carries the drift of the first
// and the deviation of the second from c (tau_end - tau_0).
struct AbelIncrements {
  double total0 = 0.0;
  double total1 = 0.0;
  double drift1 = 0.0;
  double deviation0 = 0.0;
  double dtau = 0.0;
};

namespace detail {

// One coordinate's contribution to int lambda^i / z dlambda along the path,
// computed in the half-angle chart lambda = e_lo + (e_hi - e_lo) sin^2
// (theta) of its branch interval.  In that chart the differential is the
// smooth 2 lambda^i / sqrt(R(lambda)) dtheta with R the cubic left after
// splitting off the interval's branch roots, and the sheet is sign(sin 2
// theta) -- so the quadrature has no turning-point singularity.
struct AngleChart {
  double e_lo = 0.0;
  double e_hi = 0.0;
  std::array<double, 3> other{};  // remaining branch values

  double r_at(double lambda) const {
    return (lambda - other[0]) * (lambda - other[1]) * (lambda - other[2]);
  }
  double lambda_at(double theta) const {
    const double s = std::sin(theta);
    return e_lo + (e_hi - e_lo) * s * s;
  }
};

inline AngleChart locate_branch_interval(const std::vector<double>& lam,
                                         const CurveData& curve) {
  const auto [lo_it, hi_it] = std::minmax_element(lam.begin(), lam.end());
  const double span =
      std::max(1.0, curve.branch.back() - curve.branch.front());
  const double slack = 1e-7 * span;
  int idx = -1;
  for (int i = 0; i + 1 < 5; ++i) {
    if (curve.branch[i] <= *lo_it + slack &&
        *hi_it <= curve.branch[i + 1] + slack) {
      idx = i;
      break;
    }
  }
  if (idx < 0) {
    throw std::runtime_error(
        "abel_increments: a coordinate path is not confined to one branch "
        "interval (unresolved sheet ambiguity)");
  }
  AngleChart chart;
  chart.e_lo = curve.branch[idx];
  chart.e_hi = curve.branch[idx + 1];
  int w = 0;
  for (int i = 0; i < 5; ++i) {
    if (i != idx && i != idx + 1) chart.other[w++] = curve.branch[i];
  }
  if (chart.r_at(0.5 * (chart.e_lo + chart.e_hi)) <= 0.0) {
    throw std::runtime_error(
        "abel_increments: P is not positive on the occupied branch interval");
  }
  return chart;
}

// Unfold the angle sequence: candidates theta = +-base + k pi all produce the
// measured lambda; the sheet sign and continuity pick the cell.
inline std::vector<double> unfold_angles(const std::vector<double>& lam,
                                         const std::vector<int>& sheet,
                                         const AngleChart& chart) {
  constexpr double kPi = std::numbers::pi;
  const double width = chart.e_hi - chart.e_lo;
  const std::size_t count = lam.size();
  std::vector<double> theta(count);
  for (std::size_t m = 0; m < count; ++m) {
    const double frac =
        std::clamp((lam[m] - chart.e_lo) / width, 0.0, 1.0);
    const double base = std::asin(std::sqrt(frac));  // in [0, pi/2]
    if (m == 0) {
      theta[0] = sheet[0] >= 0 ? base : kPi - base;
      continue;
    }
    const double prev = theta[m - 1];
    double pick = 0.0;
    double pick_dist = std::numeric_limits<double>::infinity();
    bool pick_signed = false;
    for (const double sb : {base, -base}) {
      const double k = std::round((prev - sb) / kPi);
      for (int shift = -1; shift <= 1; ++shift) {
        const double cand = sb + (k + shift) * kPi;
        const double dist = std::abs(cand - prev);
        const double orient = std::sin(2.0 * cand);
        // Honor the recorded sheet: at a turning point the angle must pass
        // through the cell boundary, not reflect off it, and the sheet sign
        // is what distinguishes the two (mirror candidates are often the
        // closer ones there).  The recorded flip can lag the crossing by a
        // sample, which costs a self-cancelling one-step dent, never a
        // reflection.  Only candidates numerically at a boundary carry no
        // usable sign and fall back to distance.
        const bool signed_ok =
            std::abs(orient) <= 1e-9 ||
            (orient >= 0.0 ? sheet[m] >= 0 : sheet[m] < 0);
        if ((signed_ok && !pick_signed) ||
            (signed_ok == pick_signed && dist < pick_dist)) {
          pick = cand;
          pick_dist = dist;
          pick_signed = signed_ok;
        }
      }
    }
    if (pick_dist > 0.5 * kPi) {
      throw std::runtime_error(
          "abel_increments: unresolved sheet ambiguity, sampling too coarse "
          "to track the angle chart");
    }
    theta[m] = pick;
  }
  return theta;
}

// Path integrals of 2 lambda^i / sqrt(R) dtheta for i = 0, 1 over the
// unfolded angles, five-point Gauss-Legendre per sample step.
inline std::array<double, 2> angle_quadrature(const std::vector<double>& theta,
                                              const AngleChart& chart) {
  static constexpr std::array<double, 5> nodes = {
      -0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
      0.9061798459386640};
  static constexpr std::array<double, 5> weights = {
      0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
      0.4786286704993665, 0.2369268850561891};
  std::array<double, 2> total{0.0, 0.0};
  for (std::size_t m = 0; m + 1 < theta.size(); ++m) {
    const double half = 0.5 * (theta[m + 1] - theta[m]);
    const double mid = 0.5 * (theta[m + 1] + theta[m]);
    for (int q = 0; q < 5; ++q) {
      const double lambda = chart.lambda_at(mid + half * nodes[q]);
      const double g = 2.0 / std::sqrt(chart.r_at(lambda));
      total[0] += weights[q] * half * g;
      total[1] += weights[q] * half * g * lambda;
    }
  }
  return total;
}

}  // namespace detail

inline AbelIncrements abel_increments(const EllipticPath& path,
                                      const CurveData& curve) {
  AbelIncrements out;
  if (path.pts.size() < 2) return out;
  out.dtau = path.tau.back() - path.tau.front();

  const std::size_t count = path.pts.size();
  std::array<double, 2> totals{0.0, 0.0};
  for (int k = 0; k < 2; ++k) {
    std::vector<double> lam(count);
    std::vector<int> sheet(count);
    for (std::size_t m = 0; m < count; ++m) {
      lam[m] = k == 0 ? path.pts[m].l2 : path.pts[m].l3;
      sheet[m] = k == 0 ? path.pts[m].s2 : path.pts[m].s3;
    }
    const detail::AngleChart chart =
        detail::locate_branch_interval(lam, curve);
    const std::vector<double> theta =
        detail::unfold_angles(lam, sheet, chart);
    const std::array<double, 2> part = detail::angle_quadrature(theta, chart);
    const double orient = k == 0 ? +1.0 : -1.0;
    totals[0] += orient * part[0];
    totals[1] += orient * part[1];
  }
  out.total0 = totals[0];
  out.total1 = totals[1];
  out.drift1 = totals[1];
  out.deviation0 = totals[0] - curve.c * out.dtau;
  return out;
}

// ---- annulus classification -------------------------------------------------

// Verdict on whether a contact direction u admits a real completing moment
// direction on the level (j horizontal, energy T).  With
//   K_i = I_i / (1 - tau (I_i + rho)),   c_i = 1/(I_i + rho) - tau,
// real completions exist exactly where c1 c2 c3 <u, K u> <= 0; the zero set
// is the boundary pair of circles of the annulus swept by the orbit.
enum class BranchRegion { interior, boundary, exterior };

struct BranchClassification {
  Vec3 k_diag = Vec3::Zero();
  Vec3 c = Vec3::Zero();
  double value = 0.0;      // <u, K u>
  double indicator = 0.0;  // c1 c2 c3 <u, K u>
  BranchRegion region = BranchRegion::boundary;
};

inline BranchClassification branch_classify(const Vec3& u,
                                            const BodyParams& body,
                                            const Vec3& j, double T) {
  detail::require_unit(u, "branch_classify");
  const double rho = body.rho();
  if (!(rho > 0.0)) {
    throw std::invalid_argument("branch_classify: requires rho > 0");
  }
  const double jsq = j.squaredNorm();
  if (!(jsq > 0.0)) {
    throw std::invalid_argument("branch_classify: requires a nonzero moment");
  }
  if (std::abs(j.z()) > 1e-12 * std::sqrt(jsq)) {
    throw std::invalid_argument(
        "branch_classify: requires a horizontal moment (j3 = 0)");
  }
  const double tau = 2.0 * T / jsq;
  BranchClassification out;
  for (int i = 0; i < 3; ++i) {
    const double denom = 1.0 - tau * (body.inertia[i] + rho);
    if (std::abs(denom) < 1e-12 * (1.0 + tau * (body.inertia[i] + rho))) {
      throw std::runtime_error(
          "branch_classify: the level sits on the critical energy of axis " +
          std::to_string(i + 1) + " (1 - tau (I_i + rho) = 0)");
    }
    out.k_diag[i] = body.inertia[i] / denom;
    out.c[i] = 1.0 / (body.inertia[i] + rho) - tau;
  }
  out.value = u.dot(out.k_diag.cwiseProduct(u));
  const double cprod = out.c[0] * out.c[1] * out.c[2];
  out.indicator = cprod * out.value;
  const double scale =
      std::abs(cprod) * out.k_diag.cwiseAbs().maxCoeff();
  if (std::abs(out.indicator) <= 1e-12 * std::max(1.0, scale)) {
    out.region = BranchRegion::boundary;
  } else {
    out.region =
        out.indicator < 0.0 ? BranchRegion::interior : BranchRegion::exterior;
  }
  return out;
}

// ---- drift laws of the contact trace ----------------------------------------

// Checks on the planar contact point p of a full trajectory with horizontal
// moment j and energy T:
//   (i)   <p(t), j x e3> grows linearly with slope 2 r T in real time,
//   (ii)  (d<p,j>/dtau)^2 = -d^2 (gamma - lambda2)(gamma - lambda3)
//         pointwise (needs the curve), and
//   (iii) the running average of d<p,j>/dtau tends to zero.
// Turning points of <p, j> are located and matched against the annulus
// boundary <u, K u> = 0.
struct TranslationReport {
  double linear_residual = 0.0;     // max defect of (i)
  double quadratic_residual = 0.0;  // max defect of (ii); NaN without curve
  double average_rate = 0.0;        // running average of d<p,j>/dtau at the end
  double tau_total = 0.0;           // reparametrized duration of the window
  double turning_alignment = 0.0;   // max |<u,Ku>| / |K|_inf at the turnings
  int turning_count = 0;
};

namespace detail {

inline TranslationReport translation_laws_impl(const Trajectory& traj,
                                               const BodyParams& body,
                                               const Vec3& j, double T,
                                               const CurveData* curve,
                                               int samples_per_unit) {
  if (traj.front().y.size() != 15) {
    throw std::invalid_argument(
        "translation_laws: expected a full (dim 15) trajectory");
  }
  const double jsq = j.squaredNorm();
  if (!(jsq > 0.0)) {
    throw std::invalid_argument(
        "translation_laws: requires a nonzero moment");
  }
  if (std::abs(j.z()) > 1e-12 * std::sqrt(jsq)) {
    throw std::invalid_argument(
        "translation_laws: requires a horizontal moment (j3 = 0)");
  }
  const double rho = body.rho();
  const double t0 = traj.front().t;
  const double t1 = traj.back().t;
  TranslationReport report;
  report.quadratic_residual =
      curve ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  if (!(t1 > t0)) return report;

  const std::size_t count =
      2 + static_cast<std::size_t>((t1 - t0) * samples_per_unit);
  const double dt = (t1 - t0) / static_cast<double>(count - 1);
  const Vec3 sideways = j.cross(Vec3::UnitZ());

  // Annulus data for the turning-point check.
  const double tau_level = 2.0 * T / jsq;
  Vec3 k_diag;
  bool k_valid = true;
  for (int i = 0; i < 3; ++i) {
    const double denom = 1.0 - tau_level * (body.inertia[i] + rho);
    if (std::abs(denom) < 1e-12) {
      k_valid = false;
      break;
    }
    k_diag[i] = body.inertia[i] / denom;
  }

  auto moment_rate = [&](double t) {
    const FlatVec y = interpolate(traj, t);
    const Mat3 a = mat3_from_flat(y, 0);
    const Vec3 omega = y.segment<3>(9);
    return body.radius * ((a * omega).cross(Vec3::UnitZ())).dot(j);
  };

  double p0_side = 0.0;
  double p0_along = 0.0;
  double p_along = 0.0;
  double tau_acc = 0.0;
  double prev_weight = 0.0;
  double prev_rate_t = 0.0;
  const Vec3 sqrt_a =
      curve ? Vec3(curve->a.cwiseSqrt()) : Vec3(Vec3::Zero());
  for (std::size_t m = 0; m < count; ++m) {
    const double t = (m + 1 == count) ? t1 : t0 + static_cast<double>(m) * dt;
    const FlatVec y = interpolate(traj, t);
    const Mat3 a = mat3_from_flat(y, 0);
    const Vec3 omega = y.segment<3>(9);
    const Vec3 p = y.segment<3>(12);
    const Vec3 u = a.transpose() * Vec3::UnitZ();
    const double x_of_u = 1.0 / rho - u.dot(body.apply_j(u));
    if (!(x_of_u > 0.0)) {
      throw std::runtime_error(
          "translation_laws: X(u) is not positive along the trajectory");
    }
    const double weight = 1.0 / std::sqrt(x_of_u);
    const Vec3 pdot = body.radius * (a * omega).cross(Vec3::UnitZ());
    const double rate_t = pdot.dot(j);
    const double rate_tau = rate_t * std::sqrt(x_of_u);

    if (m == 0) {
      p0_side = p.dot(sideways);
      p0_along = p.dot(j);
    } else {
      tau_acc += 0.5 * dt * (weight + prev_weight);
      // Locate zeros of d<p,j>/dt between samples and test the annulus
      // boundary there.
      if (k_valid && prev_rate_t * rate_t < 0.0) {
        double lo = t - dt, hi = t;
        double f_lo = prev_rate_t;
        for (int it = 0; it < 60; ++it) {
          const double mid_t = 0.5 * (lo + hi);
          const double f_mid = moment_rate(mid_t);
          if (f_lo * f_mid <= 0.0) {
            hi = mid_t;
          } else {
            lo = mid_t;
            f_lo = f_mid;
          }
        }
        const FlatVec yz = interpolate(traj, 0.5 * (lo + hi));
        const Vec3 uz =
            mat3_from_flat(yz, 0).transpose() * Vec3::UnitZ();
        const double align = std::abs(uz.dot(k_diag.cwiseProduct(uz))) /
                             k_diag.cwiseAbs().maxCoeff();
        report.turning_alignment = std::max(report.turning_alignment, align);
        ++report.turning_count;
      }
    }
    prev_weight = weight;
    prev_rate_t = rate_t;
    p_along = p.dot(j);

    const double linear_defect = std::abs(
        p.dot(sideways) - p0_side -
        2.0 * body.radius * T * (t - t0));
    report.linear_residual = std::max(report.linear_residual, linear_defect);

    if (curve) {
      const Vec3 x = sqrt_a.cwiseProduct(u);
      const auto [lo, hi] = elliptic_from_x(x, curve->a);
      const double defect =
          rate_tau * rate_tau +
          curve->d * curve->d * (curve->gamma - lo) * (curve->gamma - hi);
      report.quadratic_residual =
          std::max(report.quadratic_residual, std::abs(defect));
    }
  }
  report.tau_total = tau_acc;
  report.average_rate =
      tau_acc > 0.0 ? (p_along - p0_along) / tau_acc : 0.0;
  return report;
}

}  // namespace detail

inline TranslationReport translation_laws(const Trajectory& traj,
                                          const BodyParams& body,
                                          const Vec3& j, double T,
                                          const CurveData& curve,
                                          int samples_per_unit = 100) {
  return detail::translation_laws_impl(traj, body, j, T, &curve,
                                       samples_per_unit);
}

inline TranslationReport translation_laws(const Trajectory& traj,
                                          const BodyParams& body,
                                          const Vec3& j, double T,
                                          int samples_per_unit = 100) {
  return detail::translation_laws_impl(traj, body, j, T, nullptr,
                                       samples_per_unit);
}

}  // namespace chapsphere
