#pragma once

// Normalization of the invariant levels to horizontal moment by a unimodular
// change of the pair variables, the associated quadratic pencil, the wedge
// map onto the Euclidean-algebra picture, and the conjugated-inertia matrix
// with its spectral invariants.

#include <array>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include <chapsphere/fields.hpp>
#include <chapsphere/model.hpp>
#include <chapsphere/vecrot.hpp>

namespace chapsphere {

// ---------------------------------------------------------------------------
// Quadratic pencil of the two level forms.  p(l) = alpha l^2 - beta l + gamma.

struct PencilData {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double discriminant = 0.0;
  std::array<double, 2> roots{std::nan(""), std::nan("")};  // ascending
  bool degenerate = false;  // leading coefficient vanishes
};

inline PencilData pencil(const Vec6& f) {
  PencilData p;
  p.alpha = f[0] * f[2] - f[1] * f[1];
  p.beta = f[0] * f[5] + f[2] * f[3] - 2.0 * f[1] * f[4];
  p.gamma = f[3] * f[5] - f[4] * f[4];
  p.discriminant = p.beta * p.beta - 4.0 * p.alpha * p.gamma;
  p.degenerate = (p.alpha == 0.0);
  if (!p.degenerate && p.discriminant >= 0.0) {
    const double s = std::sqrt(p.discriminant);
    const double lo = (p.beta - s) / (2.0 * p.alpha);
    const double hi = (p.beta + s) / (2.0 * p.alpha);
    p.roots = {std::min(lo, hi), std::max(lo, hi)};
  }
  return p;
}

// The six invariant levels cut out by a moment/energy pair.
inline Vec6 level_sextuple(const BodyParams& body, const Vec3& j,
                           double energy) {
  Vec6 f;
  f << 1.0, j[2], j.squaredNorm(), 1.0 / body.rho(), 0.0, 2.0 * energy;
  return f;
}

// ---------------------------------------------------------------------------
// Horizontal-moment normalization.

struct HorizontalReduction {
  Eigen::Matrix2d coeffs = Eigen::Matrix2d::Identity();  // det = +-1
  Vec6 f_levels;           // reduced invariant levels (f2 = f5 = 0)
  Vec3 j_horizontal;       // reduced moment, third component zero
  double rho_reduced = 0.0;
  double t_reduced = 0.0;
  Vec3 inertia_reduced;    // I + rho - rho~; algebraic data, may be negative
  bool inertia_physical = false;
  bool is_identity = false;
};

inline HorizontalReduction horizontalize(const BodyParams& body, const Vec3& j,
                                         double energy) {
  const double rho = body.rho();
  const double horiz_sq = j[0] * j[0] + j[1] * j[1];
  if (!(horiz_sq > 1e-20 * std::max(1.0, j.squaredNorm()))) {
    throw std::invalid_argument(
        "horizontalize: vertical moment admits no horizontal normalization");
  }
  if (!(energy > 0.0)) {
    throw std::invalid_argument("horizontalize: energy must be positive");
  }

  HorizontalReduction out;
  out.inertia_reduced = body.inertia;
  out.inertia_physical = true;

  if (j[2] == 0.0) {
    // Already horizontal; the levels are fixed by the identity substitution.
    out.f_levels = level_sextuple(body, j, energy);
    out.j_horizontal = j;
    out.rho_reduced = rho;
    out.t_reduced = energy;
    out.is_identity = true;
    return out;
  }

  const double half_ratio = j.squaredNorm() / (2.0 * rho);
  const double disc = (energy - half_ratio) * (energy - half_ratio) +
                      2.0 * j[2] * j[2] * energy / rho;
  if (disc == 0.0) {
    throw std::runtime_error("horizontalize: degenerate pencil discriminant");
  }
  // Continuous branch: reduces to the identity data as j3 -> 0 on levels
  // with energy above the horizontal threshold.
  const double t_new = 0.5 * (energy + half_ratio + std::sqrt(disc));
  const double rho_new = rho * t_new / energy;

  out.rho_reduced = rho_new;
  out.t_reduced = t_new;
  out.j_horizontal = Vec3(j[0], j[1], 0.0);
  out.inertia_reduced = body.inertia.array() + rho - rho_new;
  out.inertia_physical = (out.inertia_reduced.minCoeff() > 0.0);
  out.f_levels =
      (Vec6() << 1.0, 0.0, horiz_sq, 1.0 / rho_new, 0.0, 2.0 * t_new)
          .finished();

  // Coefficient matrix: F = M F~ M^T and G = M G~ M^T with F~, G~ diagonal.
  Eigen::Matrix2d big_f, big_g;
  big_f << 1.0, j[2], j[2], j.squaredNorm();
  big_g << 1.0 / rho, 0.0, 0.0, 2.0 * energy;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> f_eigen(big_f);
  const Eigen::Matrix2d sqrt_f =
      f_eigen.eigenvectors() *
      f_eigen.eigenvalues().cwiseSqrt().asDiagonal().toDenseMatrix();
  const Eigen::Matrix2d inner =
      sqrt_f.inverse() * big_g * sqrt_f.transpose().inverse();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> g_eigen(
      0.5 * (inner + inner.transpose()));

  // The eigenvalues of the compressed form are the pencil roots; ascending
  // order puts 1/rho~ first, matching the continuous branch above.
  const Eigen::Matrix2d basis = g_eigen.eigenvectors();
  const Eigen::Matrix2d scale =
      Eigen::Vector2d(1.0, std::sqrt(horiz_sq)).asDiagonal();
  out.coeffs = sqrt_f * basis * scale.inverse();
  return out;
}

// ---------------------------------------------------------------------------
// Wedge map onto the Euclidean-algebra variables.

struct WedgePoint {
  Vec3 q;
  Vec3 r;
};

inline WedgePoint wedge(const ExtendedState& s) {
  return {s.u.cross(s.v), s.z * s.v - s.zeta * s.u};
}

// Predicted Euclidean-algebra levels from the six pair levels.
inline Vec4 h_from_f(const Vec6& f, const BodyParams& body) {
  const double trace_j = body.jdiag().sum();
  Vec4 h;
  h[0] = f[0] * f[2] - f[1] * f[1];
  h[1] = 0.0;
  h[2] = f[3] * f[5] - f[4] * f[4];
  h[3] = f[0] * f[5] + f[2] * f[3] - 2.0 * f[1] * f[4] - trace_j * h[0];
  return h;
}

// ---------------------------------------------------------------------------
// Conjugated inverse augmented inertia and its spectral invariants.

inline Mat3 b_matrix(const Rotation& a, const BodyParams& body) {
  return a.matrix() * body.jdiag().asDiagonal() * a.transposed().matrix();
}

struct BMatrixReport {
  double trace1 = 0.0;
  double trace2 = 0.0;
  double trace3 = 0.0;
  double quadric_residual = 0.0;  // kinetic identity in matrix form
};

inline BMatrixReport b_matrix_report(const Mat3& b, const BodyParams& body,
                                     const Vec3& j, double energy) {
  BMatrixReport rep;
  rep.trace1 = b.trace();
  rep.trace2 = (b * b).trace();
  rep.trace3 = (b * b * b).trace();
  const double y = (b * j).dot(Vec3::UnitZ());
  const double x = 1.0 / body.rho() - (b * Vec3::UnitZ()).dot(Vec3::UnitZ());
  const double z = 2.0 * energy - (b * j).dot(j);
  rep.quadric_residual = y * y - x * z;
  return rep;
}

}  // namespace chapsphere
