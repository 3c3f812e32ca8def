#pragma once

// The vector fields of the rolling-ball system in all of its coordinate
// realizations (full configuration space, pair chart, polynomial double
// cover, Euclidean e(3) chart, symmetric-matrix form), their first
// integrals, and a finite-difference divergence probe.

#include "chapsphere/model.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace chapsphere {

using FlatVec = Eigen::VectorXd;
using Vec4 = Eigen::Matrix<double, 4, 1>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

// A named vector field over a flat state array.  rotation_blocks lists the
// offsets of row-major 3x3 blocks that live on SO(3) and may be re-projected
// by the integrator.
struct FieldEval {
  std::string name;
  int dim = 0;
  std::function<FlatVec(const FlatVec&)> deriv;
  std::vector<int> rotation_blocks;

  FlatVec operator()(const FlatVec& y) const { return deriv(y); }
};

// ---- flat layouts ---------------------------------------------------------

inline Mat3 mat3_from_flat(const FlatVec& y, int offset) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = y[offset + 3 * r + c];
  return m;
}

inline void mat3_to_flat(const Mat3& m, FlatVec& y, int offset) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) y[offset + 3 * r + c] = m(r, c);
}

// full state: [A row-major (9) | omega (3) | p (3)]
inline FlatVec pack_full(const FullState& s) {
  FlatVec y(15);
  mat3_to_flat(s.A.matrix(), y, 0);
  y.segment<3>(9) = s.omega;
  y.segment<3>(12) = s.p;
  return y;
}

// The attitude block of an integrated flat state carries truncation-level
// orthogonality drift; extraction projects it back to SO(3).
inline FullState unpack_full(const FlatVec& y) {
  FullState s;
  s.A = orthonormalize(mat3_from_flat(y, 0));
  s.omega = y.segment<3>(9);
  s.p = y.segment<3>(12);
  return s;
}

// pair: [u | v]
inline FlatVec pack_pair(const PairState& s) {
  FlatVec y(6);
  y.segment<3>(0) = s.u;
  y.segment<3>(3) = s.v;
  return y;
}

inline PairState unpack_pair(const FlatVec& y) {
  return {y.segment<3>(0), y.segment<3>(3)};
}

// extended: [u | z | v | zeta]
inline FlatVec pack_ext(const ExtendedState& e) {
  FlatVec y(8);
  y.segment<3>(0) = e.u;
  y[3] = e.z;
  y.segment<3>(4) = e.v;
  y[7] = e.zeta;
  return y;
}

inline ExtendedState unpack_ext(const FlatVec& y) {
  ExtendedState e;
  e.u = y.segment<3>(0);
  e.z = y[3];
  e.v = y.segment<3>(4);
  e.zeta = y[7];
  return e;
}

// ---- the full system ------------------------------------------------------

struct FullDerivative {
  Mat3 a_dot;
  Vec3 omega_dot;
  Vec3 p_dot;
};

// p' = r (A omega) x e3;  A' = A hat(omega);  omega' solves
// i_rho_u(omega', u) = (I omega) x omega with u = A^{-1} e3.
inline FullDerivative full_field(const FullState& s, const BodyParams& body) {
  const Vec3 u = s.A.apply_inverse(Vec3::UnitZ());
  FullDerivative d;
  d.omega_dot =
      detail::i_rho_u_inv_formula(body.apply_inertia(s.omega).cross(s.omega), u, body);
  d.a_dot = s.A.matrix() * hat(s.omega);
  d.p_dot = body.radius * (s.A * s.omega).cross(Vec3::UnitZ());
  return d;
}

// ---- pair-chart fields ----------------------------------------------------

// Simultaneous rotation of (u, v) about a moving axis nu.
inline PairState rotation_pair_field(const PairState& s, const Vec3& nu) {
  return {s.u.cross(nu), s.v.cross(nu)};
}

// u' = u x omega, v' = v x omega.
inline PairState pair_field(const PairState& s, const BodyParams& body) {
  return rotation_pair_field(s, detail::i_rho_u_inv_formula(s.v, s.u, body));
}

// The companion rotation field with axis nu = (I + rho) omega = v + (Y/X) u;
// it preserves the same X^{-1/2}-weighted volume as pair_field.
inline PairState second_pair_field(const PairState& s, const BodyParams& body) {
  const double x = 1.0 / body.rho() - s.u.dot(body.apply_j(s.u));
  const double y = s.u.dot(body.apply_j(s.v));
  return rotation_pair_field(s, s.v + (y / x) * s.u);
}

// ---- polynomial fields on the double cover --------------------------------

// u' = z u x Jv - zeta u x Ju;  v' = z v x Jv - zeta v x Ju;
// z' = det(u, Ju, Jv);  zeta' = det(v, Ju, Jv).  Homogeneous of degree 3.
inline ExtendedState xi_ext(const ExtendedState& e, const BodyParams& body) {
  const Vec3 ju = body.apply_j(e.u);
  const Vec3 jv = body.apply_j(e.v);
  ExtendedState d;
  d.u = e.z * e.u.cross(jv) - e.zeta * e.u.cross(ju);
  d.v = e.z * e.v.cross(jv) - e.zeta * e.v.cross(ju);
  d.z = e.u.dot(ju.cross(jv));
  d.zeta = e.v.dot(ju.cross(jv));
  return d;
}

// u' = z u x v;  v' = -zeta v x u;  z' = det(v, u, Ju);  zeta' = det(v, u, Jv).
inline ExtendedState eta_ext(const ExtendedState& e, const BodyParams& body) {
  const Vec3 ju = body.apply_j(e.u);
  const Vec3 jv = body.apply_j(e.v);
  ExtendedState d;
  d.u = e.z * e.u.cross(e.v);
  d.v = -e.zeta * e.v.cross(e.u);
  d.z = e.v.dot(e.u.cross(ju));
  d.zeta = e.v.dot(e.u.cross(jv));
  return d;
}

// The six quadratic first integrals of both polynomial fields:
// (<u,u>, <u,v>, <v,v>, <u,Ju>+z^2, <u,Jv>+z zeta, <v,Jv>+zeta^2).
inline Vec6 f_invariants(const ExtendedState& e, const BodyParams& body) {
  const Vec3 ju = body.apply_j(e.u);
  const Vec3 jv = body.apply_j(e.v);
  Vec6 f;
  f << e.u.dot(e.u), e.u.dot(e.v), e.v.dot(e.v), e.u.dot(ju) + e.z * e.z,
      e.u.dot(jv) + e.z * e.zeta, e.v.dot(jv) + e.zeta * e.zeta;
  return f;
}

// ---- fields on the Euclidean-algebra chart (q, r) --------------------------

struct E3State {
  Vec3 q = Vec3::Zero();
  Vec3 r = Vec3::Zero();
};

// Cofactor diagonal of J: diag(J2 J3, J3 J1, J1 J2).
inline Vec3 co_jdiag(const BodyParams& body) {
  const Vec3 j = body.jdiag();
  return Vec3(j.y() * j.z(), j.z() * j.x(), j.x() * j.y());
}

struct E3Fields {
  E3State xi;
  E3State eta;
};

// xi: q' = q x Jr, r' = q x (J^co q) + r x Jr.
// eta: q' = q x r, r' = -q x Jq.
inline E3Fields e3_fields(const Vec3& q, const Vec3& r, const BodyParams& body) {
  const Vec3 jq = body.apply_j(q);
  const Vec3 jr = body.apply_j(r);
  const Vec3 cq = co_jdiag(body).cwiseProduct(q);
  E3Fields out;
  out.xi.q = q.cross(jr);
  out.xi.r = q.cross(cq) + r.cross(jr);
  out.eta.q = q.cross(r);
  out.eta.r = -q.cross(jq);
  return out;
}

// First integrals of both e(3) fields:
// (<q,q>, <q,r>, <q,J^co q> + <r,Jr>, -<q,Jq> + <r,r>).
inline Vec4 h_invariants(const Vec3& q, const Vec3& r, const BodyParams& body) {
  Vec4 h;
  h << q.dot(q), q.dot(r), q.dot(co_jdiag(body).cwiseProduct(q)) + r.dot(body.apply_j(r)),
      -q.dot(body.apply_j(q)) + r.dot(r);
  return h;
}

// ---- symmetric-matrix realization ------------------------------------------

// xi(B) = B j + rho <Bj, e3> / (1 - rho <B e3, e3>) * B e3.
inline Vec3 b_matrix_direction(const Mat3& b, const Vec3& j,
                               const BodyParams& body) {
  const double rho = body.rho();
  const Vec3 be3 = b * Vec3::UnitZ();
  const double denom = 1.0 - rho * be3.z();
  if (std::abs(denom) < 1e-12) {
    throw std::runtime_error(
        "b_matrix_direction: denominator 1 - rho <B e3, e3> vanishes");
  }
  const Vec3 bj = b * j;
  return bj + (rho * bj.z() / denom) * be3;
}

// B' = [hat(xi(B)), B]; isospectral, so trace B^i are first integrals.
inline Mat3 b_matrix_field(const Mat3& b, const Vec3& j,
                           const BodyParams& body) {
  if ((b - b.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
    throw std::invalid_argument("b_matrix_field: B must be symmetric");
  }
  const Mat3 k = hat(b_matrix_direction(b, j, body));
  return k * b - b * k;
}

// ---- divergence probe -------------------------------------------------------

// Central-difference divergence of (weight * field) at a point, step h in
// each coordinate.
inline double divergence_probe(
    const FieldEval& field, const FlatVec& point,
    const std::function<double(const FlatVec&)>& weight, double h) {
  if (!(h > 0.0)) {
    throw std::invalid_argument("divergence_probe: h must be positive");
  }
  FlatVec x = point;
  double div = 0.0;
  for (int i = 0; i < field.dim; ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double plus = weight(x) * field(x)[i];
    x[i] = xi - h;
    const double minus = weight(x) * field(x)[i];
    x[i] = xi;
    div += (plus - minus) / (2.0 * h);
  }
  return div;
}

// ---- FieldEval factories ----------------------------------------------------

inline FieldEval make_full_field(const BodyParams& body) {
  FieldEval f;
  f.name = "full";
  f.dim = 15;
  f.rotation_blocks = {0};
  f.deriv = [body](const FlatVec& y) -> FlatVec {
    const Mat3 a = mat3_from_flat(y, 0);
    const Vec3 omega = y.segment<3>(9);
    const Vec3 u = a.transpose() * Vec3::UnitZ();
    FlatVec d(15);
    mat3_to_flat(a * hat(omega), d, 0);
    d.segment<3>(9) = detail::i_rho_u_inv_formula(
        body.apply_inertia(omega).cross(omega), u, body);
    d.segment<3>(12) = body.radius * (a * omega).cross(Vec3::UnitZ());
    return d;
  };
  return f;
}

inline FieldEval make_pair_field(const BodyParams& body) {
  FieldEval f;
  f.name = "pair";
  f.dim = 6;
  f.deriv = [body](const FlatVec& y) -> FlatVec {
    return pack_pair(pair_field(unpack_pair(y), body));
  };
  return f;
}

inline FieldEval make_second_pair_field(const BodyParams& body) {
  FieldEval f;
  f.name = "pair-second";
  f.dim = 6;
  f.deriv = [body](const FlatVec& y) -> FlatVec {
    return pack_pair(second_pair_field(unpack_pair(y), body));
  };
  return f;
}

namespace detail {
inline double sqrt_x(const Vec3& u, const BodyParams& body) {
  const double x = 1.0 / body.rho() - u.dot(body.apply_j(u));
  if (!(x > 0.0)) {
    throw std::runtime_error("sqrt_x: X(u) is not positive");
  }
  return std::sqrt(x);
}
}  // namespace detail

// The commuting pair-chart realizations: sqrt(X) times the two rotation
// fields (the reparametrized time makes them commute).
inline FieldEval make_xi_pair_field(const BodyParams& body) {
  FieldEval f;
  f.name = "xi-pair";
  f.dim = 6;
  f.deriv = [body](const FlatVec& y) -> FlatVec {
    const PairState s = unpack_pair(y);
    return detail::sqrt_x(s.u, body) * pack_pair(pair_field(s, body));
  };
  return f;
}

inline FieldEval make_eta_pair_field(const BodyParams& body) {
  FieldEval f;
  f.name = "eta-pair";
  f.dim = 6;
  f.deriv = [body](const FlatVec& y) -> FlatVec {
    const PairState s = unpack_pair(y);
    return detail::sqrt_x(s.u, body) * pack_pair(second_pair_field(s, body));
  };
  return f;
}

inline FieldEval make_xi_ext_field(const BodyParams& body) {
  FieldEval f;
  f.name = "xi-ext";
  f.dim = 8;
  f.deriv = [body](const FlatVec& y) -> FlatVec {
    return pack_ext(xi_ext(unpack_ext(y), body));
  };
  return f;
}

inline FieldEval make_eta_ext_field(const BodyParams& body) {
  FieldEval f;
  f.name = "eta-ext";
  f.dim = 8;
  f.deriv = [body](const FlatVec& y) -> FlatVec {
    return pack_ext(eta_ext(unpack_ext(y), body));
  };
  return f;
}

inline FieldEval make_xi_e3_field(const BodyParams& body) {
  FieldEval f;
  f.name = "xi-e3";
  f.dim = 6;
  f.deriv = [body](const FlatVec& y) -> FlatVec {
    const E3Fields fields = e3_fields(y.segment<3>(0), y.segment<3>(3), body);
    FlatVec d(6);
    d.segment<3>(0) = fields.xi.q;
    d.segment<3>(3) = fields.xi.r;
    return d;
  };
  return f;
}

inline FieldEval make_eta_e3_field(const BodyParams& body) {
  FieldEval f;
  f.name = "eta-e3";
  f.dim = 6;
  f.deriv = [body](const FlatVec& y) -> FlatVec {
    const E3Fields fields = e3_fields(y.segment<3>(0), y.segment<3>(3), body);
    FlatVec d(6);
    d.segment<3>(0) = fields.eta.q;
    d.segment<3>(3) = fields.eta.r;
    return d;
  };
  return f;
}

inline FieldEval make_b_matrix_field(const BodyParams& body, const Vec3& j) {
  FieldEval f;
  f.name = "b-matrix";
  f.dim = 9;
  f.deriv = [body, j](const FlatVec& y) -> FlatVec {
    const Mat3 b = mat3_from_flat(y, 0);
    const Mat3 k = hat(b_matrix_direction(b, j, body));
    FlatVec d(9);
    mat3_to_flat(k * b - b * k, d, 0);
    return d;
  };
  return f;
}

}  // namespace chapsphere
