#pragma once

// Dense 3-vector / 3x3-matrix helpers and a thin SO(3) wrapper.
// Everything downstream works in explicit matrix coordinates, so rotations
// are stored as plain 3x3 matrices rather than quaternions.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace chapsphere {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Membership tolerance for SO(3): max entry of R^T R - 1 and |det R - 1|.
inline constexpr double kRotationTol = 1e-12;

// w -> antisymmetric matrix, hat(w) x = w cross x.
inline Mat3 hat(const Vec3& w) {
  Mat3 m;
  m <<    0.0, -w.z(),  w.y(),
        w.z(),    0.0, -w.x(),
       -w.y(),  w.x(),    0.0;
  return m;
}

class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  // Validating constructor; rejects anything measurably off SO(3).
  explicit Rotation(const Mat3& m) : m_(m) {
    const double ortho =
        (m_.transpose() * m_ - Mat3::Identity()).cwiseAbs().maxCoeff();
    const double det_err = std::abs(m_.determinant() - 1.0);
    if (!(ortho <= kRotationTol) || !(det_err <= kRotationTol)) {
      throw std::invalid_argument(
          "Rotation: matrix is not special orthogonal (orthogonality defect " +
          std::to_string(ortho) + ", det defect " + std::to_string(det_err) +
          ")");
    }
  }

  // For matrices already special orthogonal by construction (closed-form
  // exponentials, polar factors, products of rotations).
  static Rotation unchecked(const Mat3& m) {
    Rotation r;
    r.m_ = m;
    return r;
  }

  static Rotation identity() { return Rotation(); }

  const Mat3& matrix() const { return m_; }
  Vec3 operator*(const Vec3& x) const { return m_ * x; }
  Rotation operator*(const Rotation& o) const { return unchecked(m_ * o.m_); }
  Rotation transposed() const { return unchecked(m_.transpose()); }
  // R^{-1} x without forming the inverse.
  Vec3 apply_inverse(const Vec3& x) const { return m_.transpose() * x; }

 private:
  Mat3 m_;
};

// exp(t hat(w)) by the Rodrigues closed form.  Below angle 1e-6 the
// sin(theta)/theta and (1-cos theta)/theta^2 factors switch to their series
// to avoid 0/0.
inline Rotation exp_rot(const Vec3& w, double t) {
  const Vec3 v = t * w;
  const double theta = v.norm();
  const Mat3 k = hat(v);
  double a, b;
  if (theta < 1e-6) {
    const double th2 = theta * theta;
    a = 1.0 - th2 / 6.0;
    b = 0.5 - th2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
  return Rotation::unchecked(Mat3::Identity() + a * k + b * (k * k));
}

// Nearest special-orthogonal matrix (polar factor).  Input must already be
// close to a rotation: singular values within 0.5 of 1.  Orientation-reversing
// or near-singular input is an error rather than a silent sign fix.
inline Rotation orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sigma = svd.singularValues();
  if (!(sigma.minCoeff() > 0.25)) {
    throw std::invalid_argument(
        "orthonormalize: input is near-singular (smallest singular value " +
        std::to_string(sigma.minCoeff()) + ")");
  }
  if ((sigma.array() - 1.0).abs().maxCoeff() > 0.5 + 1e-9) {
    throw std::invalid_argument(
        "orthonormalize: input is farther than 0.5 from SO(3) in spectral "
        "norm");
  }
  const Mat3 q = svd.matrixU() * svd.matrixV().transpose();
  if (q.determinant() < 0.0) {
    throw std::invalid_argument(
        "orthonormalize: polar factor has determinant -1 (orientation-"
        "reversing input)");
  }
  return Rotation(q);
}

}  // namespace chapsphere
