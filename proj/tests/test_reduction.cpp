#include <chapsphere/reduction.hpp>

#include <cmath>
#include <stdexcept>

#include <gtest/gtest.h>

#include <chapsphere/fields.hpp>
#include <chapsphere/integrate.hpp>
#include <chapsphere/model.hpp>

#include "fixtures.hpp"

namespace {

using chapsphere::BodyParams;
using chapsphere::ExtendedState;
using chapsphere::Mat3;
using chapsphere::Vec3;
using chapsphere::Vec4;
using chapsphere::Vec6;

TEST(Pencil, ReferenceLevelCoefficients) {
  const BodyParams body = chaptest::stb();
  const Vec6 f =
      chapsphere::level_sextuple(body, chaptest::shr_moment(), chaptest::kShrEnergy);
  const auto p = chapsphere::pencil(f);
  EXPECT_NEAR(p.alpha, 4.0, 1e-12);
  EXPECT_NEAR(p.beta, 5.6, 1e-12);
  EXPECT_NEAR(p.gamma, 1.6, 1e-12);
  EXPECT_NEAR(p.discriminant, 5.76, 1e-12);
  EXPECT_FALSE(p.degenerate);
  EXPECT_NEAR(p.roots[0], 0.4, 1e-12);
  EXPECT_NEAR(p.roots[1], 1.0, 1e-12);
}

TEST(Pencil, RootsAvoidInverseAugmentedSpectrum) {
  // The two pencil roots stay away from the eigenvalues of the inverse
  // augmented inertia for the reference data.
  const BodyParams body = chaptest::stb();
  const Vec6 f =
      chapsphere::level_sextuple(body, chaptest::shr_moment(), chaptest::kShrEnergy);
  const auto p = chapsphere::pencil(f);
  const Vec3 jd = body.jdiag();
  for (const double root : p.roots) {
    for (int i = 0; i < 3; ++i) {
      EXPECT_GT(std::abs(root - jd[i]), 1e-2);
    }
  }
}

TEST(Pencil, RepeatedRootHasZeroDiscriminant) {
  Vec6 f;
  f << 1.0, 0.0, 1.0, 1.0, 0.0, 1.0;
  const auto p = chapsphere::pencil(f);
  EXPECT_NEAR(p.discriminant, 0.0, 1e-15);
  EXPECT_NEAR(p.roots[0], 1.0, 1e-12);
  EXPECT_NEAR(p.roots[1], 1.0, 1e-12);
}

TEST(Pencil, FlagsVanishingLeadingCoefficient) {
  Vec6 f;
  f << 1.0, 1.0, 1.0, 2.0, 0.0, 3.0;  // f1 f3 - f2^2 = 0
  const auto p = chapsphere::pencil(f);
  EXPECT_TRUE(p.degenerate);
  EXPECT_TRUE(std::isnan(p.roots[0]));
}

TEST(Pencil, ClosedFormForMomentEnergyLevels) {
  const BodyParams body = chaptest::stb();
  const double rho = body.rho();
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 j = chaptest::random_vec(-3.0, 3.0);
    const double energy = 0.1 + chaptest::uniform(0.0, 5.0);
    const auto p = chapsphere::pencil(chapsphere::level_sextuple(body, j, energy));
    EXPECT_NEAR(p.alpha, j[0] * j[0] + j[1] * j[1], 1e-12);
    EXPECT_NEAR(p.beta, 2.0 * energy + j.squaredNorm() / rho, 1e-12);
    EXPECT_NEAR(p.gamma, 2.0 * energy / rho, 1e-12);
  }
}

TEST(Wedge, HandValues) {
  ExtendedState s;
  s.u = Vec3::UnitX();
  s.v = Vec3::UnitY();
  s.z = 1.0;
  s.zeta = 0.0;
  const auto w = chapsphere::wedge(s);
  EXPECT_LT((w.q - Vec3::UnitZ()).norm(), 1e-15);
  EXPECT_LT((w.r - Vec3::UnitY()).norm(), 1e-15);

  const ExtendedState ref = chaptest::reference_shr_extended();
  const auto wr = chapsphere::wedge(ref);
  EXPECT_NEAR(wr.q[0], 1.2649110640673518, 1e-12);
  EXPECT_NEAR(wr.q[1], 0.0, 1e-12);
  EXPECT_NEAR(wr.q[2], -1.5491933384829668, 1e-12);
  EXPECT_NEAR(wr.r[0], 1.2649110640673518, 1e-12);
  EXPECT_NEAR(wr.r[1], 0.0, 1e-12);
  EXPECT_NEAR(wr.r[2], 1.0327955589886444, 1e-12);
}

TEST(Wedge, ImageIsOrthogonalPair) {
  for (int trial = 0; trial < 200; ++trial) {
    const ExtendedState s = chaptest::random_shr_extended();
    const auto w = chapsphere::wedge(s);
    EXPECT_LT(std::abs(w.q.dot(w.r)), 1e-10);
  }
}

TEST(HFromF, ReferenceLevelValues) {
  const BodyParams body = chaptest::stb();
  const Vec6 f =
      chapsphere::level_sextuple(body, chaptest::shr_moment(), chaptest::kShrEnergy);
  const Vec4 h = chapsphere::h_from_f(f, body);
  EXPECT_NEAR(h[0], 4.0, 1e-12);
  EXPECT_NEAR(h[1], 0.0, 1e-15);
  EXPECT_NEAR(h[2], 1.6, 1e-12);
  EXPECT_NEAR(h[3], 5.6 - 13.0 / 12.0 * 4.0, 1e-12);
}

TEST(HFromF, MatchesWedgeInvariantsOnLevels) {
  // The predicted Euclidean-algebra levels agree with the invariants
  // evaluated after the wedge map, on states cut out by the pair levels.
  const BodyParams body = chaptest::stb();
  const Vec6 f =
      chapsphere::level_sextuple(body, chaptest::shr_moment(), chaptest::kShrEnergy);
  const Vec4 predicted = chapsphere::h_from_f(f, body);
  for (int trial = 0; trial < 1000; ++trial) {
    const ExtendedState s = chaptest::random_shr_extended();
    const auto w = chapsphere::wedge(s);
    const Vec4 measured = chapsphere::h_invariants(w.q, w.r, body);
    EXPECT_LT((measured - predicted).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(BMatrix, IdentityAttitudeGivesInverseAugmentedInertia) {
  const BodyParams body = chaptest::stb();
  const Mat3 b = chapsphere::b_matrix(chapsphere::Rotation::identity(), body);
  EXPECT_LT((b - Mat3(body.jdiag().asDiagonal())).cwiseAbs().maxCoeff(), 1e-15);

  const auto rep =
      chapsphere::b_matrix_report(b, body, Vec3(2.0, 0.0, 0.0), 1.0);
  EXPECT_NEAR(rep.trace1, 13.0 / 12.0, 1e-12);
  EXPECT_NEAR(rep.trace2, 61.0 / 144.0, 1e-12);
  EXPECT_NEAR(rep.trace3, 307.0 / 1728.0, 1e-12);
  EXPECT_NEAR(rep.quadric_residual, 0.0, 1e-12);
}

TEST(BMatrix, TracesAreConjugationInvariant) {
  const BodyParams body = chaptest::stb();
  for (int trial = 0; trial < 50; ++trial) {
    const chapsphere::Rotation a = chaptest::random_rotation();
    const Mat3 b = chapsphere::b_matrix(a, body);
    const auto rep = chapsphere::b_matrix_report(b, body, Vec3::UnitX(), 1.0);
    EXPECT_NEAR(rep.trace1, 13.0 / 12.0, 1e-12);
    EXPECT_NEAR(rep.trace2, 61.0 / 144.0, 1e-12);
    EXPECT_NEAR(rep.trace3, 307.0 / 1728.0, 1e-12);
  }
}

TEST(BMatrix, SpectralDriftStaysSmallAlongOrbit) {
  const BodyParams body = chaptest::stb();
  const chapsphere::PairState start = chaptest::reference_shr_pair();
  const chapsphere::FullState full = chapsphere::full_state_from_pair(
      start, chaptest::shr_moment(), body);

  const auto field = chapsphere::make_full_field(body);
  const chapsphere::FlatVec y0 = chapsphere::pack_full(full);
  const auto traj = chapsphere::integrate(field, y0, 0.0, 10.0, {});

  const Mat3 b0 = chapsphere::b_matrix(full.A, body);
  const auto rep0 = chapsphere::b_matrix_report(b0, body, chaptest::shr_moment(),
                                                chaptest::kShrEnergy);
  double worst = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double t = 0.1 * k;
    const chapsphere::FullState st =
        chapsphere::unpack_full(chapsphere::interpolate(traj, t));
    const Mat3 b = chapsphere::b_matrix(st.A, body);
    const auto rep = chapsphere::b_matrix_report(
        b, body, chaptest::shr_moment(), chaptest::kShrEnergy);
    worst = std::max(worst, std::abs(rep.trace1 - rep0.trace1));
    worst = std::max(worst, std::abs(rep.trace2 - rep0.trace2));
    worst = std::max(worst, std::abs(rep.trace3 - rep0.trace3));
    EXPECT_LT(std::abs(rep.quadric_residual), 1e-8);
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Horizontalize, HorizontalMomentIsIdentity) {
  const BodyParams body = chaptest::stb();
  const auto red = chapsphere::horizontalize(body, chaptest::shr_moment(),
                                             chaptest::kShrEnergy);
  EXPECT_TRUE(red.is_identity);
  EXPECT_LT((red.coeffs - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(),
            1e-15);
  EXPECT_NEAR(red.rho_reduced, body.rho(), 1e-15);
  EXPECT_NEAR(red.t_reduced, chaptest::kShrEnergy, 1e-15);
  EXPECT_LT((red.j_horizontal - chaptest::shr_moment()).norm(), 1e-15);
  EXPECT_TRUE(red.inertia_physical);
}

TEST(Horizontalize, TiltedMomentHandValues) {
  const BodyParams body = chaptest::stb();
  const Vec3 j(2.0, 0.0, 1.0);
  const auto red = chapsphere::horizontalize(body, j, 1.0);

  EXPECT_FALSE(red.is_identity);
  // 2 t~ = t + |j|^2/(2 rho) + sqrt((t - |j|^2/(2 rho))^2 + 2 j3^2 t / rho)
  const double expected_t = 0.5 * (3.5 + std::sqrt(4.25));
  EXPECT_NEAR(red.t_reduced, expected_t, 1e-9);
  EXPECT_NEAR(red.rho_reduced, expected_t, 1e-9);  // rho~ = rho t~ / t
  EXPECT_NEAR(red.t_reduced / red.rho_reduced, 1.0 / body.rho(), 1e-14);

  EXPECT_LT((red.j_horizontal - Vec3(2.0, 0.0, 0.0)).norm(), 1e-15);
  EXPECT_NEAR(red.f_levels[2], 4.0, 1e-12);
  EXPECT_NEAR(red.f_levels[1], 0.0, 1e-15);
  EXPECT_NEAR(red.f_levels[4], 0.0, 1e-15);

  // First reduced inertia entry goes non-positive for this level set.
  EXPECT_NEAR(red.inertia_reduced[0], 2.0 - red.rho_reduced, 1e-12);
  EXPECT_FALSE(red.inertia_physical);

  // The reduced 1/rho~ and 2 t~ / f3~ are the two pencil roots.
  const auto p =
      chapsphere::pencil(chapsphere::level_sextuple(body, j, 1.0));
  EXPECT_NEAR(red.f_levels[3], p.roots[0], 1e-12);
  EXPECT_NEAR(red.f_levels[5] / red.f_levels[2], p.roots[1], 1e-12);
}

TEST(Horizontalize, CoefficientsCarryLevelsAndPreservePencil) {
  const BodyParams body = chaptest::stb();
  for (int trial = 0; trial < 100; ++trial) {
    Vec3 j = chaptest::random_vec(-3.0, 3.0);
    if (j[0] * j[0] + j[1] * j[1] < 1e-6) j[0] += 1.0;
    const double energy = 0.2 + chaptest::uniform(0.0, 4.0);

    const auto red = chapsphere::horizontalize(body, j, energy);
    const Vec6 f = chapsphere::level_sextuple(body, j, energy);
    const Vec6& g = red.f_levels;

    // det M = +-1.
    EXPECT_NEAR(std::abs(red.coeffs.determinant()), 1.0, 1e-12);

    // Original coefficient forms factor through the reduced ones.
    Eigen::Matrix2d big_f, big_g, red_f, red_g;
    big_f << f[0], f[1], f[1], f[2];
    big_g << f[3], f[4], f[4], f[5];
    red_f << g[0], g[1], g[1], g[2];
    red_g << g[3], g[4], g[4], g[5];
    const Eigen::Matrix2d m = red.coeffs;
    EXPECT_LT((big_f - m * red_f * m.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((big_g - m * red_g * m.transpose()).cwiseAbs().maxCoeff(), 1e-12);

    // Pencil coefficients are invariant under the substitution.
    const auto p0 = chapsphere::pencil(f);
    const auto p1 = chapsphere::pencil(g);
    EXPECT_NEAR(p0.alpha, p1.alpha, 1e-10 * std::max(1.0, std::abs(p0.alpha)));
    EXPECT_NEAR(p0.beta, p1.beta, 1e-10 * std::max(1.0, std::abs(p0.beta)));
    EXPECT_NEAR(p0.gamma, p1.gamma, 1e-10 * std::max(1.0, std::abs(p0.gamma)));

    // Reduced energy-to-size ratio matches the original.
    EXPECT_NEAR(red.t_reduced / red.rho_reduced, energy / body.rho(), 1e-12);

    // Reduced levels describe a horizontal configuration.
    EXPECT_NEAR(g[1], 0.0, 1e-15);
    EXPECT_NEAR(g[4], 0.0, 1e-15);
    EXPECT_LE(g[3], g[5] / g[2]);
  }
}

TEST(Horizontalize, RejectsVerticalMomentAndBadEnergy) {
  const BodyParams body = chaptest::stb();
  EXPECT_THROW(chapsphere::horizontalize(body, Vec3(0.0, 0.0, 3.0), 1.0),
               std::invalid_argument);
  EXPECT_THROW(chapsphere::horizontalize(body, Vec3::Zero(), 1.0),
               std::invalid_argument);
  EXPECT_THROW(chapsphere::horizontalize(body, Vec3(2.0, 0.0, 1.0), 0.0),
               std::invalid_argument);
}

}  // namespace
