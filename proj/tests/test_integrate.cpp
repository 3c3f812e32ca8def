#include "chapsphere/integrate.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"

using namespace chapsphere;
using chaptest::stb;

namespace {

FieldEval constant_field() {
  FieldEval f;
  f.name = "constant";
  f.dim = 3;
  f.deriv = [](const FlatVec& y) -> FlatVec {
    (void)y;
    FlatVec d(3);
    d << 1.0, -2.0, 0.5;
    return d;
  };
  return f;
}

// Attitude kinematics A' = A hat(w) for constant w; closed form is Rodrigues.
FieldEval attitude_field(const Vec3& w) {
  FieldEval f;
  f.name = "attitude";
  f.dim = 9;
  f.rotation_blocks = {0};
  f.deriv = [w](const FlatVec& y) -> FlatVec {
    FlatVec d(9);
    mat3_to_flat(mat3_from_flat(y, 0) * hat(w), d, 0);
    return d;
  };
  return f;
}

IntegratorConfig rk4_config(double h) {
  IntegratorConfig cfg;
  cfg.method = StepMethod::kFixedRk4;
  cfg.fixed_step = h;
  return cfg;
}

}  // namespace

TEST(Integrate, Rk4ExactOnConstantField) {
  FlatVec y0(3);
  y0 << 1.0, 2.0, 3.0;
  const Trajectory traj = integrate(constant_field(), y0, 0.0, 2.0, rk4_config(0.1));
  FlatVec expect(3);
  expect << 3.0, -2.0, 4.0;
  EXPECT_LT((traj.back().y - expect).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_EQ(traj.method, "rk4");
}

TEST(Integrate, EquilibriumSpinHolds) {
  const BodyParams b = stb();
  const FullState start{Rotation::identity(), Vec3::UnitZ()};
  const Trajectory traj = integrate(make_full_field(b), pack_full(start), 0.0, 10.0);
  EXPECT_LT((traj.back().y.segment<3>(9) - Vec3::UnitZ()).norm(), 1e-10);
}

TEST(Integrate, Rk4IsFourthOrder) {
  const BodyParams b = stb();
  const FlatVec y0 = pack_pair(chaptest::random_shr_pair());
  IntegratorConfig tight;
  tight.abs_tol = tight.rel_tol = 1e-13;
  const FlatVec ref = integrate(make_pair_field(b), y0, 0.0, 2.0, tight).back().y;
  const double err_h =
      (integrate(make_pair_field(b), y0, 0.0, 2.0, rk4_config(0.02)).back().y - ref)
          .norm();
  const double err_h2 =
      (integrate(make_pair_field(b), y0, 0.0, 2.0, rk4_config(0.01)).back().y - ref)
          .norm();
  EXPECT_GT(err_h / err_h2, 12.0);
  EXPECT_LT(err_h / err_h2, 20.0);
}

TEST(Integrate, RejectsBadArguments) {
  FlatVec y0(3);
  y0 << 0.0, 0.0, 0.0;
  EXPECT_THROW(integrate(constant_field(), y0, 1.0, 0.5), std::invalid_argument);
  IntegratorConfig bad;
  bad.abs_tol = -1.0;
  EXPECT_THROW(integrate(constant_field(), y0, 0.0, 1.0, bad),
               std::invalid_argument);
  FlatVec wrong(2);
  wrong << 0.0, 0.0;
  EXPECT_THROW(integrate(constant_field(), wrong, 0.0, 1.0),
               std::invalid_argument);
}

TEST(Integrate, StepBudgetExhaustionSignalled) {
  const BodyParams b = stb();
  IntegratorConfig cfg;
  cfg.max_steps = 5;
  EXPECT_THROW(
      integrate(make_pair_field(b), pack_pair(chaptest::random_shr_pair()), 0.0,
                50.0, cfg),
      std::runtime_error);
}

TEST(Integrate, TrajectoryTimesStrictlyIncrease) {
  const BodyParams b = stb();
  const Trajectory traj = integrate(
      make_pair_field(b), pack_pair(chaptest::random_shr_pair()), 0.0, 3.0);
  for (size_t i = 1; i < traj.samples.size(); ++i) {
    EXPECT_GT(traj.samples[i].t, traj.samples[i - 1].t);
  }
  EXPECT_EQ(traj.samples.back().t, 3.0);
  EXPECT_GT(traj.achieved_tolerance, 0.0);
  EXPECT_EQ(traj.field_name, "pair");
}

TEST(Interpolate, MatchesNodesAndNeighborhood) {
  const BodyParams b = stb();
  const Trajectory traj = integrate(
      make_pair_field(b), pack_pair(chaptest::random_shr_pair()), 0.0, 2.0);
  const auto& mid = traj.samples[traj.samples.size() / 2];
  EXPECT_LT((interpolate(traj, mid.t) - mid.y).cwiseAbs().maxCoeff(), 1e-14);
  // Dense output between nodes is fourth-order accurate: good enough for
  // event location, a couple of orders looser than the node accuracy.
  const double t_query = 0.5 * (mid.t + traj.samples[traj.samples.size() / 2 + 1].t);
  const FlatVec probe = interpolate(traj, t_query);
  const FlatVec ref = flow(make_pair_field(b), mid.y, t_query - mid.t);
  EXPECT_LT((probe - ref).norm(), 1e-7);
}

TEST(Flow, ZeroTimeIsIdentity) {
  const FlatVec y0 = pack_pair(chaptest::random_shr_pair());
  EXPECT_EQ(flow(make_pair_field(stb()), y0, 0.0), y0);
}

TEST(Flow, Semigroup) {
  const BodyParams b = stb();
  const FlatVec y0 = pack_pair(chaptest::random_shr_pair());
  const FieldEval f = make_pair_field(b);
  const FlatVec two_hops = flow(f, flow(f, y0, 1.0), 1.0);
  const FlatVec one_hop = flow(f, y0, 2.0);
  EXPECT_LT((two_hops - one_hop).norm(), 1e-9);
}

TEST(Flow, BackwardUndoesForward) {
  const BodyParams b = stb();
  const FlatVec y0 = pack_pair(chaptest::random_shr_pair());
  const FieldEval f = make_pair_field(b);
  EXPECT_LT((flow(f, flow(f, y0, 1.5), -1.5) - y0).norm(), 1e-9);
}

TEST(Flow, MatchesRodriguesClosedForm) {
  const Vec3 w(0.7, -0.4, 1.1);
  const Rotation a0 = chaptest::random_rotation();
  FlatVec y0(9);
  mat3_to_flat(a0.matrix(), y0, 0);
  const FlatVec yt = flow(attitude_field(w), y0, 2.5);
  const Mat3 closed = a0.matrix() * exp_rot(w, 2.5).matrix();
  EXPECT_LT((mat3_from_flat(yt, 0) - closed).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ReparamFactor, HandValueAndPositivity) {
  EXPECT_NEAR(reparam_factor(Vec3::UnitY(), stb()), std::sqrt(1.5), 1e-12);
  const BodyParams ball(Vec3(2, 2, 2), 1.0, 1.0);
  const double c = reparam_factor(Vec3::UnitX(), ball);
  for (int i = 0; i < 20; ++i) {
    const Vec3 u = chaptest::random_unit();
    EXPECT_NEAR(reparam_factor(u, ball), c, 1e-12);
    EXPECT_GT(reparam_factor(u, stb()), 0.0);
  }
  EXPECT_THROW(reparam_factor(Vec3(10, 0, 0), stb()), std::runtime_error);
}

TEST(Commutation, TrivialCases) {
  const ExtendedState e0 = chaptest::random_shr_extended();
  EXPECT_EQ(commutation_defect(e0, 0.0, 0.0, stb()), 0.0);
  EXPECT_LT(commutation_defect(e0, 0.0, 0.7, stb()), 1e-12);
}

TEST(Commutation, ReferenceLevelDefectSmall) {
  const ExtendedState e0 = extend({Vec3::UnitY(), Vec3(std::sqrt(2.4), 0.0, std::sqrt(1.6))},
                                  chaptest::kShrEnergy, stb(), +1);
  IntegratorConfig cfg;
  cfg.abs_tol = cfg.rel_tol = 1e-12;
  EXPECT_LT(commutation_defect(e0, 0.5, 0.5, stb(), cfg), 1e-6);
}

TEST(Conservation, FullOrbitDrift) {
  const BodyParams b = stb();
  const FullState start{chaptest::random_rotation(),
                        chaptest::random_vec(-1.5, 1.5)};
  const auto [j0, t0] = moment_and_energy(start, b);
  const Trajectory traj =
      integrate(make_full_field(b), pack_full(start), 0.0, 10.0);
  double worst_j = 0.0, worst_t = 0.0, worst_u = 0.0;
  for (const auto& smp : traj.samples) {
    const auto [j, t] = moment_and_energy(unpack_full(smp.y), b);
    worst_j = std::max(worst_j, (j - j0).norm() / std::max(1.0, j0.norm()));
    worst_t = std::max(worst_t, std::abs(t - t0) / std::max(1.0, t0));
    const Vec3 u_raw = mat3_from_flat(smp.y, 0).transpose() * Vec3::UnitZ();
    worst_u = std::max(worst_u, std::abs(u_raw.squaredNorm() - 1.0));
  }
  EXPECT_LT(worst_j, 1e-8);
  EXPECT_LT(worst_t, 1e-8);
  EXPECT_LT(worst_u, 1e-10);
}

TEST(Reparam, ExtFlowProjectsToScaledPairFlow) {
  const BodyParams b = stb();
  const ExtendedState e0 = chaptest::random_shr_extended();
  IntegratorConfig cfg;
  cfg.abs_tol = cfg.rel_tol = 1e-11;
  const Trajectory ext_traj =
      integrate(make_xi_ext_field(b), pack_ext(e0), 0.0, 5.0, cfg);
  // The pair-chart realization sqrt(X) R_omega generates the same curve when
  // the cover sheet has z > 0; flip time direction on the other sheet.
  FieldEval scaled = make_xi_pair_field(b);
  FlatVec y0 = pack_pair({e0.u, e0.v});
  const double orientation = e0.z > 0.0 ? 1.0 : -1.0;
  for (const double t : {1.0, 2.5, 5.0}) {
    const FlatVec ext_at = interpolate(ext_traj, t);
    const FlatVec pair_at = flow(scaled, y0, orientation * t, cfg);
    EXPECT_LT((ext_at.segment<3>(0) - pair_at.segment<3>(0)).norm(), 1e-7);
    EXPECT_LT((ext_at.segment<3>(4) - pair_at.segment<3>(3)).norm(), 1e-7);
  }
}
