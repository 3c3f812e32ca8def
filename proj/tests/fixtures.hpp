#pragma once

// Shared test fixtures: the standard test body (STB), the horizontal
// reference level (SHR), and seeded random samplers.

#include "chapsphere/model.hpp"

#include <cmath>
#include <random>

namespace chaptest {

using namespace chapsphere;

inline BodyParams stb() { return BodyParams(Vec3(1.0, 2.0, 3.0), 1.0, 1.0); }

inline Vec3 shr_moment() { return Vec3(2.0, 0.0, 0.0); }
inline constexpr double kShrEnergy = 0.8;

inline std::mt19937_64& rng() {
  static std::mt19937_64 gen(42);
  return gen;
}

inline double uniform(double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng());
}

inline Vec3 random_vec(double lo = -1.0, double hi = 1.0) {
  return Vec3(uniform(lo, hi), uniform(lo, hi), uniform(lo, hi));
}

inline Vec3 random_unit() {
  Vec3 v;
  do {
    v = random_vec();
  } while (v.norm() < 1e-3);
  return v.normalized();
}

inline Rotation random_rotation() {
  return exp_rot(random_unit(), uniform(0.0, std::numbers::pi));
}

// Closed-form point on the SHR level set: u along the middle axis, v in the
// plane spanned by the remaining two.
inline PairState reference_shr_pair() {
  return {Vec3::UnitY(), Vec3(std::sqrt(2.4), 0.0, std::sqrt(1.6))};
}

inline ExtendedState reference_shr_extended() {
  return extend(reference_shr_pair(), kShrEnergy, stb(), +1);
}

inline PairState random_shr_pair() {
  return sample_pair_on_level(shr_moment(), kShrEnergy, stb(), rng());
}

inline ExtendedState random_shr_extended() {
  const int sign = uniform(0.0, 1.0) < 0.5 ? -1 : 1;
  return extend(random_shr_pair(), kShrEnergy, stb(), sign);
}

}  // namespace chaptest
