#pragma once

// Unit quaternion rotations and the three rotation distances.
//
// Storage is (w, x, y, z) with w = cos(theta/2). Every constructing operation
// normalizes and applies the canonical sign (w >= 0, ties broken by the first
// nonzero of x, y, z being positive), so equal rotations compare equal
// coefficient-wise.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

#include "rotavg/errors.hpp"

namespace rotavg {

template <typename Scalar>
inline constexpr Scalar kNormEpsilon = Scalar(1e-12);

template <typename Scalar>
class UnitQuaternion {
 public:
  using Coeffs = Eigen::Matrix<Scalar, 4, 1>;
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

  UnitQuaternion() : q_(Scalar(1), Scalar(0), Scalar(0), Scalar(0)) {}

  static UnitQuaternion identity() { return UnitQuaternion(); }

  /// Normalizes `raw` and applies the canonical sign. Throws
  /// DegenerateQuaternion when the norm is at or below `eps`.
  static UnitQuaternion normalize(const Coeffs& raw,
                                  Scalar eps = kNormEpsilon<Scalar>) {
    const Scalar n = raw.norm();
    if (!(n > eps)) {
      throw DegenerateQuaternion("quaternion norm below threshold");
    }
    UnitQuaternion out;
    // already unit to rounding: keep the bits so normalize is idempotent
    out.q_ = std::abs(n * n - Scalar(1)) <= Scalar(1e-15) ? Coeffs(raw)
                                                         : Coeffs(raw / n);
    out.canonicalize();
    return out;
  }

  static UnitQuaternion normalize(Scalar w, Scalar x, Scalar y, Scalar z) {
    return normalize(Coeffs(w, x, y, z));
  }

  static UnitQuaternion from_axis_angle(const Vector3& axis, Scalar angle) {
    const Scalar n = axis.norm();
    if (!(n > kNormEpsilon<Scalar>)) {
      throw DegenerateAxis("rotation axis has zero length");
    }
    const Scalar half = angle / Scalar(2);
    const Vector3 v = axis / n * std::sin(half);
    return normalize(Coeffs(std::cos(half), v.x(), v.y(), v.z()));
  }

  /// Exponential map: rotation vector (axis * angle) to quaternion.
  static UnitQuaternion exp(const Vector3& omega) {
    const Scalar theta = omega.norm();
    const Scalar half = theta / Scalar(2);
    // sin(half)/theta with a series fallback near zero
    const Scalar k = theta < Scalar(1e-8)
                         ? Scalar(0.5) - theta * theta / Scalar(48)
                         : std::sin(half) / theta;
    return normalize(Coeffs(std::cos(half), k * omega.x(), k * omega.y(),
                            k * omega.z()));
  }

  static UnitQuaternion from_rotation_matrix(const Matrix3& m) {
    const Eigen::Quaternion<Scalar> e(m);
    return normalize(Coeffs(e.w(), e.x(), e.y(), e.z()));
  }

  Scalar w() const { return q_[0]; }
  Scalar x() const { return q_[1]; }
  Scalar y() const { return q_[2]; }
  Scalar z() const { return q_[3]; }
  const Coeffs& coeffs() const { return q_; }
  Vector3 vec() const { return q_.template tail<3>(); }

  /// Logarithm map: the rotation vector of angle in [0, pi].
  Vector3 log() const {
    const Vector3 v = vec();
    const Scalar s = v.norm();
    if (s < Scalar(1e-12)) {
      return Scalar(2) * v;
    }
    // w >= 0 by canonical form, so the angle lands in [0, pi]
    const Scalar theta = Scalar(2) * std::atan2(s, w());
    return v * (theta / s);
  }

  Matrix3 to_rotation_matrix() const {
    return Eigen::Quaternion<Scalar>(w(), x(), y(), z()).toRotationMatrix();
  }

  Vector3 rotate(const Vector3& p) const {
    return Eigen::Quaternion<Scalar>(w(), x(), y(), z()) * p;
  }

  template <typename Other>
  UnitQuaternion<Other> cast() const {
    return UnitQuaternion<Other>::normalize(q_.template cast<Other>());
  }

 private:
  void canonicalize() {
    bool flip = q_[0] < Scalar(0);
    if (q_[0] == Scalar(0)) {
      for (int i = 1; i < 4; ++i) {
        if (q_[i] != Scalar(0)) {
          flip = q_[i] < Scalar(0);
          break;
        }
      }
    }
    if (flip) q_ = -q_;
  }

  Coeffs q_;
};

using Quat = UnitQuaternion<double>;

/// Hamilton product of raw coefficient vectors (no normalization).
template <typename Derived1, typename Derived2>
Eigen::Matrix<typename Derived1::Scalar, 4, 1> hamilton(
    const Eigen::MatrixBase<Derived1>& a, const Eigen::MatrixBase<Derived2>& b) {
  using S = typename Derived1::Scalar;
  return Eigen::Matrix<S, 4, 1>(
      a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
      a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
      a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
      a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

/// Rotation a∘b: apply b, then a.
template <typename Scalar>
UnitQuaternion<Scalar> compose(const UnitQuaternion<Scalar>& a,
                               const UnitQuaternion<Scalar>& b) {
  return UnitQuaternion<Scalar>::normalize(hamilton(a.coeffs(), b.coeffs()));
}

template <typename Scalar>
UnitQuaternion<Scalar> operator*(const UnitQuaternion<Scalar>& a,
                                 const UnitQuaternion<Scalar>& b) {
  return compose(a, b);
}

template <typename Scalar>
UnitQuaternion<Scalar> inverse(const UnitQuaternion<Scalar>& q) {
  return UnitQuaternion<Scalar>::normalize(q.w(), -q.x(), -q.y(), -q.z());
}

/// Rotation angle of a single rotation, in [0, pi].
template <typename Scalar>
Scalar rotation_angle(const UnitQuaternion<Scalar>& q) {
  return Scalar(2) * std::atan2(q.vec().norm(), std::abs(q.w()));
}

/// Geodesic (angular) distance in [0, pi]. Evaluated via atan2 of the
/// relative rotation, which stays accurate near 0 and pi.
template <typename Scalar>
Scalar geodesic_distance(const UnitQuaternion<Scalar>& a,
                         const UnitQuaternion<Scalar>& b) {
  const auto rel = hamilton(inverse(a).coeffs(), b.coeffs());
  const Scalar s = rel.template tail<3>().norm();
  const Scalar c = std::abs(rel[0]);
  return Scalar(2) * std::atan2(s, c);
}

/// Frobenius norm of the rotation-matrix difference.
template <typename Scalar>
Scalar chordal_distance(const UnitQuaternion<Scalar>& a,
                        const UnitQuaternion<Scalar>& b) {
  return (a.to_rotation_matrix() - b.to_rotation_matrix()).norm();
}

/// min(|qa - qb|, |qa + qb|), invariant to either sign.
template <typename Scalar>
Scalar quaternion_distance(const UnitQuaternion<Scalar>& a,
                           const UnitQuaternion<Scalar>& b) {
  const Scalar minus = (a.coeffs() - b.coeffs()).norm();
  const Scalar plus = (a.coeffs() + b.coeffs()).norm();
  return std::min(minus, plus);
}

template <typename Scalar>
Scalar rad_to_deg(Scalar r) {
  return r * Scalar(180) / std::numbers::pi_v<Scalar>;
}

template <typename Scalar>
Scalar deg_to_rad(Scalar d) {
  return d * std::numbers::pi_v<Scalar> / Scalar(180);
}

}  // namespace rotavg
