#pragma once

#include <array>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "mimic/errors.hpp"

namespace mimic {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// Quaternion
//
// Unit quaternion with canonical sign (w >= 0). Every operation that returns
// a Quaternion renormalizes and canonicalizes, so serialized values are
// deterministic and equality tests are well defined.
// ---------------------------------------------------------------------------
struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;
};

inline double quat_norm(const Quaternion& q) {
    return std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
}

inline Quaternion quat_normalize(const Quaternion& q) {
    double n = quat_norm(q);
    if (n <= 1e-12) throw ZeroQuaternion();
    double s = 1.0 / n;
    Quaternion r{q.w * s, q.x * s, q.y * s, q.z * s};
    if (r.w < 0.0) { r.w = -r.w; r.x = -r.x; r.y = -r.y; r.z = -r.z; }
    return r;
}

// Like quat_normalize, but leaves values that already satisfy the unit-norm
// and sign invariants bit-untouched, so canonical data round-trips exactly.
inline Quaternion quat_canonicalize(const Quaternion& q) {
    double n = quat_norm(q);
    if (std::abs(n - 1.0) <= 1e-9 && q.w >= 0.0) return q;
    return quat_normalize(q);
}

inline Quaternion quat_conjugate(const Quaternion& q) {
    return quat_normalize(Quaternion{q.w, -q.x, -q.y, -q.z});
}

// Hamilton product, renormalized
inline Quaternion quat_multiply(const Quaternion& a, const Quaternion& b) {
    Quaternion r;
    r.w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z;
    r.x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y;
    r.y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x;
    r.z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w;
    return quat_normalize(r);
}

inline Vec3 quat_rotate(const Quaternion& q, const Vec3& v) {
    // v + 2 qv x (qv x v + w v)
    Vec3 qv(q.x, q.y, q.z);
    Vec3 t = 2.0 * qv.cross(v);
    return v + q.w * t + qv.cross(t);
}

inline Mat3 quat_to_matrix(const Quaternion& q) {
    Mat3 m;
    double ww = q.w, xx = q.x, yy = q.y, zz = q.z;
    m(0, 0) = 1 - 2 * (yy * yy + zz * zz);
    m(0, 1) = 2 * (xx * yy - zz * ww);
    m(0, 2) = 2 * (xx * zz + yy * ww);
    m(1, 0) = 2 * (xx * yy + zz * ww);
    m(1, 1) = 1 - 2 * (xx * xx + zz * zz);
    m(1, 2) = 2 * (yy * zz - xx * ww);
    m(2, 0) = 2 * (xx * zz - yy * ww);
    m(2, 1) = 2 * (yy * zz + xx * ww);
    m(2, 2) = 1 - 2 * (xx * xx + yy * yy);
    return m;
}

// Shepperd's method (largest-pivot branch), deterministic
inline Quaternion quat_from_matrix(const Mat3& m) {
    Quaternion q;
    double trace = m(0, 0) + m(1, 1) + m(2, 2);
    if (trace > 0.0) {
        double s = std::sqrt(trace + 1.0) * 2.0;
        q.w = 0.25 * s;
        q.x = (m(2, 1) - m(1, 2)) / s;
        q.y = (m(0, 2) - m(2, 0)) / s;
        q.z = (m(1, 0) - m(0, 1)) / s;
    } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
        double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
        q.w = (m(2, 1) - m(1, 2)) / s;
        q.x = 0.25 * s;
        q.y = (m(0, 1) + m(1, 0)) / s;
        q.z = (m(0, 2) + m(2, 0)) / s;
    } else if (m(1, 1) > m(2, 2)) {
        double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
        q.w = (m(0, 2) - m(2, 0)) / s;
        q.x = (m(0, 1) + m(1, 0)) / s;
        q.y = 0.25 * s;
        q.z = (m(1, 2) + m(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
        q.w = (m(1, 0) - m(0, 1)) / s;
        q.x = (m(0, 2) + m(2, 0)) / s;
        q.y = (m(1, 2) + m(2, 1)) / s;
        q.z = 0.25 * s;
    }
    return quat_normalize(q);
}

inline Quaternion quat_from_axis_angle(const Vec3& axis, double angle) {
    double n = axis.norm();
    if (n <= 1e-12) throw ZeroQuaternion();
    double h = 0.5 * angle;
    double s = std::sin(h) / n;
    return quat_normalize(Quaternion{std::cos(h), axis.x() * s, axis.y() * s, axis.z() * s});
}

// rotation vector (axis * angle) of a unit quaternion; angle in [0, pi]
inline Vec3 quat_rotation_vector(const Quaternion& qin) {
    Quaternion q = quat_normalize(qin);
    Vec3 v(q.x, q.y, q.z);
    double vn = v.norm();
    if (vn < 1e-12) return Vec3::Zero();
    double angle = 2.0 * std::atan2(vn, q.w);
    return v * (angle / vn);
}

// minimal rotation angle between two orientations, in [0, pi]; the atan2 form
// of 2 acos(|<q1,q2>|), accurate near zero
inline double geodesic_distance(const Quaternion& q1, const Quaternion& q2) {
    double w = q1.w * q2.w + q1.x * q2.x + q1.y * q2.y + q1.z * q2.z;
    double vx = q1.w * q2.x - q1.x * q2.w + q1.y * q2.z - q1.z * q2.y;
    double vy = q1.w * q2.y - q1.y * q2.w + q1.z * q2.x - q1.x * q2.z;
    double vz = q1.w * q2.z - q1.z * q2.w + q1.x * q2.y - q1.y * q2.x;
    double vn = std::sqrt(vx * vx + vy * vy + vz * vz);
    return 2.0 * std::atan2(vn, std::abs(w));
}

// ---------------------------------------------------------------------------
// SixDOrientation
//
// First two columns of a rotation matrix, stored before orthonormalization.
// Decoding runs Gram-Schmidt: first column normalized, second orthogonalized,
// third by cross product.
// ---------------------------------------------------------------------------
struct SixDOrientation {
    Vec3 a{1, 0, 0};
    Vec3 b{0, 1, 0};
};

inline Mat3 sixd_to_matrix(const SixDOrientation& r) {
    double na = r.a.norm();
    if (na <= 1e-9) throw DegenerateSixD();
    Vec3 c0 = r.a / na;
    Vec3 u = r.b - c0.dot(r.b) * c0;
    double nu = u.norm();
    if (nu <= 1e-9) throw DegenerateSixD();
    Vec3 c1 = u / nu;
    Vec3 c2 = c0.cross(c1);
    Mat3 m;
    m.col(0) = c0;
    m.col(1) = c1;
    m.col(2) = c2;
    return m;
}

inline SixDOrientation matrix_to_sixd(const Mat3& m) {
    if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
        m.determinant() < 0.0) {
        throw NotARotation();
    }
    return SixDOrientation{m.col(0), m.col(1)};
}

inline SixDOrientation sixd_from_quat(const Quaternion& q) {
    return matrix_to_sixd(quat_to_matrix(q));
}

// ---------------------------------------------------------------------------
// Pose
// ---------------------------------------------------------------------------
struct Pose {
    Vec3 position{0, 0, 0};
    Quaternion orientation;
};

inline Pose pose_compose(const Pose& a, const Pose& b) {
    return Pose{a.position + quat_rotate(a.orientation, b.position),
                quat_multiply(a.orientation, b.orientation)};
}

inline Pose pose_inverse(const Pose& p) {
    Quaternion qi = quat_conjugate(p.orientation);
    return Pose{quat_rotate(qi, -p.position), qi};
}

inline Vec3 pose_apply(const Pose& p, const Vec3& v) {
    return p.position + quat_rotate(p.orientation, v);
}

// ---------------------------------------------------------------------------
// FrameTransform
//
// Affine frame conversion used for the human->robot and robot->human
// coordinate maps. det(linear) = -1 is permitted on orthogonal transforms to
// model a handedness flip; orientations are then mapped through the nearest
// proper rotation (polar decomposition), since quaternions cannot represent
// reflections.
// ---------------------------------------------------------------------------
struct FrameTransform {
    Mat3 linear = Mat3::Identity();
    Vec3 translation{0, 0, 0};
    bool orthogonal = true;
};

inline void validate(const FrameTransform& t) {
    if (t.orthogonal) {
        double dev = (t.linear.transpose() * t.linear - Mat3::Identity()).cwiseAbs().maxCoeff();
        if (dev > 1e-9) throw NumericError("orthogonal FrameTransform has non-orthogonal linear part");
        double d = t.linear.determinant();
        if (std::abs(std::abs(d) - 1.0) > 1e-9)
            throw NumericError("orthogonal FrameTransform determinant is not +-1");
    }
}

// Nearest proper rotation to the linear part (polar factor, det forced to +1).
inline Mat3 rotation_part(const FrameTransform& t) {
    if (t.orthogonal && t.linear.determinant() > 0.0) return t.linear;
    Eigen::JacobiSVD<Mat3> svd(t.linear, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 uv = svd.matrixU() * svd.matrixV().transpose();
    Mat3 d = Mat3::Identity();
    d(2, 2) = uv.determinant() < 0.0 ? -1.0 : 1.0;
    return svd.matrixU() * d * svd.matrixV().transpose();
}

inline Pose apply_transform(const FrameTransform& t, const Pose& p) {
    Pose out;
    out.position = t.linear * p.position + t.translation;
    out.orientation = quat_multiply(quat_from_matrix(rotation_part(t)), p.orientation);
    return out;
}

inline FrameTransform transform_inverse(const FrameTransform& t) {
    FrameTransform inv;
    inv.linear = t.orthogonal ? Mat3(t.linear.transpose()) : Mat3(t.linear.inverse());
    inv.translation = -(inv.linear * t.translation);
    inv.orthogonal = t.orthogonal;
    return inv;
}

inline FrameTransform compose(const FrameTransform& a, const FrameTransform& b) {
    FrameTransform c;
    c.linear = a.linear * b.linear;
    c.translation = a.linear * b.translation + a.translation;
    c.orthogonal = a.orthogonal && b.orthogonal;
    return c;
}

// Serialization order used in configuration files: 9 linear entries
// (row-major) followed by the translation.
inline std::array<double, 12> transform_to_array(const FrameTransform& t) {
    std::array<double, 12> a{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) a[static_cast<size_t>(3 * r + c)] = t.linear(r, c);
    for (int i = 0; i < 3; ++i) a[static_cast<size_t>(9 + i)] = t.translation(i);
    return a;
}

inline FrameTransform transform_from_array(const std::array<double, 12>& a, bool orthogonal = true) {
    FrameTransform t;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) t.linear(r, c) = a[static_cast<size_t>(3 * r + c)];
    for (int i = 0; i < 3; ++i) t.translation(i) = a[static_cast<size_t>(9 + i)];
    t.orthogonal = orthogonal;
    validate(t);
    return t;
}

inline FrameTransform rotation_about_z(double angle) {
    FrameTransform t;
    double c = std::cos(angle), s = std::sin(angle);
    t.linear << c, -s, 0, s, c, 0, 0, 0, 1;
    return t;
}

} // namespace mimic
