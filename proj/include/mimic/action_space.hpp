#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mimic/geometry.hpp"
#include "mimic/kinematics.hpp"

namespace mimic {

// Unified action vocabulary: 48 human dims, 14 robot joint dims, 14 EEF dims,
// concatenated [human | robot | eef] into 76.
inline constexpr int kHumanDims = 48;
inline constexpr int kRobotDims = 14;
inline constexpr int kEefDims = 14;
inline constexpr int kUnifiedDims = kHumanDims + kRobotDims + kEefDims;

inline constexpr int kHumanOffset = 0;
inline constexpr int kRobotOffset = kHumanDims;
inline constexpr int kEefOffset = kHumanDims + kRobotDims;

using ActionVector = Eigen::Matrix<double, kUnifiedDims, 1>;
using DimMask = std::array<bool, kUnifiedDims>;

enum class Side { left, right };

inline DimMask mask_none() { DimMask m{}; m.fill(false); return m; }
inline DimMask mask_all() { DimMask m{}; m.fill(true); return m; }

inline DimMask mask_human() {
    DimMask m = mask_none();
    for (int i = kHumanOffset; i < kHumanOffset + kHumanDims; ++i) m[static_cast<size_t>(i)] = true;
    return m;
}
inline DimMask mask_robot_native() {
    DimMask m = mask_none();
    for (int i = kRobotOffset; i < kUnifiedDims; ++i) m[static_cast<size_t>(i)] = true;
    return m;
}
inline DimMask mask_or(const DimMask& a, const DimMask& b) {
    DimMask m{};
    for (size_t i = 0; i < m.size(); ++i) m[i] = a[i] || b[i];
    return m;
}
inline DimMask mask_and(const DimMask& a, const DimMask& b) {
    DimMask m{};
    for (size_t i = 0; i < m.size(); ++i) m[i] = a[i] && b[i];
    return m;
}

// ---------------------------------------------------------------------------
// Embodiment states
// ---------------------------------------------------------------------------

struct WristPose {
    Vec3 position{0, 0, 0};
    SixDOrientation orientation;
};

// 48 dims: two wrists (3 pos + 6 orient each) and two sets of five fingertip
// positions, ordered thumb, index, middle, ring, pinky.
struct HumanHandState {
    WristPose left_wrist;
    WristPose right_wrist;
    std::array<Vec3, 5> left_fingertips{};
    std::array<Vec3, 5> right_fingertips{};
};

// 14 dims: 6 joints + 1 gripper per arm; gripper 0 = closed, 1 = open.
struct RobotJointState {
    JointVector left_q = JointVector::Zero();
    double left_gripper = 1.0;
    JointVector right_q = JointVector::Zero();
    double right_gripper = 1.0;
};

// 14 dims: 3 pos + 4 quat (w, x, y, z) per arm.
struct EefState {
    Pose left;
    Pose right;
};

struct UnifiedAction {
    HumanHandState human;
    RobotJointState robot;
    EefState eef;
    DimMask mask = mask_none();
};

inline double clamp_unit(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// ---------------------------------------------------------------------------
// pack / unpack
//
// Fixed scalar order (also the on-disk record layout, little-endian doubles):
//   [0..2]   left wrist position        [3..8]   left wrist 6D (a, b)
//   [9..11]  right wrist position       [12..17] right wrist 6D
//   [18..32] left fingertips  (5 x 3)   [33..47] right fingertips
//   [48..53] left joints  [54] left gripper
//   [55..60] right joints [61] right gripper
//   [62..64] left EEF position  [65..68] left EEF quat wxyz
//   [69..71] right EEF position [72..75] right EEF quat wxyz
// ---------------------------------------------------------------------------

inline ActionVector pack(const UnifiedAction& u) {
    ActionVector v;
    int k = 0;
    auto put3 = [&](const Vec3& p) { v[k++] = p.x(); v[k++] = p.y(); v[k++] = p.z(); };
    auto put_wrist = [&](const WristPose& w) {
        put3(w.position);
        put3(w.orientation.a);
        put3(w.orientation.b);
    };
    put_wrist(u.human.left_wrist);
    put_wrist(u.human.right_wrist);
    for (const auto& f : u.human.left_fingertips) put3(f);
    for (const auto& f : u.human.right_fingertips) put3(f);
    for (int i = 0; i < 6; ++i) v[k++] = u.robot.left_q[i];
    v[k++] = u.robot.left_gripper;
    for (int i = 0; i < 6; ++i) v[k++] = u.robot.right_q[i];
    v[k++] = u.robot.right_gripper;
    auto put_pose = [&](const Pose& p) {
        put3(p.position);
        v[k++] = p.orientation.w; v[k++] = p.orientation.x;
        v[k++] = p.orientation.y; v[k++] = p.orientation.z;
    };
    put_pose(u.eef.left);
    put_pose(u.eef.right);
    return v;
}

// Quaternion blocks are normalized and sign-canonicalized, grippers clamped
// to [0, 1]. Vectors produced by pack() round-trip exactly.
inline UnifiedAction unpack(std::span<const double> v, const DimMask& mask) {
    if (v.size() != static_cast<size_t>(kUnifiedDims))
        throw BadLength("unpack expects 76 scalars, got " + std::to_string(v.size()));
    UnifiedAction u;
    u.mask = mask;
    int k = 0;
    auto get3 = [&]() { Vec3 p(v[static_cast<size_t>(k)], v[static_cast<size_t>(k + 1)], v[static_cast<size_t>(k + 2)]); k += 3; return p; };
    auto get_wrist = [&]() {
        WristPose w;
        w.position = get3();
        w.orientation.a = get3();
        w.orientation.b = get3();
        return w;
    };
    u.human.left_wrist = get_wrist();
    u.human.right_wrist = get_wrist();
    for (auto& f : u.human.left_fingertips) f = get3();
    for (auto& f : u.human.right_fingertips) f = get3();
    for (int i = 0; i < 6; ++i) u.robot.left_q[i] = v[static_cast<size_t>(k++)];
    u.robot.left_gripper = clamp_unit(v[static_cast<size_t>(k++)]);
    for (int i = 0; i < 6; ++i) u.robot.right_q[i] = v[static_cast<size_t>(k++)];
    u.robot.right_gripper = clamp_unit(v[static_cast<size_t>(k++)]);
    auto get_pose = [&]() {
        Pose p;
        p.position = get3();
        Quaternion q{v[static_cast<size_t>(k)], v[static_cast<size_t>(k + 1)], v[static_cast<size_t>(k + 2)], v[static_cast<size_t>(k + 3)]};
        k += 4;
        p.orientation = quat_canonicalize(q);
        return p;
    };
    u.eef.left = get_pose();
    u.eef.right = get_pose();
    return u;
}

inline UnifiedAction unpack(const ActionVector& v, const DimMask& mask) {
    return unpack(std::span<const double>(v.data(), static_cast<size_t>(kUnifiedDims)), mask);
}

// ---------------------------------------------------------------------------
// ActionChunk: H x 76 trajectory block, one shared mask, per-row pad flags.
// rows(i, :) is the packed vector of row i.
// ---------------------------------------------------------------------------
struct ActionChunk {
    Eigen::MatrixXd rows;             // H x 76
    DimMask mask = mask_none();
    std::vector<uint8_t> padded;      // per row, 1 when repeated past the end

    int horizon() const { return static_cast<int>(rows.rows()); }
    UnifiedAction row_action(int i) const {
        ActionVector v = rows.row(i).transpose();
        return unpack(v, mask);
    }
};

// ---------------------------------------------------------------------------
// NormStats: per-dimension mean/std, std floored at 1e-6.
// ---------------------------------------------------------------------------
struct NormStats {
    ActionVector mean = ActionVector::Zero();
    ActionVector std = ActionVector::Ones();

    void floor_std() {
        for (int i = 0; i < kUnifiedDims; ++i)
            if (std[i] < 1e-6) std[i] = 1e-6;
    }
};

inline ActionVector normalize(const ActionVector& v, const NormStats& s) {
    return (v - s.mean).cwiseQuotient(s.std);
}

inline ActionVector denormalize(const ActionVector& v, const NormStats& s) {
    return v.cwiseProduct(s.std) + s.mean;
}

// ---------------------------------------------------------------------------
// thumb_reference: the retargeting reference point. The stored hand state has
// fingertips, not knuckles, so the reference is the thumb fingertip plus a
// fixed offset expressed in the wrist frame; orientation is the wrist's.
// ---------------------------------------------------------------------------
inline Pose thumb_reference(const HumanHandState& h, Side side, const Vec3& offset_in_wrist) {
    const WristPose& wrist = side == Side::left ? h.left_wrist : h.right_wrist;
    const Vec3& tip = side == Side::left ? h.left_fingertips[0] : h.right_fingertips[0];
    Mat3 rot = sixd_to_matrix(wrist.orientation);
    Pose p;
    p.position = tip + rot * offset_in_wrist;
    p.orientation = quat_from_matrix(rot);
    return p;
}

} // namespace mimic
