#pragma once

#include <catch2/catch_amalgamated.hpp>

#include "mimic/dataset.hpp"
#include "mimic/geometry.hpp"
#include "mimic/kinematics.hpp"
#include "mimic/retarget.hpp"
#include "mimic/rng.hpp"

namespace mimic::testing {

inline JointVector home_joints() {
    JointVector q;
    q << 0.0, 0.9, -1.2, 0.0, 0.8, 0.0;
    return q;
}

// Bilateral arm_a setup with consistent initial EEF, IK seeds, and gripper
// calibration. Shared by the retarget, dataset, and policy suites.
inline RetargetConfig base_config() {
    RetargetConfig cfg;
    cfg.left_chain = preset_chain("arm_a");
    cfg.right_chain = preset_chain("arm_a");
    cfg.left_chain.base_frame.position = Vec3(0, 0.18, 0);
    cfg.right_chain.base_frame.position = Vec3(0, -0.18, 0);
    cfg.ik_seed_left = home_joints();
    cfg.ik_seed_right = home_joints();
    cfg.initial_eef.left = forward_kinematics(cfg.left_chain, home_joints());
    cfg.initial_eef.right = forward_kinematics(cfg.right_chain, home_joints());
    auto cal = gripper_calibration_from_fingers(cfg.fingers);
    cfg.gripper_min_dist = cal.first;
    cfg.gripper_max_dist = cal.second;
    return cfg;
}

// Configuration under which robot->human->robot is exactly affine in
// positions: R^h = (R^m)^-1, the thumb extension held constant, and the
// thumb-reference offset cancelling the synthesized thumb placement.
inline RetargetConfig round_trip_config() {
    RetargetConfig cfg = base_config();
    cfg.r_m = rotation_about_z(M_PI / 2);
    cfg.r_m.translation = Vec3(0.1, -0.05, 0.3);
    cfg.r_h = transform_inverse(cfg.r_m);
    cfg.fingers.grasp_closed = 1.0;
    cfg.fingers.grasp_open = 1.0;
    cfg.thumb_offset = -cfg.fingers.finger_direction(0, Side::right) * cfg.fingers.base_length[0];
    return cfg;
}

inline ReachTaskConfig test_task(int steps = 20) {
    ReachTaskConfig task;
    task.trajectory_steps = steps;
    task.home_left = home_joints();
    task.home_right = home_joints();
    task.target_min_left = Vec3(0.15, 0.08, 0.55);
    task.target_max_left = Vec3(0.32, 0.30, 0.75);
    task.target_min_right = Vec3(0.15, -0.30, 0.55);
    task.target_max_right = Vec3(0.32, -0.08, 0.75);
    return task;
}

inline Quaternion random_quat(Rng& rng) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    while (axis.norm() < 1e-6) axis = Vec3(rng.normal(), rng.normal(), rng.normal());
    return quat_from_axis_angle(axis, rng.uniform(-3.0, 3.0));
}

inline Vec3 random_vec3(Rng& rng, double scale = 1.0) {
    return Vec3(rng.normal(), rng.normal(), rng.normal()) * scale;
}

inline Pose random_pose(Rng& rng, double pos_scale = 1.0) {
    return Pose{random_vec3(rng, pos_scale), random_quat(rng)};
}

inline JointVector random_joints(const KinematicChain& chain, Rng& rng, double margin = 0.0) {
    JointVector q;
    for (int i = 0; i < 6; ++i) {
        const auto& j = chain.joints[static_cast<size_t>(i)];
        q[i] = rng.uniform(j.min_limit + margin, j.max_limit - margin);
    }
    return q;
}

// Independent FK oracle: plain 4x4 homogeneous matrix products, no shared
// code with forward_kinematics.
inline Eigen::Matrix4d homogeneous(const Pose& p) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = quat_to_matrix(p.orientation);
    m.block<3, 1>(0, 3) = p.position;
    return m;
}

inline Eigen::Matrix4d axis_rotation_matrix4(const Vec3& axis, double angle) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    Vec3 u = axis.normalized();
    double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    Mat3 r;
    r << t * u.x() * u.x() + c, t * u.x() * u.y() - s * u.z(), t * u.x() * u.z() + s * u.y(),
        t * u.x() * u.y() + s * u.z(), t * u.y() * u.y() + c, t * u.y() * u.z() - s * u.x(),
        t * u.x() * u.z() - s * u.y(), t * u.y() * u.z() + s * u.x(), t * u.z() * u.z() + c;
    m.block<3, 3>(0, 0) = r;
    return m;
}

inline Eigen::Matrix4d fk_matrix_oracle(const KinematicChain& chain, const JointVector& q) {
    Eigen::Matrix4d t = homogeneous(chain.base_frame);
    for (int i = 0; i < 6; ++i) {
        const auto& j = chain.joints[static_cast<size_t>(i)];
        t = t * homogeneous(j.origin_offset);
        t = t * axis_rotation_matrix4(j.axis, q[i]);
    }
    return t * homogeneous(chain.tool_offset);
}

} // namespace mimic::testing
