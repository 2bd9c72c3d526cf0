#pragma once

#include <utility>
#include <vector>

#include "mimic/action_space.hpp"
#include "mimic/geometry.hpp"
#include "mimic/kinematics.hpp"

namespace mimic {

// ---------------------------------------------------------------------------
// Anatomical finger synthesizer parameters. Fingertips are placed around the
// thumb reference pose at direction * base_length * extension(gripper); the
// extension factor interpolates linearly between the closed and open factors,
// with one pair for the grasping fingers (thumb, index) and another for the
// rest. Left-hand directions mirror the right hand across the sagittal axis.
// Base lengths and factors are configuration, not anatomy ground truth.
// ---------------------------------------------------------------------------
struct FingerParams {
    std::array<double, 5> base_length{0.10, 0.08, 0.085, 0.08, 0.065}; // thumb..pinky, m
    std::array<Vec3, 5> direction{Vec3(0, 0, 1),
                                  Vec3(0, 0.5, 0.8660254037844386),
                                  Vec3(0.12, 0.53, 0.84),
                                  Vec3(0.24, 0.52, 0.82),
                                  Vec3(0.35, 0.50, 0.79)}; // right hand, normalized on use
    double grasp_closed = 0.6;  // thumb + index
    double grasp_open = 1.0;
    double other_closed = 0.8;  // middle, ring, pinky
    double other_open = 1.0;
    int mirror_axis = 1;        // component negated for the left hand
    Vec3 wrist_offset{0, 0, -0.08}; // wrist position relative to the thumb reference

    double extension(int finger, double gripper) const {
        bool grasp = finger <= 1;
        double c = grasp ? grasp_closed : other_closed;
        double o = grasp ? grasp_open : other_open;
        return c + (o - c) * gripper;
    }
    Vec3 finger_direction(int finger, Side side) const {
        Vec3 d = direction[static_cast<size_t>(finger)].normalized();
        if (side == Side::left) d[mirror_axis] = -d[mirror_axis];
        return d;
    }
    Vec3 side_wrist_offset(Side side) const {
        Vec3 d = wrist_offset;
        if (side == Side::left) d[mirror_axis] = -d[mirror_axis];
        return d;
    }
};

struct RetargetConfig {
    FrameTransform r_h;          // human displacement -> robot frame
    FrameTransform r_m;          // robot pose -> human frame
    EefState initial_eef;        // robot EEF at step 0 of any human->robot mapping
    KinematicChain left_chain;
    KinematicChain right_chain;
    FingerParams fingers;
    double gripper_min_dist = 0.030; // thumb-index distance mapped to gripper 0
    double gripper_max_dist = 0.050; // and to gripper 1
    Vec3 thumb_offset{0, 0, -0.03};  // wrist-frame offset of thumb_reference (right hand)
    JointVector ik_seed_left = JointVector::Zero();
    JointVector ik_seed_right = JointVector::Zero();
    IkParams ik;

    Vec3 side_thumb_offset(Side side) const {
        Vec3 d = thumb_offset;
        if (side == Side::left) d[fingers.mirror_axis] = -d[fingers.mirror_axis];
        return d;
    }
    const KinematicChain& chain(Side side) const {
        return side == Side::left ? left_chain : right_chain;
    }
};

inline void validate(const RetargetConfig& cfg) {
    validate(cfg.r_h);
    validate(cfg.r_m);
    validate(cfg.left_chain);
    validate(cfg.right_chain);
    if (!(cfg.gripper_min_dist < cfg.gripper_max_dist))
        throw ConfigError("gripper calibration requires min_dist < max_dist");
    for (double l : cfg.fingers.base_length)
        if (!(l > 0.0)) throw ConfigError("finger base lengths must be positive");
}

// Per-step record of how the retargeting went; exported as CSV
// (step, side, converged, pos_residual, rot_residual, gripper).
struct RetargetStepRecord {
    int step = 0;
    Side side = Side::left;
    bool converged = true;
    double pos_residual = 0.0;
    double rot_residual = 0.0;
    double gripper = 1.0;
};

struct RetargetReport {
    std::vector<RetargetStepRecord> steps;

    int failures() const {
        int n = 0;
        for (const auto& s : steps) n += s.converged ? 0 : 1;
        return n;
    }
};

// ---------------------------------------------------------------------------
// Gripper estimation: linear map of the thumb-index fingertip distance
// through (min_dist, max_dist), clamped to [0, 1]. Monotone in the distance
// and invariant to rigid motion of the hand.
// ---------------------------------------------------------------------------
inline double estimate_gripper(const HumanHandState& h, Side side, const RetargetConfig& cfg) {
    const auto& tips = side == Side::left ? h.left_fingertips : h.right_fingertips;
    double d = (tips[1] - tips[0]).norm();
    return clamp_unit((d - cfg.gripper_min_dist) / (cfg.gripper_max_dist - cfg.gripper_min_dist));
}

// Open/closed thumb-index distances implied by the finger parameters; using
// these as (min_dist, max_dist) makes estimate_gripper invert
// synthesize_fingers exactly when thumb and index share extension factors.
inline std::pair<double, double> gripper_calibration_from_fingers(const FingerParams& f) {
    auto dist = [&](double g) {
        Vec3 thumb = f.finger_direction(0, Side::right) * f.base_length[0] * f.extension(0, g);
        Vec3 index = f.finger_direction(1, Side::right) * f.base_length[1] * f.extension(1, g);
        return (index - thumb).norm();
    };
    return {dist(0.0), dist(1.0)};
}

// ---------------------------------------------------------------------------
// f_d: place the five fingertips and the wrist around a thumb reference pose.
// ---------------------------------------------------------------------------
struct SynthesizedHand {
    std::array<Vec3, 5> fingertips{};
    Pose wrist;
};

inline SynthesizedHand synthesize_fingers(const Pose& thumb, double gripper, Side side,
                                          const RetargetConfig& cfg) {
    const FingerParams& f = cfg.fingers;
    Mat3 rot = quat_to_matrix(thumb.orientation);
    SynthesizedHand out;
    for (int i = 0; i < 5; ++i) {
        Vec3 local = f.finger_direction(i, side) * f.base_length[static_cast<size_t>(i)] *
                     f.extension(i, gripper);
        out.fingertips[static_cast<size_t>(i)] = thumb.position + rot * local;
    }
    out.wrist.position = thumb.position + rot * f.side_wrist_offset(side);
    out.wrist.orientation = thumb.orientation;
    return out;
}

// ---------------------------------------------------------------------------
// Robot -> human (Eq.-3 style): the robot EEF pose, mapped through r_m, is
// adopted as the thumb reference; fingers and wrist follow from f_d.
// ---------------------------------------------------------------------------
inline std::vector<std::pair<Pose, Pose>> robot_to_human_thumb(const std::vector<EefState>& eef_traj,
                                                               const RetargetConfig& cfg) {
    if (eef_traj.empty()) throw EmptyTrajectory();
    std::vector<std::pair<Pose, Pose>> out;
    out.reserve(eef_traj.size());
    for (const auto& e : eef_traj)
        out.emplace_back(apply_transform(cfg.r_m, e.left), apply_transform(cfg.r_m, e.right));
    return out;
}

inline HumanHandState hand_from_thumbs(const Pose& left_thumb, const Pose& right_thumb,
                                       double left_gripper, double right_gripper,
                                       const RetargetConfig& cfg) {
    HumanHandState h;
    SynthesizedHand l = synthesize_fingers(left_thumb, left_gripper, Side::left, cfg);
    SynthesizedHand r = synthesize_fingers(right_thumb, right_gripper, Side::right, cfg);
    h.left_fingertips = l.fingertips;
    h.right_fingertips = r.fingertips;
    h.left_wrist.position = l.wrist.position;
    h.left_wrist.orientation = sixd_from_quat(l.wrist.orientation);
    h.right_wrist.position = r.wrist.position;
    h.right_wrist.orientation = sixd_from_quat(r.wrist.orientation);
    return h;
}

inline std::vector<HumanHandState> robot_to_human(const std::vector<EefState>& eef_traj,
                                                  const std::vector<std::pair<double, double>>& grippers,
                                                  const RetargetConfig& cfg) {
    auto thumbs = robot_to_human_thumb(eef_traj, cfg);
    std::vector<HumanHandState> out;
    out.reserve(thumbs.size());
    for (size_t t = 0; t < thumbs.size(); ++t) {
        double gl = t < grippers.size() ? grippers[t].first : 1.0;
        double gr = t < grippers.size() ? grippers[t].second : 1.0;
        out.push_back(hand_from_thumbs(thumbs[t].first, thumbs[t].second, gl, gr, cfg));
    }
    return out;
}

// Joint-state input goes through forward kinematics first.
inline std::vector<HumanHandState> robot_to_human(const std::vector<RobotJointState>& traj,
                                                  const RetargetConfig& cfg) {
    if (traj.empty()) throw EmptyTrajectory();
    std::vector<EefState> eef;
    std::vector<std::pair<double, double>> grip;
    eef.reserve(traj.size());
    grip.reserve(traj.size());
    for (const auto& s : traj) {
        eef.push_back(EefState{forward_kinematics(cfg.left_chain, s.left_q),
                               forward_kinematics(cfg.right_chain, s.right_q)});
        grip.emplace_back(s.left_gripper, s.right_gripper);
    }
    return robot_to_human(eef, grip, cfg);
}

// ---------------------------------------------------------------------------
// Human -> robot (Eq.-2 style). Positions follow the relative-displacement
// rule eef_t = eef_0 + R^h (thumb_t - thumb_0); orientations compose the
// initial EEF orientation with the R^h-mapped relative wrist rotation, which
// reduces to the identity at t = 0.
// ---------------------------------------------------------------------------
inline std::vector<EefState> human_to_robot_eef(const std::vector<HumanHandState>& traj,
                                                const RetargetConfig& cfg) {
    if (traj.empty()) throw EmptyTrajectory();
    Quaternion q_rh = quat_from_matrix(rotation_part(cfg.r_h));

    struct SideRef {
        Vec3 pos0;
        Quaternion rot0_mapped; // rot(R^h) * wrist_rot_0
    };
    auto make_ref = [&](Side side) {
        Pose ref0 = thumb_reference(traj.front(), side, cfg.side_thumb_offset(side));
        return SideRef{ref0.position, quat_multiply(q_rh, ref0.orientation)};
    };
    SideRef left0 = make_ref(Side::left);
    SideRef right0 = make_ref(Side::right);

    std::vector<EefState> out;
    out.reserve(traj.size());
    for (const auto& h : traj) {
        auto map_side = [&](Side side, const SideRef& ref0, const Pose& eef0) {
            Pose ref = thumb_reference(h, side, cfg.side_thumb_offset(side));
            Pose e;
            e.position = eef0.position + cfg.r_h.linear * (ref.position - ref0.pos0);
            Quaternion rel = quat_multiply(quat_conjugate(ref0.rot0_mapped),
                                           quat_multiply(q_rh, ref.orientation));
            e.orientation = quat_multiply(eef0.orientation, rel);
            return e;
        };
        out.push_back(EefState{map_side(Side::left, left0, cfg.initial_eef.left),
                               map_side(Side::right, right0, cfg.initial_eef.right)});
    }
    return out;
}

// f_IK over the EEF trajectory, warm-started along the path. IK failures are
// flagged in the report and degrade to hold-last-value samples; the
// trajectory is never aborted.
inline std::vector<RobotJointState> human_to_robot_joints(const std::vector<EefState>& eef_traj,
                                                          const std::vector<HumanHandState>& human_traj,
                                                          const RetargetConfig& cfg,
                                                          RetargetReport* report = nullptr) {
    if (eef_traj.empty()) throw EmptyTrajectory();
    std::vector<RobotJointState> out;
    out.reserve(eef_traj.size());
    JointVector seed_l = clamp_to_limits(cfg.left_chain, cfg.ik_seed_left);
    JointVector seed_r = clamp_to_limits(cfg.right_chain, cfg.ik_seed_right);

    for (size_t t = 0; t < eef_traj.size(); ++t) {
        RobotJointState s;
        auto solve_side = [&](Side side, const Pose& target, JointVector& seed, JointVector& q_out,
                              double gripper) {
            IkSolution sol = solve_ik(cfg.chain(side), target, seed, cfg.ik);
            if (sol.converged) {
                seed = sol.q;
                q_out = sol.q;
            } else {
                q_out = seed; // hold last converged value
            }
            if (report) {
                report->steps.push_back(RetargetStepRecord{static_cast<int>(t), side, sol.converged,
                                                           sol.position_error,
                                                           sol.orientation_error, gripper});
            }
        };
        double gl = 1.0, gr = 1.0;
        if (t < human_traj.size()) {
            gl = estimate_gripper(human_traj[t], Side::left, cfg);
            gr = estimate_gripper(human_traj[t], Side::right, cfg);
        }
        solve_side(Side::left, eef_traj[t].left, seed_l, s.left_q, gl);
        solve_side(Side::right, eef_traj[t].right, seed_r, s.right_q, gr);
        s.left_gripper = gl;
        s.right_gripper = gr;
        out.push_back(s);
    }
    return out;
}

} // namespace mimic
