#pragma once

#include <array>
#include <cstring>
#include <limits>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "mimic/geometry.hpp"
#include "mimic/rng.hpp"

namespace mimic {

using JointVector = Eigen::Matrix<double, 6, 1>;
using Mat66 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

struct JointSpec {
    Vec3 axis{0, 0, 1};     // unit, expressed in the joint frame
    Pose origin_offset;     // fixed transform from the parent frame
    double min_limit = -3.14;
    double max_limit = 3.14;
};

// Serial 6-revolute arm. The gripper is not part of the chain; it is carried
// as a separate scalar in RobotJointState.
struct KinematicChain {
    Pose base_frame;
    std::array<JointSpec, 6> joints;
    Pose tool_offset;
};

inline void validate(const KinematicChain& chain) {
    for (const auto& j : chain.joints) {
        if (std::abs(j.axis.norm() - 1.0) > 1e-9)
            throw ConfigError("joint axis is not unit length");
        if (!(j.min_limit < j.max_limit))
            throw ConfigError("joint limits must satisfy min < max");
    }
}

inline JointVector clamp_to_limits(const KinematicChain& chain, const JointVector& q) {
    JointVector out = q;
    for (int i = 0; i < 6; ++i) {
        const auto& j = chain.joints[static_cast<size_t>(i)];
        if (out[i] < j.min_limit) out[i] = j.min_limit;
        if (out[i] > j.max_limit) out[i] = j.max_limit;
    }
    return out;
}

inline bool within_limits(const KinematicChain& chain, const JointVector& q, double slack = 1e-9) {
    for (int i = 0; i < 6; ++i) {
        const auto& j = chain.joints[static_cast<size_t>(i)];
        if (q[i] < j.min_limit - slack || q[i] > j.max_limit + slack) return false;
    }
    return true;
}

// Composes base_frame, then per joint its fixed offset and the rotation about
// its axis, then tool_offset.
inline Pose forward_kinematics(const KinematicChain& chain, const JointVector& q) {
    Pose t = chain.base_frame;
    for (int i = 0; i < 6; ++i) {
        const auto& j = chain.joints[static_cast<size_t>(i)];
        t = pose_compose(t, j.origin_offset);
        t = pose_compose(t, Pose{Vec3::Zero(), quat_from_axis_angle(j.axis, q[i])});
    }
    return pose_compose(t, chain.tool_offset);
}

// Geometric Jacobian in the base frame. Column i is
// (z_i x (p_end - p_i), z_i) with z_i the joint axis and p_i the joint origin.
inline Mat66 jacobian(const KinematicChain& chain, const JointVector& q) {
    std::array<Vec3, 6> axes;
    std::array<Vec3, 6> origins;
    Pose t = chain.base_frame;
    for (int i = 0; i < 6; ++i) {
        const auto& j = chain.joints[static_cast<size_t>(i)];
        t = pose_compose(t, j.origin_offset);
        axes[static_cast<size_t>(i)] = quat_rotate(t.orientation, j.axis);
        origins[static_cast<size_t>(i)] = t.position;
        t = pose_compose(t, Pose{Vec3::Zero(), quat_from_axis_angle(j.axis, q[i])});
    }
    Vec3 p_end = pose_compose(t, chain.tool_offset).position;
    Mat66 jac;
    for (int i = 0; i < 6; ++i) {
        Vec3 z = axes[static_cast<size_t>(i)];
        Vec3 r = p_end - origins[static_cast<size_t>(i)];
        jac.block<3, 1>(0, i) = z.cross(r);
        jac.block<3, 1>(3, i) = z;
    }
    return jac;
}

struct IkParams {
    double pos_tol = 1e-3;       // meters
    double rot_tol = 1e-2;       // radians
    double lambda = 0.05;        // damping, doubled whenever a step increases the error
    int max_iterations = 200;
    double max_pos_step = 0.15;  // per-iteration error clamp, meters
    double max_rot_step = 0.5;   // per-iteration error clamp, radians
};

struct IkSolution {
    JointVector q = JointVector::Zero();
    double position_error = 0.0;     // meters
    double orientation_error = 0.0;  // radians
    int iterations = 0;
    bool converged = false;
};

namespace detail {
struct IkErr {
    Vec6 e;
    double pos;
    double rot;
    double norm;
};

inline IkErr ik_error(const KinematicChain& chain, const JointVector& q, const Pose& target) {
    Pose cur = forward_kinematics(chain, q);
    IkErr r;
    r.e.head<3>() = target.position - cur.position;
    r.e.tail<3>() =
        quat_rotation_vector(quat_multiply(target.orientation, quat_conjugate(cur.orientation)));
    r.pos = r.e.head<3>().norm();
    r.rot = r.e.tail<3>().norm();
    r.norm = r.e.norm();
    return r;
}

// Core damped-least-squares descent. One iteration = one Jacobian evaluation
// followed by an inner damping search (the first lambda whose step decreases
// the error is accepted; lambda doubles on each rejection). The commanded
// error is clamped so distant targets are approached in moderate increments,
// and the damping floor tracks the current error, which keeps the tail of the
// convergence fast. Exits early after stall_patience iterations without
// meaningful progress.
inline int dls_descent(const KinematicChain& chain, const Pose& target, JointVector& q,
                       const IkParams& params, int budget, int stall_patience, IkErr& best) {
    best = ik_error(chain, q, target);
    double lambda = params.lambda;
    int iter = 0;
    int since_improve = 0;
    while (iter < budget) {
        if (best.pos <= params.pos_tol && best.rot <= params.rot_tol) break;
        if (since_improve > stall_patience) break;
        ++iter;
        Mat66 jac = jacobian(chain, q);
        Vec6 e = best.e;
        if (best.pos > params.max_pos_step) e.head<3>() *= params.max_pos_step / best.pos;
        if (best.rot > params.max_rot_step) e.tail<3>() *= params.max_rot_step / best.rot;
        Mat66 jtj = jac.transpose() * jac;
        Vec6 jte = jac.transpose() * e;
        bool accepted = false;
        for (int k = 0; k < 8; ++k) {
            Mat66 h = jtj;
            h.diagonal().array() += lambda * lambda;
            Vec6 step = h.ldlt().solve(jte);
            JointVector q_new = clamp_to_limits(chain, q + step);
            IkErr trial = ik_error(chain, q_new, target);
            if (trial.norm < best.norm) {
                double rel = (best.norm - trial.norm) / std::max(best.norm, 1e-12);
                q = q_new;
                best = trial;
                accepted = true;
                since_improve = rel < 1e-3 ? since_improve + 1 : 0;
                lambda = std::clamp(best.norm, 1e-5, params.lambda);
                break;
            }
            lambda *= 2.0;
            if (lambda > 1e8) {
                lambda = 1e8;
                break;
            }
        }
        if (!accepted) ++since_improve;
    }
    return iter;
}

inline uint64_t pose_hash(const Pose& t) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](double d) {
        uint64_t u;
        std::memcpy(&u, &d, sizeof(u));
        h = (h ^ u) * 0x100000001b3ULL;
    };
    mix(t.position.x());
    mix(t.position.y());
    mix(t.position.z());
    mix(t.orientation.w);
    mix(t.orientation.x);
    mix(t.orientation.y);
    mix(t.orientation.z);
    return h;
}
} // namespace detail

// f_IK. Damped-least-squares descent from the caller's seed; if that stalls,
// restarts from the best of a pool of in-limit joint draws derived
// deterministically from the target pose, until the max_iterations budget of
// update steps is spent. Warm-started calls converge on the first attempt and
// never touch the pools. Never throws on non-convergence; the best iterate is
// returned with converged = false so callers can accept or reject it.
inline IkSolution solve_ik(const KinematicChain& chain, const Pose& target,
                           const JointVector& seed, const IkParams& params = IkParams{}) {
    if (!within_limits(chain, seed)) throw SeedOutOfLimits();

    constexpr int kPoolSize = 128;
    constexpr int kAttemptBudget = 26;
    constexpr int kStallPatience = 7;
    constexpr int kMaxAttempts = 40;

    int remaining = params.max_iterations;
    IkSolution best;
    bool have = false;
    uint64_t hash = detail::pose_hash(target);

    auto score = [](double pos, double rot) { return pos + 0.3 * rot; };

    int attempt = 0;
    while (remaining > 0 && attempt < kMaxAttempts) {
        JointVector q0;
        if (attempt == 0) {
            q0 = clamp_to_limits(chain, seed);
        } else {
            Rng pool_rng(mix_seed(hash, static_cast<uint64_t>(attempt)));
            double best_score = std::numeric_limits<double>::infinity();
            for (int c = 0; c < kPoolSize; ++c) {
                JointVector cand;
                for (int k = 0; k < 6; ++k) {
                    const auto& j = chain.joints[static_cast<size_t>(k)];
                    cand[k] = pool_rng.uniform(j.min_limit, j.max_limit);
                }
                detail::IkErr e = detail::ik_error(chain, cand, target);
                if (score(e.pos, e.rot) < best_score) {
                    best_score = score(e.pos, e.rot);
                    q0 = cand;
                }
            }
        }
        detail::IkErr err;
        int used = detail::dls_descent(chain, target, q0, params,
                                       std::min(remaining, kAttemptBudget), kStallPatience, err);
        remaining -= std::max(used, 1);
        if (!have || score(err.pos, err.rot) < score(best.position_error, best.orientation_error)) {
            best.q = q0;
            best.position_error = err.pos;
            best.orientation_error = err.rot;
            best.converged = err.pos <= params.pos_tol && err.rot <= params.rot_tol;
            have = true;
        }
        if (best.converged) break;
        ++attempt;
    }

    if (!best.converged && remaining > 0) {
        // polish the best iterate with whatever budget is left
        JointVector q = best.q;
        detail::IkErr err;
        int used =
            detail::dls_descent(chain, target, q, params, remaining, 2 * kStallPatience, err);
        remaining -= std::max(used, 1);
        if (score(err.pos, err.rot) < score(best.position_error, best.orientation_error)) {
            best.q = q;
            best.position_error = err.pos;
            best.orientation_error = err.rot;
            best.converged = err.pos <= params.pos_tol && err.rot <= params.rot_tol;
        }
    }

    best.iterations = params.max_iterations - std::max(remaining, 0);
    return best;
}

// ---------------------------------------------------------------------------
// Built-in presets. Two arms with distinct link lengths so cross-embodiment
// paths exercise different geometry. Axis pattern z-y-y z-y-z (yaw shoulder,
// pitch shoulder, pitch elbow, spherical-ish wrist).
// ---------------------------------------------------------------------------
namespace detail {
inline KinematicChain make_arm(double l_shoulder, double l_upper, double l_fore,
                               double l_wrist1, double l_wrist2, double l_tool) {
    KinematicChain c;
    auto offset_z = [](double dz) { return Pose{Vec3(0, 0, dz), Quaternion{}}; };
    c.joints[0] = JointSpec{Vec3(0, 0, 1), offset_z(0.10), -2.96, 2.96};
    c.joints[1] = JointSpec{Vec3(0, 1, 0), offset_z(l_shoulder), -2.0, 2.0};
    c.joints[2] = JointSpec{Vec3(0, 1, 0), offset_z(l_upper), -2.4, 2.4};
    c.joints[3] = JointSpec{Vec3(0, 0, 1), offset_z(l_fore), -2.96, 2.96};
    c.joints[4] = JointSpec{Vec3(0, 1, 0), offset_z(l_wrist1), -2.0, 2.0};
    c.joints[5] = JointSpec{Vec3(0, 0, 1), offset_z(l_wrist2), -2.96, 2.96};
    c.tool_offset = offset_z(l_tool);
    return c;
}
} // namespace detail

inline KinematicChain preset_chain(const std::string& name) {
    if (name == "arm_a") return detail::make_arm(0.08, 0.30, 0.25, 0.08, 0.06, 0.05);
    if (name == "arm_b") return detail::make_arm(0.06, 0.26, 0.22, 0.07, 0.05, 0.04);
    throw ConfigError("unknown chain preset: " + name);
}

} // namespace mimic
