#pragma once

#include <string>
#include <vector>

#include "mimic/dataset.hpp"
#include "mimic/policy.hpp"
#include "mimic/training.hpp"

namespace mimic {

struct EvalConfig {
    int rollouts = 50;
    int execute_rows = 4; // receding horizon: rows executed per replan
    int max_control_steps = 80;
    int sample_steps = 8;
    uint64_t seed = 0;
};

struct EvalReport {
    int rollouts = 0;
    int successes = 0;
    double success_rate = 0.0;
    double mean_final_error = 0.0; // meters, mean over rollouts (mean of both arms)
    double mean_chunk_mse = 0.0;   // raw-space MSE on robot dims vs the scripted expert
    int expert_ik_failures = 0;
    double max_expert_pos_residual = 0.0;
};

enum class EvalPolicy { model, oracle };

// Closed-loop evaluation in the pure-kinematic toy environment: at each
// control step the policy samples a chunk, the first execute_rows joint rows
// are applied (limit-clamped) and the observation is recomputed through FK;
// success means both final EEFs sit within the task tolerance of their
// targets. The oracle policy replays the scripted expert chunks and bounds
// the metric from above.
inline EvalReport run_policy_eval(const PolicyParams* params, const NormStats* stats,
                                  const ReachTaskConfig& task, const RetargetConfig& cfg,
                                  const EvalConfig& eval, EvalPolicy policy_kind,
                                  int horizon_override = 0) {
    int horizon = params ? params->cfg.horizon : horizon_override;
    if (horizon < 1) throw ConfigError("evaluation needs a positive horizon");
    if (policy_kind == EvalPolicy::model && (!params || !stats))
        throw ConfigError("model evaluation needs a checkpoint");

    EvalReport report;
    report.rollouts = eval.rollouts;
    double final_error_sum = 0.0;
    double chunk_mse_sum = 0.0;
    int64_t chunk_mse_count = 0;

    for (int r = 0; r < eval.rollouts; ++r) {
        Rng rng = substream(mix_seed(eval.seed, 0x65766cULL), static_cast<uint64_t>(r));
        detail::ScriptedPath path = detail::script_reach(task, cfg, rng);
        Eigen::VectorXd scene = detail::scene_of(path);
        int expert_len = static_cast<int>(path.eef.size());

        // scripted expert in joint space (reference for oracle + chunk MSE)
        std::vector<RobotJointState> expert(static_cast<size_t>(expert_len));
        {
            JointVector warm_l = task.home_left, warm_r = task.home_right;
            for (int t = 0; t < expert_len; ++t) {
                auto solve_side = [&](const KinematicChain& chain, const Pose& target,
                                      JointVector& warm) {
                    IkSolution sol = solve_ik(chain, target, warm, cfg.ik);
                    if (!sol.converged) {
                        ++report.expert_ik_failures;
                        report.max_expert_pos_residual =
                            std::max(report.max_expert_pos_residual, sol.position_error);
                    } else {
                        warm = sol.q;
                        report.max_expert_pos_residual =
                            std::max(report.max_expert_pos_residual, sol.position_error);
                    }
                    return warm;
                };
                expert[static_cast<size_t>(t)].left_q =
                    solve_side(cfg.left_chain, path.eef[static_cast<size_t>(t)].left, warm_l);
                expert[static_cast<size_t>(t)].right_q =
                    solve_side(cfg.right_chain, path.eef[static_cast<size_t>(t)].right, warm_r);
                expert[static_cast<size_t>(t)].left_gripper = path.grippers[static_cast<size_t>(t)].first;
                expert[static_cast<size_t>(t)].right_gripper = path.grippers[static_cast<size_t>(t)].second;
            }
        }
        // expert labels: next-state targets, final state held
        auto expert_label = [&](int t) -> const RobotJointState& {
            return expert[static_cast<size_t>(std::min(t + 1, expert_len - 1))];
        };

        RobotJointState state;
        state.left_q = task.home_left;
        state.right_q = task.home_right;

        int executed = 0;
        while (executed < eval.max_control_steps) {
            Eigen::MatrixXd chunk_rows(horizon, kUnifiedDims);
            if (policy_kind == EvalPolicy::oracle) {
                for (int i = 0; i < horizon; ++i) {
                    UnifiedAction u;
                    u.robot = expert_label(executed + i);
                    u.eef.left = forward_kinematics(cfg.left_chain, u.robot.left_q);
                    u.eef.right = forward_kinematics(cfg.right_chain, u.robot.right_q);
                    u.mask = mask_robot_native();
                    chunk_rows.row(i) = pack(u).transpose();
                }
            } else {
                Observation obs;
                obs.instruction_id = task.instruction_id;
                obs.scene = scene;
                UnifiedAction proprio;
                proprio.robot = state;
                proprio.eef.left = forward_kinematics(cfg.left_chain, state.left_q);
                proprio.eef.right = forward_kinematics(cfg.right_chain, state.right_q);
                proprio.mask = mask_robot_native();
                obs.proprio = pack(proprio);
                ActionChunk chunk =
                    sample_actions(*params, *stats, obs, eval.sample_steps,
                                   mix_seed(eval.seed, static_cast<uint64_t>(r),
                                            static_cast<uint64_t>(executed)));
                chunk_rows = chunk.rows;
            }

            // chunk error against the scripted expert over the same window
            for (int i = 0; i < horizon; ++i) {
                UnifiedAction ref;
                ref.robot = expert_label(executed + i);
                ActionVector ref_v = pack(ref);
                for (int k = kRobotOffset; k < kEefOffset; ++k) {
                    double e = chunk_rows(i, k) - ref_v[k];
                    chunk_mse_sum += e * e;
                    ++chunk_mse_count;
                }
            }

            int rows_to_run = std::min(eval.execute_rows, eval.max_control_steps - executed);
            for (int i = 0; i < rows_to_run; ++i) {
                UnifiedAction u = unpack(ActionVector(chunk_rows.row(i).transpose()), mask_all());
                state.left_q = clamp_to_limits(cfg.left_chain, u.robot.left_q);
                state.right_q = clamp_to_limits(cfg.right_chain, u.robot.right_q);
                state.left_gripper = u.robot.left_gripper;
                state.right_gripper = u.robot.right_gripper;
                ++executed;
            }
        }

        Vec3 final_left = forward_kinematics(cfg.left_chain, state.left_q).position;
        Vec3 final_right = forward_kinematics(cfg.right_chain, state.right_q).position;
        double err_l = (final_left - path.target_left).norm();
        double err_r = (final_right - path.target_right).norm();
        final_error_sum += 0.5 * (err_l + err_r);
        if (err_l <= task.success_tolerance && err_r <= task.success_tolerance)
            ++report.successes;
    }

    report.success_rate =
        eval.rollouts > 0 ? static_cast<double>(report.successes) / eval.rollouts : 0.0;
    report.mean_final_error = eval.rollouts > 0 ? final_error_sum / eval.rollouts : 0.0;
    report.mean_chunk_mse =
        chunk_mse_count > 0 ? chunk_mse_sum / static_cast<double>(chunk_mse_count) : 0.0;
    return report;
}

inline std::string eval_report_csv(const EvalReport& r) {
    char buf[512];
    std::string out =
        "rollouts,successes,success_rate,mean_final_error,mean_chunk_mse,expert_ik_failures,"
        "max_expert_pos_residual\n";
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%d,%.17g\n", r.rollouts, r.successes,
                  r.success_rate, r.mean_final_error, r.mean_chunk_mse, r.expert_ik_failures,
                  r.max_expert_pos_residual);
    return out + buf;
}

inline std::string eval_report_table(const EvalReport& r) {
    char buf[1024];
    std::snprintf(buf, sizeof(buf),
                  "rollouts            %d\n"
                  "successes           %d\n"
                  "success_rate        %.4f\n"
                  "mean_final_error_m  %.6f\n"
                  "mean_chunk_mse      %.6f\n"
                  "expert_ik_failures  %d\n"
                  "max_expert_pos_res  %.6g\n",
                  r.rollouts, r.successes, r.success_rate, r.mean_final_error, r.mean_chunk_mse,
                  r.expert_ik_failures, r.max_expert_pos_residual);
    return buf;
}

} // namespace mimic
