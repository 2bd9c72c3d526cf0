// mimic: retargeting, dataset construction, training, sampling, and
// evaluation for the cross-embodiment reach setup. One subcommand per
// pipeline stage; everything is driven by a JSON experiment config plus
// sparse --set overrides, and every command is deterministic for a fixed
// (config, seed).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mimic/config.hpp"
#include "mimic/dataset.hpp"
#include "mimic/parallel.hpp"
#include "mimic/policy.hpp"
#include "mimic/retarget.hpp"
#include "mimic/rollout.hpp"
#include "mimic/training.hpp"

namespace {

using namespace mimic;

void require_path(const std::string& value, const std::string& field) {
    if (value.empty()) throw ConfigError("missing required config field: " + field);
}

void ensure_parent_dir(const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_retarget_report_csv(const RetargetReport& report, const std::string& path) {
    ensure_parent_dir(path);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open report file: " + path);
    os << "step,side,converged,pos_residual,rot_residual,gripper\n";
    for (const auto& s : report.steps) {
        os << s.step << "," << (s.side == Side::left ? "left" : "right") << ","
           << (s.converged ? 1 : 0) << "," << fmt(s.pos_residual) << "," << fmt(s.rot_residual)
           << "," << fmt(s.gripper) << "\n";
    }
}

// Rebuilds the state sequence of a demo (proprio steps plus the final label),
// maps it to the other embodiment, and re-emits proprio/label pairs shifted
// by one step, preserving the next-state labelling convention.
Demonstration retarget_demo(const Demonstration& d, const RetargetConfig& cfg,
                            const std::string& direction, RetargetReport* report) {
    size_t n = d.steps.size();
    if (n == 0) throw EmptyTrajectory();
    Demonstration out;
    out.id = d.id;
    out.instruction_id = d.instruction_id;

    std::vector<UnifiedAction> states;
    states.reserve(n + 1);
    for (const auto& s : d.steps) states.push_back(s.proprio);
    states.push_back(d.steps.back().label);

    std::vector<UnifiedAction> mapped(states.size());
    if (direction == "r2h") {
        if (d.embodiment != Embodiment::robot)
            throw ConfigError("r2h retargeting expects robot-embodiment demos");
        std::vector<EefState> eef;
        std::vector<std::pair<double, double>> grips;
        for (const auto& s : states) {
            eef.push_back(s.eef);
            grips.emplace_back(s.robot.left_gripper, s.robot.right_gripper);
        }
        auto hands = robot_to_human(eef, grips, cfg);
        for (size_t t = 0; t < states.size(); ++t) {
            mapped[t].human = hands[t];
            mapped[t].mask = mask_human();
            if (report)
                report->steps.push_back(RetargetStepRecord{static_cast<int>(t), Side::left, true,
                                                           0.0, 0.0, grips[t].first});
        }
        out.embodiment = Embodiment::human;
    } else if (direction == "h2r") {
        if (d.embodiment != Embodiment::human)
            throw ConfigError("h2r retargeting expects human-embodiment demos");
        std::vector<HumanHandState> hands;
        for (const auto& s : states) hands.push_back(s.human);
        auto eef = human_to_robot_eef(hands, cfg);
        auto joints = human_to_robot_joints(eef, hands, cfg, report);
        for (size_t t = 0; t < states.size(); ++t) {
            mapped[t].eef = eef[t];
            mapped[t].robot = joints[t];
            mapped[t].mask = mask_robot_native();
        }
        out.embodiment = Embodiment::robot;
    } else {
        throw ConfigError("direction must be h2r or r2h, got " + direction);
    }

    out.steps.resize(n);
    for (size_t t = 0; t < n; ++t) {
        out.steps[t].scene = d.steps[t].scene;
        out.steps[t].proprio = mapped[t];
        out.steps[t].label = mapped[t + 1];
    }
    return out;
}

int cmd_retarget(const ExperimentConfig& cfg, const std::string& input,
                 const std::string& output, const std::string& direction,
                 const std::string& report_path) {
    DatasetMeta meta;
    auto demos = read_dataset(input, &meta);
    if (demos.empty()) throw IoError("input dataset has no demonstrations: " + input);
    if (direction != "h2r" && direction != "r2h")
        throw ConfigError("direction must be h2r or r2h, got " + direction);

    // demos already in the target embodiment are skipped, not copied
    Embodiment source = direction == "r2h" ? Embodiment::robot : Embodiment::human;
    RetargetReport report;
    std::vector<Demonstration> out;
    size_t skipped = 0;
    for (const auto& d : demos) {
        if (d.embodiment != source) {
            ++skipped;
            continue;
        }
        out.push_back(retarget_demo(d, cfg.retarget, direction, &report));
    }
    if (out.empty())
        throw IoError("input dataset has no " + std::string(to_string(source)) + " demos: " + input);

    ensure_parent_dir(output);
    write_dataset(out, meta, output);
    if (!report_path.empty()) write_retarget_report_csv(report, report_path);
    std::cout << "retargeted " << out.size() << " demos (" << direction << "), skipped " << skipped
              << ", " << report.failures() << " IK failures\n";
    return 0;
}

int cmd_build_dataset(const ExperimentConfig& cfg) {
    require_path(cfg.paths.dataset, "paths.dataset");
    int threads = thread_count();
    std::vector<Demonstration> demos = generate_synthetic_demos(
        cfg.task, cfg.retarget, Embodiment::robot, cfg.dataset.demos_per_embodiment, cfg.seed,
        threads);
    auto human = generate_synthetic_demos(cfg.task, cfg.retarget, Embodiment::human,
                                          cfg.dataset.demos_per_embodiment, cfg.seed, threads);
    for (auto& d : human) {
        d.id += static_cast<uint32_t>(cfg.dataset.demos_per_embodiment);
        demos.push_back(std::move(d));
    }
    if (cfg.dataset.augment) {
        std::vector<Demonstration> augmented(demos.size());
        parallel_for(static_cast<int>(demos.size()), threads, [&](int i) {
            augmented[static_cast<size_t>(i)] =
                augment_complementary(demos[static_cast<size_t>(i)], cfg.retarget);
        });
        demos = std::move(augmented);
    }

    DatasetMeta meta;
    meta.horizon = cfg.dataset.horizon;
    meta.scene_dim = scene_dim(cfg.task);
    meta.instruction_ids = {cfg.task.instruction_id};
    ensure_parent_dir(cfg.paths.dataset);
    write_dataset(demos, meta, cfg.paths.dataset);
    if (!cfg.paths.manifest.empty()) {
        ensure_parent_dir(cfg.paths.manifest);
        write_manifest(demos, meta, cfg.paths.manifest);
    }
    size_t steps = 0;
    for (const auto& d : demos) steps += d.steps.size();
    std::cout << "wrote " << demos.size() << " demos, " << steps << " steps to "
              << cfg.paths.dataset << "\n";
    return 0;
}

// Split: the last holdout_fraction of demo ids within each embodiment.
void split_demos(const std::vector<Demonstration>& demos, double holdout_fraction,
                 std::vector<Demonstration>* train, std::vector<Demonstration>* holdout) {
    size_t robot_total = 0, human_total = 0;
    for (const auto& d : demos) (d.embodiment == Embodiment::robot ? robot_total : human_total)++;
    size_t robot_hold = static_cast<size_t>(holdout_fraction * static_cast<double>(robot_total));
    size_t human_hold = static_cast<size_t>(holdout_fraction * static_cast<double>(human_total));
    size_t robot_seen = 0, human_seen = 0;
    for (const auto& d : demos) {
        bool hold;
        if (d.embodiment == Embodiment::robot)
            hold = robot_seen++ >= robot_total - robot_hold;
        else
            hold = human_seen++ >= human_total - human_hold;
        (hold ? holdout : train)->push_back(d);
    }
}

std::vector<TrainingSample> samples_of(const std::vector<Demonstration>& demos, int horizon,
                                       int stride) {
    std::vector<TrainingSample> out;
    for (const auto& d : demos) {
        auto chunks = chunk_samples(d, horizon, stride);
        out.insert(out.end(), chunks.begin(), chunks.end());
    }
    return out;
}

int cmd_stats(const ExperimentConfig& cfg, const std::string& dataset_override,
              const std::string& output_override) {
    std::string dataset = dataset_override.empty() ? cfg.paths.dataset : dataset_override;
    std::string output = output_override.empty() ? cfg.paths.stats : output_override;
    require_path(dataset, "paths.dataset");
    require_path(output, "paths.stats");
    auto demos = read_dataset(dataset);
    NormStats stats = compute_norm_stats(demos);
    ensure_parent_dir(output);
    std::ofstream os(output, std::ios::trunc);
    if (!os) throw IoError("cannot open stats file: " + output);
    os << "dim,mean,std\n";
    for (int i = 0; i < kUnifiedDims; ++i)
        os << i << "," << fmt(stats.mean[i]) << "," << fmt(stats.std[i]) << "\n";
    std::cout << "wrote normalization stats for " << demos.size() << " demos to " << output
              << "\n";
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& resume_path) {
    require_path(cfg.paths.dataset, "paths.dataset");
    require_path(cfg.paths.checkpoint, "paths.checkpoint");
    require_path(cfg.paths.metrics, "paths.metrics");

    DatasetMeta meta;
    auto demos = read_dataset(cfg.paths.dataset, &meta);
    std::vector<Demonstration> train_demos, holdout_demos;
    split_demos(demos, cfg.dataset.holdout_fraction, &train_demos, &holdout_demos);
    auto train_samples = samples_of(train_demos, cfg.dataset.horizon, cfg.dataset.stride);
    auto holdout_samples = samples_of(holdout_demos, cfg.dataset.horizon, cfg.dataset.stride);
    if (train_samples.empty()) throw ConfigError("training split is empty");

    PolicyParams params;
    AdamState adam;
    NormStats stats;
    if (resume_path.empty()) {
        params = init_policy(cfg.model, cfg.seed);
        adam = make_adam_state(params);
        stats = compute_norm_stats(train_demos);
    } else {
        Checkpoint ck = load_checkpoint(resume_path);
        require_compatible(cfg.model, ck.params.cfg);
        if (!ck.has_adam)
            throw ConfigError("checkpoint has no optimizer state, cannot resume: " + resume_path);
        params = std::move(ck.params);
        adam = std::move(ck.adam);
        stats = ck.stats;
    }

    double heldout_before = 0.0;
    bool have_heldout = !holdout_samples.empty();
    if (have_heldout)
        heldout_before = heldout_action_mse(params, stats, holdout_samples,
                                            cfg.model.sample_steps, mix_seed(cfg.seed, 0xeda));

    auto rows = train(params, train_samples, stats, cfg.optimizer, adam);

    ensure_parent_dir(cfg.paths.metrics);
    write_metrics_csv(rows, cfg.paths.metrics);
    ensure_parent_dir(cfg.paths.checkpoint);
    save_checkpoint(cfg.paths.checkpoint, params, stats, &adam);

    std::cout << "trained " << rows.size() << " steps on " << train_samples.size()
              << " samples; checkpoint " << cfg.paths.checkpoint << "\n";
    if (!rows.empty())
        std::cout << "first_loss " << fmt(rows.front().total) << " last_loss "
                  << fmt(rows.back().total) << "\n";
    if (have_heldout) {
        double heldout_after = heldout_action_mse(params, stats, holdout_samples,
                                                  cfg.model.sample_steps, mix_seed(cfg.seed, 0xeda));
        std::cout << "heldout_action_mse_before " << fmt(heldout_before)
                  << " heldout_action_mse_after " << fmt(heldout_after) << "\n";
    }
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
             const std::string& policy_name, const std::string& output_override) {
    EvalReport report;
    if (policy_name == "oracle") {
        report = run_policy_eval(nullptr, nullptr, cfg.task, cfg.retarget, cfg.eval,
                                 EvalPolicy::oracle, cfg.model.horizon);
    } else if (policy_name == "model") {
        std::string ckpt = checkpoint_path.empty() ? cfg.paths.checkpoint : checkpoint_path;
        require_path(ckpt, "paths.checkpoint");
        Checkpoint ck = load_checkpoint(ckpt);
        require_compatible(cfg.model, ck.params.cfg);
        report = run_policy_eval(&ck.params, &ck.stats, cfg.task, cfg.retarget, cfg.eval,
                                 EvalPolicy::model);
    } else {
        throw ConfigError("--policy must be model or oracle, got " + policy_name);
    }

    std::cout << eval_report_table(report);
    std::string out = output_override.empty() ? cfg.paths.eval_report : output_override;
    if (!out.empty()) {
        ensure_parent_dir(out);
        std::ofstream os(out, std::ios::trunc);
        if (!os) throw IoError("cannot open eval report: " + out);
        os << eval_report_csv(report);
    }
    return 0;
}

int cmd_sample(const ExperimentConfig& cfg, const std::string& checkpoint_path, int demo_index,
               int step_index, const std::string& output) {
    std::string ckpt = checkpoint_path.empty() ? cfg.paths.checkpoint : checkpoint_path;
    require_path(ckpt, "paths.checkpoint");
    require_path(cfg.paths.dataset, "paths.dataset");
    Checkpoint ck = load_checkpoint(ckpt);
    require_compatible(cfg.model, ck.params.cfg);
    auto demos = read_dataset(cfg.paths.dataset);
    if (demo_index < 0 || demo_index >= static_cast<int>(demos.size()))
        throw ConfigError("demo index out of range: " + std::to_string(demo_index));
    const Demonstration& d = demos[static_cast<size_t>(demo_index)];
    if (step_index < 0 || step_index >= static_cast<int>(d.steps.size()))
        throw ConfigError("step index out of range: " + std::to_string(step_index));

    Observation obs;
    obs.instruction_id = d.instruction_id;
    obs.scene = d.steps[static_cast<size_t>(step_index)].scene;
    obs.proprio = pack(d.steps[static_cast<size_t>(step_index)].proprio);
    ActionChunk chunk = sample_actions(ck.params, ck.stats, obs, cfg.eval.sample_steps,
                                       mix_seed(cfg.seed, 0x73ULL));

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!output.empty()) {
        ensure_parent_dir(output);
        file.open(output, std::ios::trunc);
        if (!file) throw IoError("cannot open sample output: " + output);
        out = &file;
    }
    for (int r = 0; r < chunk.rows.rows(); ++r) {
        for (int c = 0; c < chunk.rows.cols(); ++c)
            (*out) << (c ? "," : "") << fmt(chunk.rows(r, c));
        (*out) << "\n";
    }
    return 0;
}

int cmd_selftest(const ExperimentConfig& cfg, const std::string& broken_tensor) {
    int failures = 0;
    auto check = [&](const std::string& name, bool ok, const std::string& detail = "") {
        std::cout << (ok ? "[ok]   " : "[FAIL] ") << name;
        if (!ok && !detail.empty()) std::cout << ": " << detail;
        std::cout << "\n";
        if (!ok) ++failures;
    };

    // FK/Jacobian against central finite differences
    {
        double worst = 0.0;
        Rng rng(mix_seed(cfg.seed, 1));
        for (int i = 0; i < 20; ++i) {
            const KinematicChain& chain = i % 2 ? cfg.retarget.left_chain : cfg.retarget.right_chain;
            JointVector q;
            for (int k = 0; k < 6; ++k) {
                const auto& j = chain.joints[static_cast<size_t>(k)];
                q[k] = rng.uniform(j.min_limit + 1e-3, j.max_limit - 1e-3);
            }
            Mat66 analytic = jacobian(chain, q);
            for (int col = 0; col < 6; ++col) {
                JointVector qp = q, qm = q;
                qp[col] += 1e-6;
                qm[col] -= 1e-6;
                Pose fp = forward_kinematics(chain, qp);
                Pose fm = forward_kinematics(chain, qm);
                Vec3 dp = (fp.position - fm.position) / 2e-6;
                worst = std::max(worst, (analytic.block<3, 1>(0, col) - dp).cwiseAbs().maxCoeff());
            }
        }
        check("jacobian_vs_finite_differences", worst < 1e-5, "max deviation " + fmt(worst));
    }

    // IK on FK-generated targets
    {
        Rng rng(mix_seed(cfg.seed, 2));
        int converged = 0;
        for (int i = 0; i < 20; ++i) {
            const KinematicChain& chain = cfg.retarget.left_chain;
            JointVector q;
            for (int k = 0; k < 6; ++k) {
                const auto& j = chain.joints[static_cast<size_t>(k)];
                q[k] = rng.uniform(j.min_limit, j.max_limit);
            }
            IkSolution sol =
                solve_ik(chain, forward_kinematics(chain, q), cfg.retarget.ik_seed_left, cfg.retarget.ik);
            if (sol.converged) ++converged;
        }
        check("ik_fk_targets", converged >= 19, std::to_string(converged) + "/20 converged");
    }

    // pack/unpack round trip
    {
        UnifiedAction u;
        u.robot.left_q << 0.1, -0.2, 0.3, -0.4, 0.5, -0.6;
        u.eef.left.position = Vec3(0.2, 0.1, 0.4);
        u.mask = mask_all();
        ActionVector v = pack(u);
        bool ok = (pack(unpack(v, u.mask)) - v).cwiseAbs().maxCoeff() == 0.0;
        check("pack_unpack_round_trip", ok);
    }

    // retarget round trip under a self-consistent configuration
    {
        RetargetConfig rt = cfg.retarget;
        rt.r_h = transform_inverse(rt.r_m);
        rt.fingers.grasp_closed = rt.fingers.grasp_open;
        rt.thumb_offset = -rt.fingers.finger_direction(0, Side::right) * rt.fingers.base_length[0] *
                          rt.fingers.grasp_open;
        std::vector<EefState> eef(8, rt.initial_eef);
        for (int t = 0; t < 8; ++t) {
            eef[static_cast<size_t>(t)].left.position += Vec3(0.01 * t, 0, 0.005 * t);
            eef[static_cast<size_t>(t)].right.position += Vec3(0, -0.01 * t, 0.005 * t);
        }
        auto hands = robot_to_human(eef, {}, rt);
        RetargetConfig back = rt;
        back.initial_eef = eef.front();
        auto eef2 = human_to_robot_eef(hands, back);
        double worst = 0.0;
        for (size_t t = 0; t < eef.size(); ++t) {
            worst = std::max(worst, (eef2[t].left.position - eef[t].left.position).norm());
            worst = std::max(worst, (eef2[t].right.position - eef[t].right.position).norm());
        }
        check("retarget_round_trip", worst < 1e-6, "max position error " + fmt(worst));
    }

    // loss identity on the configured model
    {
        PolicyParams p = init_policy(cfg.model, cfg.seed);
        Rng rng(mix_seed(cfg.seed, 3));
        NormStats stats;
        std::vector<FlowSample> batch;
        for (int i = 0; i < 6; ++i) {
            TrainingSample s;
            s.source = i % 2 ? Embodiment::human : Embodiment::robot;
            s.instruction_id = 0;
            s.scene = Eigen::VectorXd::Zero(cfg.model.scene_dim);
            s.target.rows.setRandom(cfg.model.horizon, kUnifiedDims);
            s.target.mask = i % 2 ? mask_human() : mask_robot_native();
            s.target.padded.assign(static_cast<size_t>(cfg.model.horizon), 0);
            batch.push_back(make_flow_sample(s, stats, rng));
        }
        BatchEvalOptions no_grads;
        no_grads.want_grads = false;
        BatchEval eval = mutual_imitation_loss(p, batch, no_grads);
        check("loss_additivity", eval.loss.total == eval.loss.l_r2h + eval.loss.l_h2r);
    }

    // analytic gradient against finite differences, with optional injection
    {
        ModelConfig small = cfg.model;
        small.hidden_width = std::min(small.hidden_width, 32);
        small.condition_dim = std::min(small.condition_dim, 16);
        small.cond_hidden = std::min(small.cond_hidden, 16);
        small.horizon = std::min(small.horizon, 4);
        PolicyParams p = init_policy(small, cfg.seed);
        Rng rng(mix_seed(cfg.seed, 4));
        NormStats stats;
        std::vector<FlowSample> batch;
        for (int i = 0; i < 4; ++i) {
            TrainingSample s;
            s.source = i % 2 ? Embodiment::human : Embodiment::robot;
            s.scene = Eigen::VectorXd::Zero(small.scene_dim);
            s.target.rows.setRandom(small.horizon, kUnifiedDims);
            s.target.mask = mask_all();
            s.target.padded.assign(static_cast<size_t>(small.horizon), 0);
            batch.push_back(make_flow_sample(s, stats, rng));
        }
        BatchEval eval = mutual_imitation_loss(p, batch);
        bool injected_found = true;
        if (!broken_tensor.empty()) {
            injected_found = false;
            for_each_tensor(eval.grads, [&](const std::string& name, Eigen::MatrixXd& m) {
                if (name == broken_tensor) {
                    m.array() += 0.05;
                    injected_found = true;
                }
            });
        }
        if (!injected_found) {
            check("gradient_check", false, "no tensor named " + broken_tensor);
        } else {
            std::string failing;
            double worst = 0.0;
            std::vector<std::pair<std::string, Eigen::MatrixXd*>> values, grads;
            for_each_tensor(p,
                            [&](const std::string& n, Eigen::MatrixXd& m) { values.emplace_back(n, &m); });
            for_each_tensor(eval.grads,
                            [&](const std::string& n, Eigen::MatrixXd& m) { grads.emplace_back(n, &m); });
            BatchEvalOptions no_grads;
            no_grads.want_grads = false;
            for (size_t ti = 0; ti < values.size(); ++ti) {
                Eigen::MatrixXd& tensor = *values[ti].second;
                for (int probe = 0; probe < 3 && probe < tensor.size(); ++probe) {
                    int64_t idx =
                        static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(tensor.size())));
                    double* v = tensor.data() + idx;
                    double saved = *v;
                    *v = saved + 1e-6;
                    double up = mutual_imitation_loss(p, batch, no_grads).loss.total;
                    *v = saved - 1e-6;
                    double down = mutual_imitation_loss(p, batch, no_grads).loss.total;
                    *v = saved;
                    double numeric = (up - down) / 2e-6;
                    double analytic = *(grads[ti].second->data() + idx);
                    if (std::abs(analytic - numeric) < 1e-9) continue;
                    double rel = std::abs(analytic - numeric) /
                                 std::max(1e-12, std::abs(analytic) + std::abs(numeric));
                    if (rel > worst) {
                        worst = rel;
                        if (rel >= 1e-4) failing = values[ti].first;
                    }
                }
            }
            check("gradient_check", failing.empty(),
                  "tensor " + failing + " relative error " + fmt(worst));
        }
    }

    // sampler determinism
    {
        PolicyParams p = init_policy(cfg.model, cfg.seed);
        NormStats stats;
        Observation obs;
        obs.scene = Eigen::VectorXd::Zero(cfg.model.scene_dim);
        ActionChunk a = sample_actions(p, stats, obs, 4, 5);
        ActionChunk b = sample_actions(p, stats, obs, 4, 5);
        check("sampler_determinism", (a.rows - b.rows).cwiseAbs().maxCoeff() == 0.0);
    }

    std::cout << (failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
    return failures == 0 ? 0 : 4;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-embodiment retargeting and flow-matching policy toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "experiment configuration (JSON)")->required();
    app.add_option("--set", overrides, "sparse overrides, section.key=value");

    auto* retarget = app.add_subcommand("retarget", "convert demos between action spaces");
    std::string rt_input, rt_output, rt_direction = "r2h", rt_report;
    retarget->add_option("--input", rt_input, "input dataset file")->required();
    retarget->add_option("--output", rt_output, "output dataset file")->required();
    retarget->add_option("--direction", rt_direction, "h2r or r2h")->required();
    retarget->add_option("--report", rt_report, "per-step report CSV");

    auto* build = app.add_subcommand("build-dataset", "generate and augment synthetic demos");

    auto* stats = app.add_subcommand("stats", "compute normalization statistics");
    std::string stats_dataset, stats_output;
    stats->add_option("--dataset", stats_dataset, "dataset file (default: paths.dataset)");
    stats->add_option("--output", stats_output, "stats file (default: paths.stats)");

    auto* train_cmd = app.add_subcommand("train", "train the policy");
    std::string resume_path;
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* eval_cmd = app.add_subcommand("eval", "closed-loop evaluation");
    std::string eval_checkpoint, eval_policy = "model", eval_output;
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint (default: paths.checkpoint)");
    eval_cmd->add_option("--policy", eval_policy, "model or oracle");
    eval_cmd->add_option("--output", eval_output, "report CSV (default: paths.eval_report)");

    auto* sample = app.add_subcommand("sample", "sample one action chunk");
    std::string sample_checkpoint, sample_output;
    int sample_demo = 0, sample_step = 0;
    sample->add_option("--checkpoint", sample_checkpoint, "checkpoint (default: paths.checkpoint)");
    sample->add_option("--demo", sample_demo, "demo index in the dataset");
    sample->add_option("--step", sample_step, "step index within the demo");
    sample->add_option("--output", sample_output, "chunk CSV (default: stdout)");

    auto* selftest = app.add_subcommand("selftest", "run built-in consistency checks");
    std::string broken_tensor;
    selftest->add_option("--inject-broken-gradient", broken_tensor,
                         "perturb the named tensor's analytic gradient (test hook)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig cfg = load_experiment_config(config_path, overrides);
        if (retarget->parsed())
            return cmd_retarget(cfg, rt_input, rt_output, rt_direction, rt_report);
        if (build->parsed()) return cmd_build_dataset(cfg);
        if (stats->parsed()) return cmd_stats(cfg, stats_dataset, stats_output);
        if (train_cmd->parsed()) return cmd_train(cfg, resume_path);
        if (eval_cmd->parsed()) return cmd_eval(cfg, eval_checkpoint, eval_policy, eval_output);
        if (sample->parsed())
            return cmd_sample(cfg, sample_checkpoint, sample_demo, sample_step, sample_output);
        if (selftest->parsed()) return cmd_selftest(cfg, broken_tensor);
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
