#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mimic/action_space.hpp"
#include "mimic/parallel.hpp"
#include "mimic/retarget.hpp"
#include "mimic/rng.hpp"

namespace mimic {

enum class Embodiment : uint8_t { robot = 0, human = 1 };

inline const char* to_string(Embodiment e) { return e == Embodiment::robot ? "robot" : "human"; }

struct DemoStep {
    Eigen::VectorXd scene;   // low-dimensional scene vector (object/goal poses)
    UnifiedAction proprio;   // state at this step, native dims masked in
    UnifiedAction label;     // action to take at this step
};

struct Demonstration {
    uint32_t id = 0;
    Embodiment embodiment = Embodiment::robot;
    uint32_t instruction_id = 0;
    bool augmented = false;
    std::vector<DemoStep> steps;
};

// Observation + H-row target chunk, the unit of training.
struct TrainingSample {
    uint32_t demo_id = 0;
    Embodiment source = Embodiment::robot;
    uint32_t instruction_id = 0;
    Eigen::VectorXd scene;
    ActionVector proprio = ActionVector::Zero();
    DimMask proprio_mask = mask_none();
    ActionChunk target;
};

// ---------------------------------------------------------------------------
// Synthetic reach task: minimum-jerk EEF paths from a home configuration to
// targets sampled per arm, with a scripted gripper close near the end. The
// scene vector is [left target | right target].
// ---------------------------------------------------------------------------
struct ReachTaskConfig {
    int trajectory_steps = 40;
    uint32_t instruction_id = 0;
    JointVector home_left = JointVector::Zero();
    JointVector home_right = JointVector::Zero();
    Vec3 target_min_left{0.15, 0.05, 0.30};
    Vec3 target_max_left{0.35, 0.30, 0.55};
    Vec3 target_min_right{0.15, -0.30, 0.30};
    Vec3 target_max_right{0.35, -0.05, 0.55};
    double gripper_close_start = 0.6; // fraction of the trajectory
    double gripper_close_end = 0.9;
    double success_tolerance = 0.03;  // meters, used by evaluation

    double gripper_at(double tau) const {
        if (tau <= gripper_close_start) return 1.0;
        if (tau >= gripper_close_end) return 0.0;
        return 1.0 - (tau - gripper_close_start) / (gripper_close_end - gripper_close_start);
    }
};

inline double minimum_jerk(double tau) {
    double t3 = tau * tau * tau;
    return 10.0 * t3 - 15.0 * t3 * tau + 6.0 * t3 * tau * tau;
}

inline int scene_dim(const ReachTaskConfig&) { return 6; }

namespace detail {

struct ScriptedPath {
    std::vector<EefState> eef;                        // commanded poses
    std::vector<std::pair<double, double>> grippers;  // left, right
    Vec3 target_left;
    Vec3 target_right;
};

inline ScriptedPath script_reach(const ReachTaskConfig& task, const RetargetConfig& cfg, Rng& rng) {
    ScriptedPath path;
    auto sample_box = [&](const Vec3& lo, const Vec3& hi) {
        return Vec3(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()),
                    rng.uniform(lo.z(), hi.z()));
    };
    path.target_left = sample_box(task.target_min_left, task.target_max_left);
    path.target_right = sample_box(task.target_min_right, task.target_max_right);
    Pose home_l = forward_kinematics(cfg.left_chain, task.home_left);
    Pose home_r = forward_kinematics(cfg.right_chain, task.home_right);
    int n = task.trajectory_steps;
    for (int t = 0; t < n; ++t) {
        double tau = n > 1 ? static_cast<double>(t) / (n - 1) : 1.0;
        double s = minimum_jerk(tau);
        EefState e;
        e.left.position = home_l.position + s * (path.target_left - home_l.position);
        e.left.orientation = home_l.orientation;
        e.right.position = home_r.position + s * (path.target_right - home_r.position);
        e.right.orientation = home_r.orientation;
        path.eef.push_back(e);
        double g = task.gripper_at(tau);
        path.grippers.emplace_back(g, g);
    }
    return path;
}

inline Eigen::VectorXd scene_of(const ScriptedPath& path) {
    Eigen::VectorXd scene(6);
    scene << path.target_left, path.target_right;
    return scene;
}

} // namespace detail

// Deterministic per (seed, index). Robot demonstrations execute the scripted
// path through warm-started IK; human demonstrations drive the synthetic hand
// along the same task through the robot->human map. Throws TaskUnreachable
// when a sampled target cannot be tracked.
inline std::vector<Demonstration> generate_synthetic_demos(const ReachTaskConfig& task,
                                                           const RetargetConfig& cfg,
                                                           Embodiment embodiment, int n,
                                                           uint64_t seed, int threads = 1) {
    std::vector<Demonstration> demos(static_cast<size_t>(std::max(n, 0)));
    if (n <= 0) return demos;

    auto build = [&](int index) {
        Rng rng = substream(mix_seed(seed, static_cast<uint64_t>(embodiment)),
                            static_cast<uint64_t>(index));
        detail::ScriptedPath path = detail::script_reach(task, cfg, rng);
        Eigen::VectorXd scene = detail::scene_of(path);
        int steps = static_cast<int>(path.eef.size());

        Demonstration d;
        d.id = static_cast<uint32_t>(index);
        d.embodiment = embodiment;
        d.instruction_id = task.instruction_id;

        std::vector<UnifiedAction> states(static_cast<size_t>(steps));
        if (embodiment == Embodiment::robot) {
            JointVector seed_l = task.home_left;
            JointVector seed_r = task.home_right;
            for (int t = 0; t < steps; ++t) {
                auto solve_side = [&](const KinematicChain& chain, const Pose& target,
                                      JointVector& warm) {
                    IkSolution sol = solve_ik(chain, target, warm, cfg.ik);
                    if (!sol.converged)
                        throw TaskUnreachable("reach target outside workspace at step " +
                                              std::to_string(t));
                    warm = sol.q;
                    return sol.q;
                };
                UnifiedAction& u = states[static_cast<size_t>(t)];
                u.robot.left_q = solve_side(cfg.left_chain, path.eef[static_cast<size_t>(t)].left, seed_l);
                u.robot.right_q = solve_side(cfg.right_chain, path.eef[static_cast<size_t>(t)].right, seed_r);
                u.robot.left_gripper = path.grippers[static_cast<size_t>(t)].first;
                u.robot.right_gripper = path.grippers[static_cast<size_t>(t)].second;
                u.eef.left = forward_kinematics(cfg.left_chain, u.robot.left_q);
                u.eef.right = forward_kinematics(cfg.right_chain, u.robot.right_q);
                u.mask = mask_robot_native();
            }
        } else {
            auto hands = robot_to_human(path.eef, path.grippers, cfg);
            for (int t = 0; t < steps; ++t) {
                UnifiedAction& u = states[static_cast<size_t>(t)];
                u.human = hands[static_cast<size_t>(t)];
                u.mask = mask_human();
            }
        }

        d.steps.resize(static_cast<size_t>(steps));
        for (int t = 0; t < steps; ++t) {
            DemoStep& s = d.steps[static_cast<size_t>(t)];
            s.scene = scene;
            s.proprio = states[static_cast<size_t>(t)];
            s.label = states[static_cast<size_t>(std::min(t + 1, steps - 1))];
        }
        demos[static_cast<size_t>(index)] = std::move(d);
    };

    parallel_for(n, threads, build);
    return demos;
}

// ---------------------------------------------------------------------------
// Complementary-action augmentation: fill the other embodiment's dims of
// every label through the retarget maps, extending the mask. Native label
// values are never touched. Idempotent. IK failures mask out the failing
// side's joint dims for that step only.
// ---------------------------------------------------------------------------
inline Demonstration augment_complementary(const Demonstration& d, const RetargetConfig& cfg) {
    if (d.augmented || d.steps.empty()) return d;
    Demonstration out = d;
    out.augmented = true;
    size_t n = d.steps.size();

    if (d.embodiment == Embodiment::robot) {
        std::vector<EefState> eef;
        std::vector<std::pair<double, double>> grips;
        eef.reserve(n);
        grips.reserve(n);
        for (const auto& s : d.steps) {
            eef.push_back(s.label.eef);
            grips.emplace_back(s.label.robot.left_gripper, s.label.robot.right_gripper);
        }
        auto hands = robot_to_human(eef, grips, cfg);
        for (size_t t = 0; t < n; ++t) {
            out.steps[t].label.human = hands[t];
            out.steps[t].label.mask = mask_or(d.steps[t].label.mask, mask_human());
        }
    } else {
        std::vector<HumanHandState> hands;
        hands.reserve(n);
        for (const auto& s : d.steps) hands.push_back(s.label.human);
        auto eef = human_to_robot_eef(hands, cfg);
        RetargetReport report;
        auto joints = human_to_robot_joints(eef, hands, cfg, &report);

        std::vector<bool> left_ok(n, true), right_ok(n, true);
        for (const auto& rec : report.steps) {
            if (!rec.converged) {
                if (rec.side == Side::left)
                    left_ok[static_cast<size_t>(rec.step)] = false;
                else
                    right_ok[static_cast<size_t>(rec.step)] = false;
            }
        }
        for (size_t t = 0; t < n; ++t) {
            UnifiedAction& label = out.steps[t].label;
            label.eef = eef[t];
            label.robot = joints[t];
            DimMask add = mask_robot_native();
            if (!left_ok[t])
                for (int i = 0; i < 7; ++i) add[static_cast<size_t>(kRobotOffset + i)] = false;
            if (!right_ok[t])
                for (int i = 0; i < 7; ++i) add[static_cast<size_t>(kRobotOffset + 7 + i)] = false;
            label.mask = mask_or(d.steps[t].label.mask, add);
        }
    }
    return out;
}

// One sample per start index in {0, stride, 2 stride, ...}; rows past the end
// repeat the final step with the pad flag set. The chunk mask is the
// intersection of the row masks, i.e. native dims plus the dims successfully
// retargeted over the whole window.
inline std::vector<TrainingSample> chunk_samples(const Demonstration& d, int horizon, int stride) {
    if (horizon < 1 || stride < 1) throw ConfigError("chunking requires horizon >= 1, stride >= 1");
    std::vector<TrainingSample> out;
    int len = static_cast<int>(d.steps.size());
    for (int t = 0; t < len; t += stride) {
        TrainingSample s;
        s.demo_id = d.id;
        s.source = d.embodiment;
        s.instruction_id = d.instruction_id;
        s.scene = d.steps[static_cast<size_t>(t)].scene;
        s.proprio = pack(d.steps[static_cast<size_t>(t)].proprio);
        s.proprio_mask = d.steps[static_cast<size_t>(t)].proprio.mask;
        s.target.rows.resize(horizon, kUnifiedDims);
        s.target.padded.resize(static_cast<size_t>(horizon));
        s.target.mask = mask_all();
        for (int r = 0; r < horizon; ++r) {
            int idx = std::min(t + r, len - 1);
            const UnifiedAction& label = d.steps[static_cast<size_t>(idx)].label;
            s.target.rows.row(r) = pack(label).transpose();
            s.target.padded[static_cast<size_t>(r)] = t + r > len - 1 ? 1 : 0;
            s.target.mask = mask_and(s.target.mask, label.mask);
        }
        out.push_back(std::move(s));
    }
    return out;
}

// Per-dimension moments over every labeled step; masked dims are excluded,
// population standard deviation, std floored at 1e-6, unlabeled dims (0, 1).
inline NormStats compute_norm_stats(const std::vector<Demonstration>& demos) {
    ActionVector sum = ActionVector::Zero();
    ActionVector sumsq = ActionVector::Zero();
    Eigen::Matrix<int64_t, kUnifiedDims, 1> count = Eigen::Matrix<int64_t, kUnifiedDims, 1>::Zero();
    for (const auto& d : demos) {
        for (const auto& s : d.steps) {
            ActionVector v = pack(s.label);
            for (int i = 0; i < kUnifiedDims; ++i) {
                if (!s.label.mask[static_cast<size_t>(i)]) continue;
                sum[i] += v[i];
                sumsq[i] += v[i] * v[i];
                ++count[i];
            }
        }
    }
    NormStats stats;
    for (int i = 0; i < kUnifiedDims; ++i) {
        if (count[i] == 0) {
            stats.mean[i] = 0.0;
            stats.std[i] = 1.0;
            continue;
        }
        double m = sum[i] / static_cast<double>(count[i]);
        double var = sumsq[i] / static_cast<double>(count[i]) - m * m;
        stats.mean[i] = m;
        stats.std[i] = var > 0.0 ? std::sqrt(var) : 0.0;
    }
    stats.floor_std();
    return stats;
}

// ---------------------------------------------------------------------------
// On-disk format: text header, then a fixed little-endian binary record
// stream. The 76-vectors are stored bit-exactly (this is the determinism
// contract the tests rely on).
// ---------------------------------------------------------------------------
struct DatasetMeta {
    int version = 1;
    int horizon = 16;
    int scene_dim = 6;
    int action_dim = kUnifiedDims;
    std::vector<uint32_t> instruction_ids;
};

namespace detail {

template <typename T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw TruncatedFile("dataset record stream ended early");
    return v;
}

inline void write_doubles(std::ostream& os, const double* p, size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_doubles(std::istream& is, double* p, size_t n) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw TruncatedFile("dataset record stream ended early");
}

inline void write_mask(std::ostream& os, const DimMask& m) {
    for (bool b : m) write_raw<uint8_t>(os, b ? 1 : 0);
}

inline DimMask read_mask(std::istream& is) {
    DimMask m{};
    for (auto& b : m) b = read_raw<uint8_t>(is) != 0;
    return m;
}

inline void write_action(std::ostream& os, const UnifiedAction& u) {
    ActionVector v = pack(u);
    write_doubles(os, v.data(), kUnifiedDims);
    write_mask(os, u.mask);
}

inline UnifiedAction read_action(std::istream& is) {
    ActionVector v;
    read_doubles(is, v.data(), kUnifiedDims);
    DimMask m = read_mask(is);
    return unpack(v, m);
}

} // namespace detail

inline void write_dataset(const std::vector<Demonstration>& demos, const DatasetMeta& meta,
                          const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open dataset file for writing: " + path);
    os << "MIMICDS " << meta.version << "\n";
    os << "horizon " << meta.horizon << "\n";
    os << "scene_dim " << meta.scene_dim << "\n";
    os << "action_dim " << meta.action_dim << "\n";
    os << "instruction_ids";
    for (uint32_t id : meta.instruction_ids) os << " " << id;
    os << "\n";
    os << "demos " << demos.size() << "\n";
    os << "end_header\n";
    for (const auto& d : demos) {
        detail::write_raw<uint32_t>(os, d.id);
        detail::write_raw<uint8_t>(os, static_cast<uint8_t>(d.embodiment));
        detail::write_raw<uint32_t>(os, d.instruction_id);
        detail::write_raw<uint8_t>(os, d.augmented ? 1 : 0);
        detail::write_raw<uint32_t>(os, static_cast<uint32_t>(d.steps.size()));
        for (const auto& s : d.steps) {
            detail::write_doubles(os, s.scene.data(), static_cast<size_t>(s.scene.size()));
            detail::write_action(os, s.proprio);
            detail::write_action(os, s.label);
        }
    }
    if (!os) throw IoError("failed while writing dataset: " + path);
}

inline std::vector<Demonstration> read_dataset(const std::string& path, DatasetMeta* meta_out = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open dataset file: " + path);

    DatasetMeta meta;
    size_t n_demos = 0;
    std::string line;
    bool saw_end = false;
    bool first = true;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (first) {
            int version = -1;
            ls >> version;
            if (key != "MIMICDS" || version < 1)
                throw BadMagic("not a dataset file: " + path);
            if (version > 1)
                throw VersionMismatch("dataset version " + std::to_string(version) +
                                      " is newer than supported version 1");
            meta.version = version;
            first = false;
            continue;
        }
        if (key == "end_header") {
            saw_end = true;
            break;
        }
        if (key == "horizon") ls >> meta.horizon;
        else if (key == "scene_dim") ls >> meta.scene_dim;
        else if (key == "action_dim") ls >> meta.action_dim;
        else if (key == "demos") ls >> n_demos;
        else if (key == "instruction_ids") {
            uint32_t id;
            while (ls >> id) meta.instruction_ids.push_back(id);
        }
    }
    if (first || !saw_end) throw BadMagic("dataset header is missing or corrupt: " + path);
    if (meta.action_dim != kUnifiedDims)
        throw VersionMismatch("dataset action_dim " + std::to_string(meta.action_dim) +
                              " does not match " + std::to_string(kUnifiedDims));

    std::vector<Demonstration> demos;
    demos.reserve(n_demos);
    for (size_t i = 0; i < n_demos; ++i) {
        Demonstration d;
        d.id = detail::read_raw<uint32_t>(is);
        d.embodiment = static_cast<Embodiment>(detail::read_raw<uint8_t>(is));
        d.instruction_id = detail::read_raw<uint32_t>(is);
        d.augmented = detail::read_raw<uint8_t>(is) != 0;
        uint32_t steps = detail::read_raw<uint32_t>(is);
        d.steps.resize(steps);
        for (auto& s : d.steps) {
            s.scene.resize(meta.scene_dim);
            detail::read_doubles(is, s.scene.data(), static_cast<size_t>(meta.scene_dim));
            s.proprio = detail::read_action(is);
            s.label = detail::read_action(is);
        }
        demos.push_back(std::move(d));
    }
    if (meta_out) *meta_out = meta;
    return demos;
}

inline void write_manifest(const std::vector<Demonstration>& demos, const DatasetMeta& meta,
                           const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open manifest for writing: " + path);
    os << "# demo_id embodiment instruction_id steps\n";
    size_t total = 0;
    for (const auto& d : demos) {
        os << d.id << " " << to_string(d.embodiment) << " " << d.instruction_id << " "
           << d.steps.size() << "\n";
        total += d.steps.size();
    }
    os << "# demos " << demos.size() << " total_steps " << total << " horizon " << meta.horizon
       << "\n";
}

} // namespace mimic
