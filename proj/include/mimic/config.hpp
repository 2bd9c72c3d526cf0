#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimic/dataset.hpp"
#include "mimic/retarget.hpp"
#include "mimic/rollout.hpp"
#include "mimic/training.hpp"

namespace mimic {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Experiment configuration: one JSON document with a section per module.
// Every field has a usable default except the output paths, which are
// validated by the commands that need them.
// ---------------------------------------------------------------------------
struct ExperimentPaths {
    std::string dataset;
    std::string manifest;
    std::string checkpoint;
    std::string metrics;
    std::string stats;
    std::string eval_report;
    std::string retarget_output;
    std::string retarget_report;
};

struct DatasetConfig {
    int demos_per_embodiment = 200;
    int horizon = 16;
    int stride = 1;
    double holdout_fraction = 0.1;
    bool augment = true;
};

struct ExperimentConfig {
    uint64_t seed = 1;
    ExperimentPaths paths;
    RetargetConfig retarget;
    ReachTaskConfig task;
    DatasetConfig dataset;
    ModelConfig model;
    OptimizerConfig optimizer;
    EvalConfig eval;
};

namespace detail {

inline const json* maybe_field(const json& root, const std::string& dotted) {
    const json* cur = &root;
    size_t start = 0;
    while (start <= dotted.size()) {
        size_t dot = dotted.find('.', start);
        std::string key = dotted.substr(start, dot == std::string::npos ? dot : dot - start);
        if (!cur->is_object() || !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        if (dot == std::string::npos) return cur;
        start = dot + 1;
    }
    return nullptr;
}

template <typename T>
T field_or(const json& root, const std::string& dotted, T fallback) {
    const json* f = maybe_field(root, dotted);
    if (!f) return fallback;
    try {
        return f->get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config field has the wrong type: " + dotted);
    }
}

template <typename T>
T required_field(const json& root, const std::string& dotted) {
    const json* f = maybe_field(root, dotted);
    if (!f) throw ConfigError("missing required config field: " + dotted);
    try {
        return f->get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config field has the wrong type: " + dotted);
    }
}

inline Vec3 vec3_of(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3)
        throw ConfigError("expected a 3-element array at " + where);
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline Pose pose_of(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 7)
        throw ConfigError("expected a 7-element pose [px py pz qw qx qy qz] at " + where);
    Pose p;
    p.position = Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
    p.orientation = quat_normalize(
        Quaternion{j[3].get<double>(), j[4].get<double>(), j[5].get<double>(), j[6].get<double>()});
    return p;
}

inline FrameTransform transform_of(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 12)
        throw ConfigError("expected a 12-element row-major transform at " + where);
    std::array<double, 12> a{};
    for (size_t i = 0; i < 12; ++i) a[i] = j[i].get<double>();
    bool orthogonal = true;
    FrameTransform t;
    try {
        t = transform_from_array(a, orthogonal);
    } catch (const NumericError&) {
        t = transform_from_array(a, false);
    }
    return t;
}

inline JointVector joints_of(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 6)
        throw ConfigError("expected a 6-element joint vector at " + where);
    JointVector q;
    for (int i = 0; i < 6; ++i) q[i] = j[static_cast<size_t>(i)].get<double>();
    return q;
}

inline KinematicChain chain_of(const json& spec, const std::string& where);

inline KinematicChain chain_from_document(const json& doc, const std::string& where) {
    KinematicChain chain;
    if (doc.contains("base")) chain.base_frame = pose_of(doc["base"], where + ".base");
    if (doc.contains("tool")) chain.tool_offset = pose_of(doc["tool"], where + ".tool");
    if (!doc.contains("joints") || !doc["joints"].is_array() || doc["joints"].size() != 6)
        throw ConfigError("chain documents need exactly 6 joints at " + where);
    for (size_t i = 0; i < 6; ++i) {
        const json& jj = doc["joints"][i];
        JointSpec& spec = chain.joints[i];
        spec.axis = vec3_of(jj.at("axis"), where + ".joints.axis").normalized();
        if (jj.contains("offset")) spec.origin_offset = pose_of(jj["offset"], where + ".joints.offset");
        if (jj.contains("limits")) {
            spec.min_limit = jj["limits"][0].get<double>();
            spec.max_limit = jj["limits"][1].get<double>();
        }
    }
    validate(chain);
    return chain;
}

// A chain is a preset name, an inline document, or a path to a JSON document.
inline KinematicChain chain_of(const json& spec, const std::string& where) {
    if (spec.is_string()) {
        std::string name = spec.get<std::string>();
        if (name == "arm_a" || name == "arm_b") return preset_chain(name);
        std::ifstream is(name);
        if (!is) throw ConfigError("chain is neither a preset nor a readable file: " + name);
        json doc;
        try {
            is >> doc;
        } catch (const json::exception& e) {
            throw ConfigError("chain file " + name + " is not valid JSON: " + e.what());
        }
        return chain_from_document(doc, name);
    }
    if (spec.is_object()) return chain_from_document(spec, where);
    throw ConfigError("chain spec must be a preset name, file path, or object at " + where);
}

} // namespace detail

inline ExperimentConfig parse_experiment_config(const json& root) {
    using detail::field_or;
    ExperimentConfig cfg;

    cfg.seed = detail::required_field<uint64_t>(root, "seed");
    if (const char* env = std::getenv("MIMIC_SEED")) cfg.seed = std::strtoull(env, nullptr, 10);

    cfg.paths.dataset = field_or<std::string>(root, "paths.dataset", "");
    cfg.paths.manifest = field_or<std::string>(root, "paths.manifest", "");
    cfg.paths.checkpoint = field_or<std::string>(root, "paths.checkpoint", "");
    cfg.paths.metrics = field_or<std::string>(root, "paths.metrics", "");
    cfg.paths.stats = field_or<std::string>(root, "paths.stats", "");
    cfg.paths.eval_report = field_or<std::string>(root, "paths.eval_report", "");
    cfg.paths.retarget_output = field_or<std::string>(root, "paths.retarget_output", "");
    cfg.paths.retarget_report = field_or<std::string>(root, "paths.retarget_report", "");

    // chains
    RetargetConfig& rt = cfg.retarget;
    if (const json* j = detail::maybe_field(root, "chains.left"))
        rt.left_chain = detail::chain_of(*j, "chains.left");
    else
        rt.left_chain = preset_chain("arm_a");
    if (const json* j = detail::maybe_field(root, "chains.right"))
        rt.right_chain = detail::chain_of(*j, "chains.right");
    else
        rt.right_chain = preset_chain("arm_a");
    if (const json* j = detail::maybe_field(root, "chains.left_base"))
        rt.left_chain.base_frame = detail::pose_of(*j, "chains.left_base");
    else
        rt.left_chain.base_frame.position = Vec3(0, 0.18, 0);
    if (const json* j = detail::maybe_field(root, "chains.right_base"))
        rt.right_chain.base_frame = detail::pose_of(*j, "chains.right_base");
    else
        rt.right_chain.base_frame.position = Vec3(0, -0.18, 0);

    // task
    ReachTaskConfig& task = cfg.task;
    task.trajectory_steps = field_or<int>(root, "task.trajectory_steps", 40);
    task.instruction_id = field_or<uint32_t>(root, "task.instruction_id", 0);
    JointVector home;
    home << 0.0, 0.9, -1.2, 0.0, 0.8, 0.0;
    if (const json* j = detail::maybe_field(root, "task.home")) home = detail::joints_of(*j, "task.home");
    task.home_left = home;
    task.home_right = home;
    if (const json* j = detail::maybe_field(root, "task.home_left"))
        task.home_left = detail::joints_of(*j, "task.home_left");
    if (const json* j = detail::maybe_field(root, "task.home_right"))
        task.home_right = detail::joints_of(*j, "task.home_right");
    if (const json* j = detail::maybe_field(root, "task.target_min_left"))
        task.target_min_left = detail::vec3_of(*j, "task.target_min_left");
    if (const json* j = detail::maybe_field(root, "task.target_max_left"))
        task.target_max_left = detail::vec3_of(*j, "task.target_max_left");
    if (const json* j = detail::maybe_field(root, "task.target_min_right"))
        task.target_min_right = detail::vec3_of(*j, "task.target_min_right");
    if (const json* j = detail::maybe_field(root, "task.target_max_right"))
        task.target_max_right = detail::vec3_of(*j, "task.target_max_right");
    task.gripper_close_start = field_or<double>(root, "task.gripper_close_start", 0.6);
    task.gripper_close_end = field_or<double>(root, "task.gripper_close_end", 0.9);
    task.success_tolerance = field_or<double>(root, "task.success_tolerance", 0.03);

    // retarget
    if (const json* j = detail::maybe_field(root, "retarget.r_h"))
        rt.r_h = detail::transform_of(*j, "retarget.r_h");
    if (const json* j = detail::maybe_field(root, "retarget.r_m"))
        rt.r_m = detail::transform_of(*j, "retarget.r_m");
    if (field_or<bool>(root, "retarget.r_h_is_inverse_of_r_m", false))
        rt.r_h = transform_inverse(rt.r_m);
    if (const json* j = detail::maybe_field(root, "retarget.thumb_offset"))
        rt.thumb_offset = detail::vec3_of(*j, "retarget.thumb_offset");
    FingerParams& fingers = rt.fingers;
    if (const json* j = detail::maybe_field(root, "retarget.finger.base_lengths")) {
        if (!j->is_array() || j->size() != 5)
            throw ConfigError("retarget.finger.base_lengths needs 5 entries");
        for (size_t i = 0; i < 5; ++i) fingers.base_length[i] = (*j)[i].get<double>();
    }
    fingers.grasp_closed = field_or<double>(root, "retarget.finger.grasp_closed", fingers.grasp_closed);
    fingers.grasp_open = field_or<double>(root, "retarget.finger.grasp_open", fingers.grasp_open);
    fingers.other_closed = field_or<double>(root, "retarget.finger.other_closed", fingers.other_closed);
    fingers.other_open = field_or<double>(root, "retarget.finger.other_open", fingers.other_open);
    fingers.mirror_axis = field_or<int>(root, "retarget.finger.mirror_axis", fingers.mirror_axis);
    if (const json* j = detail::maybe_field(root, "retarget.finger.wrist_offset"))
        fingers.wrist_offset = detail::vec3_of(*j, "retarget.finger.wrist_offset");
    if (field_or<bool>(root, "retarget.thumb_offset_matches_fingers", false))
        rt.thumb_offset = -fingers.finger_direction(0, Side::right) * fingers.base_length[0] *
                          fingers.grasp_open;
    if (const json* j = detail::maybe_field(root, "retarget.gripper_calibration")) {
        if (j->is_string() && j->get<std::string>() == "from_fingers") {
            auto cal = gripper_calibration_from_fingers(fingers);
            rt.gripper_min_dist = cal.first;
            rt.gripper_max_dist = cal.second;
        } else if (j->is_array() && j->size() == 2) {
            rt.gripper_min_dist = (*j)[0].get<double>();
            rt.gripper_max_dist = (*j)[1].get<double>();
        } else {
            throw ConfigError("retarget.gripper_calibration must be [min,max] or \"from_fingers\"");
        }
    } else {
        auto cal = gripper_calibration_from_fingers(fingers);
        rt.gripper_min_dist = cal.first;
        rt.gripper_max_dist = cal.second;
    }
    rt.ik.pos_tol = field_or<double>(root, "retarget.ik.pos_tol", rt.ik.pos_tol);
    rt.ik.rot_tol = field_or<double>(root, "retarget.ik.rot_tol", rt.ik.rot_tol);
    rt.ik.lambda = field_or<double>(root, "retarget.ik.lambda", rt.ik.lambda);
    rt.ik.max_iterations = field_or<int>(root, "retarget.ik.max_iterations", rt.ik.max_iterations);
    rt.ik_seed_left = task.home_left;
    rt.ik_seed_right = task.home_right;
    // initial EEF defaults to the home pose so synthetic demos and the
    // human->robot map agree on step 0
    rt.initial_eef.left = forward_kinematics(rt.left_chain, task.home_left);
    rt.initial_eef.right = forward_kinematics(rt.right_chain, task.home_right);
    if (const json* j = detail::maybe_field(root, "retarget.initial_eef_left"))
        rt.initial_eef.left = detail::pose_of(*j, "retarget.initial_eef_left");
    if (const json* j = detail::maybe_field(root, "retarget.initial_eef_right"))
        rt.initial_eef.right = detail::pose_of(*j, "retarget.initial_eef_right");
    validate(rt);

    // dataset
    cfg.dataset.demos_per_embodiment = field_or<int>(root, "dataset.demos_per_embodiment", 200);
    cfg.dataset.horizon = field_or<int>(root, "dataset.horizon", 16);
    cfg.dataset.stride = field_or<int>(root, "dataset.stride", 1);
    cfg.dataset.holdout_fraction = field_or<double>(root, "dataset.holdout_fraction", 0.1);
    cfg.dataset.augment = field_or<bool>(root, "dataset.augment", true);
    if (cfg.dataset.horizon < 1) throw ConfigError("dataset.horizon must be >= 1");

    // model
    ModelConfig& m = cfg.model;
    m.scene_dim = scene_dim(task);
    m.horizon = cfg.dataset.horizon;
    m.vocab = field_or<int>(root, "model.vocab", 4);
    m.condition_dim = field_or<int>(root, "model.condition_dim", 64);
    m.cond_hidden = field_or<int>(root, "model.cond_hidden", 64);
    m.cond_layers = field_or<int>(root, "model.cond_layers", 2);
    m.hidden_width = field_or<int>(root, "model.hidden_width", 128);
    m.hidden_depth = field_or<int>(root, "model.hidden_depth", 2);
    m.mode = mode_from_string(field_or<std::string>(root, "model.mode", "flow"));
    m.sample_steps = field_or<int>(root, "model.sample_steps", 8);

    // optimizer
    OptimizerConfig& opt = cfg.optimizer;
    opt.learning_rate = field_or<double>(root, "optimizer.learning_rate", 1e-4);
    opt.weight_decay = field_or<double>(root, "optimizer.weight_decay", 0.01);
    opt.beta1 = field_or<double>(root, "optimizer.beta1", 0.9);
    opt.beta2 = field_or<double>(root, "optimizer.beta2", 0.999);
    opt.eps = field_or<double>(root, "optimizer.eps", 1e-8);
    opt.warmup_fraction = field_or<double>(root, "optimizer.warmup_fraction", 0.02);
    opt.steps = field_or<int>(root, "optimizer.steps", 5000);
    opt.batch_size = field_or<int>(root, "optimizer.batch_size", 32);
    opt.disable_r2h = field_or<bool>(root, "optimizer.disable_r2h", false);
    opt.disable_h2r = field_or<bool>(root, "optimizer.disable_h2r", false);
    opt.seed = cfg.seed;

    // eval
    cfg.eval.rollouts = field_or<int>(root, "eval.rollouts", 50);
    cfg.eval.execute_rows = field_or<int>(root, "eval.execute_rows", std::max(1, m.horizon / 4));
    cfg.eval.max_control_steps = field_or<int>(root, "eval.max_control_steps", 80);
    cfg.eval.sample_steps = field_or<int>(root, "eval.sample_steps", m.sample_steps);
    cfg.eval.seed = mix_seed(cfg.seed, 0x6576616cULL);

    return cfg;
}

// Sparse overrides: "section.key=value", value parsed as JSON when possible,
// else taken as a string.
inline void apply_override(json& root, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like section.key=value: " + assignment);
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value; // plain string
    }
    json* cur = &root;
    size_t start = 0;
    while (true) {
        size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) throw ConfigError("override path has an empty segment: " + assignment);
        if (dot == std::string::npos) {
            (*cur)[key] = parsed;
            return;
        }
        if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = json::object();
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

inline ExperimentConfig load_experiment_config(const std::string& path,
                                               const std::vector<std::string>& overrides = {}) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    json root;
    try {
        is >> root;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    for (const auto& o : overrides) apply_override(root, o);
    return parse_experiment_config(root);
}

} // namespace mimic
