#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "mimic/policy.hpp"

namespace mimic {

// AdamW with decoupled weight decay (decay scaled by the step learning rate)
// and a constant schedule after a linear warmup over the first
// warmup_fraction of the run.
struct OptimizerConfig {
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double warmup_fraction = 0.02;
    int steps = 5000;
    int batch_size = 32;
    uint64_t seed = 0;
    bool disable_r2h = false;
    bool disable_h2r = false;
};

struct AdamState {
    PolicyParams m;
    PolicyParams v;
    int step = 0; // completed optimizer steps
};

inline AdamState make_adam_state(const PolicyParams& params) {
    return AdamState{zeros_like(params), zeros_like(params), 0};
}

inline double learning_rate_at(const OptimizerConfig& opt, int step) {
    int warmup = static_cast<int>(std::ceil(opt.warmup_fraction * opt.steps));
    if (warmup > 0 && step < warmup)
        return opt.learning_rate * static_cast<double>(step + 1) / warmup;
    return opt.learning_rate;
}

struct TrainMetricsRow {
    int step = 0;
    double l_r2h = 0.0;
    double l_h2r = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
};

inline void write_metrics_csv(const std::vector<TrainMetricsRow>& rows, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open metrics file for writing: " + path);
    os << "step,l_r2h,l_h2r,total,grad_norm,lr\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.l_r2h,
                      r.l_h2r, r.total, r.grad_norm, r.lr);
        os << buf;
    }
}

namespace detail {

inline void adamw_update(PolicyParams& params, const PolicyParams& grads, AdamState& state,
                         const OptimizerConfig& opt, double lr) {
    int t = state.step + 1;
    double bc1 = 1.0 - std::pow(opt.beta1, t);
    double bc2 = 1.0 - std::pow(opt.beta2, t);

    std::vector<Eigen::MatrixXd*> pv, gv, mv, vv;
    for_each_tensor(params, [&](const std::string&, Eigen::MatrixXd& m) { pv.push_back(&m); });
    for_each_tensor(const_cast<PolicyParams&>(grads),
                    [&](const std::string&, Eigen::MatrixXd& m) { gv.push_back(&m); });
    for_each_tensor(state.m, [&](const std::string&, Eigen::MatrixXd& m) { mv.push_back(&m); });
    for_each_tensor(state.v, [&](const std::string&, Eigen::MatrixXd& m) { vv.push_back(&m); });

    for (size_t i = 0; i < pv.size(); ++i) {
        auto& p = *pv[i];
        const auto& g = *gv[i];
        auto& m = *mv[i];
        auto& v = *vv[i];
        m = opt.beta1 * m + (1.0 - opt.beta1) * g;
        v = opt.beta2 * v.array().matrix() + (1.0 - opt.beta2) * g.array().square().matrix();
        Eigen::ArrayXXd mhat = m.array() / bc1;
        Eigen::ArrayXXd vhat = v.array() / bc2;
        p.array() -= lr * (mhat / (vhat.sqrt() + opt.eps) + opt.weight_decay * p.array());
    }
    state.step = t;
}

inline double grad_norm_of(const PolicyParams& grads) {
    double sq = 0.0;
    for_each_tensor(const_cast<PolicyParams&>(grads),
                    [&](const std::string&, Eigen::MatrixXd& m) { sq += m.squaredNorm(); });
    return std::sqrt(sq);
}

} // namespace detail

// One training step: batch indices, then per-sample flow draws, all from a
// substream keyed by (seed, step) only, so runs resume bit-exactly from a
// checkpoint. Returns the metrics row for the step.
inline TrainMetricsRow train_step(PolicyParams& params, const std::vector<TrainingSample>& data,
                                  const NormStats& stats, const OptimizerConfig& opt,
                                  AdamState& state, int step) {
    if (data.empty()) throw ConfigError("training needs a non-empty dataset");
    Rng rng = substream(mix_seed(opt.seed, 0x747261696eULL), static_cast<uint64_t>(step));

    std::vector<FlowSample> batch;
    batch.reserve(static_cast<size_t>(opt.batch_size));
    std::vector<size_t> indices(static_cast<size_t>(opt.batch_size));
    for (auto& idx : indices) idx = rng.uniform_index(data.size());
    for (size_t idx : indices) {
        if (params.cfg.mode == ModelConfig::Mode::flow)
            batch.push_back(make_flow_sample(data[idx], stats, rng));
        else
            batch.push_back(make_regression_sample(data[idx], stats));
    }

    BatchEvalOptions opts;
    opts.want_grads = true;
    opts.disable_r2h = opt.disable_r2h;
    opts.disable_h2r = opt.disable_h2r;
    BatchEval eval = mutual_imitation_loss(params, batch, opts);
    if (!std::isfinite(eval.loss.total))
        throw NonFiniteLoss("training loss not finite at step " + std::to_string(step));

    TrainMetricsRow row;
    row.step = step;
    row.l_r2h = eval.loss.l_r2h;
    row.l_h2r = eval.loss.l_h2r;
    row.total = eval.loss.total;
    row.grad_norm = detail::grad_norm_of(eval.grads);
    row.lr = learning_rate_at(opt, step);
    detail::adamw_update(params, eval.grads, state, opt, row.lr);
    return row;
}

using TrainCallback = std::function<void(const TrainMetricsRow&)>;

// Runs steps [state.step, opt.steps); metrics rows for the executed steps are
// returned (and streamed to the callback when given). Deterministic for a
// fixed (params, data, opt.seed): resuming from a checkpoint reproduces the
// uninterrupted run bit-exactly.
inline std::vector<TrainMetricsRow> train(PolicyParams& params,
                                          const std::vector<TrainingSample>& data,
                                          const NormStats& stats, const OptimizerConfig& opt,
                                          AdamState& state,
                                          const TrainCallback& callback = nullptr) {
    std::vector<TrainMetricsRow> rows;
    rows.reserve(static_cast<size_t>(std::max(opt.steps - state.step, 0)));
    for (int step = state.step; step < opt.steps; ++step) {
        TrainMetricsRow row = train_step(params, data, stats, opt, state, step);
        if (callback) callback(row);
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned text header + named tensors as little-endian
// doubles, bit-exact round trip. Norm stats and optimizer state ride along so
// eval needs only the checkpoint and training can resume exactly.
// ---------------------------------------------------------------------------
inline void save_checkpoint(const std::string& path, const PolicyParams& params,
                            const NormStats& stats, const AdamState* adam = nullptr) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    const ModelConfig& c = params.cfg;
    os << "MIMICKPT 1\n";
    os << "scene_dim " << c.scene_dim << "\n";
    os << "horizon " << c.horizon << "\n";
    os << "vocab " << c.vocab << "\n";
    os << "condition_dim " << c.condition_dim << "\n";
    os << "cond_hidden " << c.cond_hidden << "\n";
    os << "cond_layers " << c.cond_layers << "\n";
    os << "hidden_width " << c.hidden_width << "\n";
    os << "hidden_depth " << c.hidden_depth << "\n";
    os << "mode " << to_string(c.mode) << "\n";
    os << "sample_steps " << c.sample_steps << "\n";
    os << "step " << (adam ? adam->step : 0) << "\n";
    os << "adam " << (adam ? 1 : 0) << "\n";
    os << "end_header\n";

    auto write_tensor = [&os](const std::string& name, const Eigen::MatrixXd& m) {
        uint32_t len = static_cast<uint32_t>(name.size());
        os.write(reinterpret_cast<const char*>(&len), sizeof(len));
        os.write(name.data(), len);
        uint32_t rows = static_cast<uint32_t>(m.rows()), cols = static_cast<uint32_t>(m.cols());
        os.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
        os.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
        os.write(reinterpret_cast<const char*>(m.data()),
                 static_cast<std::streamsize>(sizeof(double) * m.size()));
    };
    for_each_tensor(const_cast<PolicyParams&>(params), write_tensor);
    os.write(reinterpret_cast<const char*>(stats.mean.data()), sizeof(double) * kUnifiedDims);
    os.write(reinterpret_cast<const char*>(stats.std.data()), sizeof(double) * kUnifiedDims);
    if (adam) {
        for_each_tensor(const_cast<PolicyParams&>(adam->m), write_tensor);
        for_each_tensor(const_cast<PolicyParams&>(adam->v), write_tensor);
    }
    if (!os) throw IoError("failed while writing checkpoint: " + path);
}

struct Checkpoint {
    PolicyParams params;
    NormStats stats;
    AdamState adam;
    bool has_adam = false;
    int step = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);

    ModelConfig cfg;
    int step = 0, has_adam = 0;
    std::string line;
    bool first = true, saw_end = false;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (first) {
            int version = -1;
            ls >> version;
            if (key != "MIMICKPT" || version < 1) throw BadMagic("not a checkpoint file: " + path);
            if (version > 1)
                throw VersionMismatch("checkpoint version " + std::to_string(version) +
                                      " is newer than supported version 1");
            first = false;
            continue;
        }
        if (key == "end_header") { saw_end = true; break; }
        if (key == "scene_dim") ls >> cfg.scene_dim;
        else if (key == "horizon") ls >> cfg.horizon;
        else if (key == "vocab") ls >> cfg.vocab;
        else if (key == "condition_dim") ls >> cfg.condition_dim;
        else if (key == "cond_hidden") ls >> cfg.cond_hidden;
        else if (key == "cond_layers") ls >> cfg.cond_layers;
        else if (key == "hidden_width") ls >> cfg.hidden_width;
        else if (key == "hidden_depth") ls >> cfg.hidden_depth;
        else if (key == "mode") { std::string m; ls >> m; cfg.mode = mode_from_string(m); }
        else if (key == "sample_steps") ls >> cfg.sample_steps;
        else if (key == "step") ls >> step;
        else if (key == "adam") ls >> has_adam;
    }
    if (first || !saw_end) throw BadMagic("checkpoint header is missing or corrupt: " + path);

    Checkpoint ck;
    ck.params = init_policy(cfg, 0);
    ck.step = step;

    auto read_into = [&is, &path](PolicyParams& target) {
        for_each_tensor(target, [&](const std::string& name, Eigen::MatrixXd& m) {
            uint32_t len = 0;
            is.read(reinterpret_cast<char*>(&len), sizeof(len));
            if (!is) throw TruncatedFile("checkpoint tensor stream ended early: " + path);
            std::string got(len, '\0');
            is.read(got.data(), len);
            uint32_t rows = 0, cols = 0;
            is.read(reinterpret_cast<char*>(&rows), sizeof(rows));
            is.read(reinterpret_cast<char*>(&cols), sizeof(cols));
            if (!is) throw TruncatedFile("checkpoint tensor stream ended early: " + path);
            if (got != name || rows != static_cast<uint32_t>(m.rows()) ||
                cols != static_cast<uint32_t>(m.cols()))
                throw ShapeMismatch("checkpoint tensor " + got + " (" + std::to_string(rows) + "x" +
                                    std::to_string(cols) + ") does not match expected " + name);
            is.read(reinterpret_cast<char*>(m.data()),
                    static_cast<std::streamsize>(sizeof(double) * m.size()));
            if (!is) throw TruncatedFile("checkpoint tensor stream ended early: " + path);
        });
    };
    read_into(ck.params);
    is.read(reinterpret_cast<char*>(ck.stats.mean.data()), sizeof(double) * kUnifiedDims);
    is.read(reinterpret_cast<char*>(ck.stats.std.data()), sizeof(double) * kUnifiedDims);
    if (!is) throw TruncatedFile("checkpoint stats ended early: " + path);
    if (has_adam) {
        ck.adam = make_adam_state(ck.params);
        read_into(ck.adam.m);
        read_into(ck.adam.v);
        ck.adam.step = step;
        ck.has_adam = true;
    }
    return ck;
}

// Validates a loaded checkpoint against the configuration the caller expects.
inline void require_compatible(const ModelConfig& expected, const ModelConfig& got) {
    auto fail = [](const std::string& field) {
        throw ShapeMismatch("checkpoint does not match the configured model: " + field);
    };
    if (expected.scene_dim != got.scene_dim) fail("scene_dim");
    if (expected.horizon != got.horizon) fail("horizon");
    if (expected.vocab != got.vocab) fail("vocab");
    if (expected.condition_dim != got.condition_dim) fail("condition_dim");
    if (expected.cond_hidden != got.cond_hidden) fail("cond_hidden");
    if (expected.cond_layers != got.cond_layers) fail("cond_layers");
    if (expected.hidden_width != got.hidden_width) fail("hidden_width");
    if (expected.hidden_depth != got.hidden_depth) fail("hidden_depth");
    if (expected.mode != got.mode) fail("mode");
}

// Masked action MSE of sampled chunks against their targets in normalized
// space, optionally restricted to a dim filter (e.g. the human block). The
// untrained-baseline and mutual-imitation comparisons run on this metric.
inline double heldout_action_mse(const PolicyParams& params, const NormStats& stats,
                                 const std::vector<TrainingSample>& samples, int n_steps,
                                 uint64_t seed, const DimMask* dim_filter = nullptr) {
    if (samples.empty()) throw ConfigError("held-out evaluation needs samples");
    double total = 0.0;
    int64_t counted = 0;
    for (size_t idx = 0; idx < samples.size(); ++idx) {
        const TrainingSample& s = samples[idx];
        Observation obs;
        obs.instruction_id = s.instruction_id;
        obs.scene = s.scene;
        obs.proprio = s.proprio;
        Rng rng(mix_seed(seed, idx));
        Eigen::MatrixXd z(params.cfg.horizon, kUnifiedDims);
        for (int r = 0; r < z.rows(); ++r)
            for (int c = 0; c < z.cols(); ++c) z(r, c) = rng.normal();
        Eigen::MatrixXd pred = predict_normalized(params, stats, obs, z, n_steps);
        for (int r = 0; r < pred.rows(); ++r) {
            ActionVector target_row = s.target.rows.row(r).transpose();
            ActionVector norm_target = normalize(target_row, stats);
            for (int c = 0; c < kUnifiedDims; ++c) {
                if (!s.target.mask[static_cast<size_t>(c)]) continue;
                if (dim_filter && !(*dim_filter)[static_cast<size_t>(c)]) continue;
                double e = pred(r, c) - norm_target[c];
                total += e * e;
                ++counted;
            }
        }
    }
    if (counted == 0) throw ConfigError("held-out evaluation matched no dims");
    return total / static_cast<double>(counted);
}

} // namespace mimic
