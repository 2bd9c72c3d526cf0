#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mimic/action_space.hpp"
#include "mimic/dataset.hpp"
#include "mimic/errors.hpp"
#include "mimic/rng.hpp"

namespace mimic {

// ---------------------------------------------------------------------------
// Model: a per-chunk-row token network with shared weights. Each row of the
// H x 76 chunk is processed by the same MLP on [row | condition | t], where
// the condition vector (instruction embedding + encoded scene/proprio, plus a
// learned per-row offset) is broadcast to every row. Two decoder modes share
// all of this: "flow" trains the MLP as a conditional flow-matching velocity
// field, "regression" predicts the chunk directly.
// ---------------------------------------------------------------------------
struct ModelConfig {
    enum class Mode { regression, flow };

    int scene_dim = 6;
    int horizon = 16;
    int vocab = 4;
    int condition_dim = 64;
    int cond_hidden = 64;
    int cond_layers = 2; // 1 = single affine map, 2 = affine-tanh-affine
    int hidden_width = 128;
    int hidden_depth = 2; // hidden layers in the velocity/regression net
    Mode mode = Mode::flow;
    int sample_steps = 8;

    int cond_input_dim() const { return scene_dim + kUnifiedDims; }
    int vel_input_dim() const { return kUnifiedDims + condition_dim + 1; }
};

inline const char* to_string(ModelConfig::Mode m) {
    return m == ModelConfig::Mode::flow ? "flow" : "regression";
}

inline ModelConfig::Mode mode_from_string(const std::string& s) {
    if (s == "flow") return ModelConfig::Mode::flow;
    if (s == "regression") return ModelConfig::Mode::regression;
    throw ConfigError("unknown decoder mode: " + s);
}

// Normalized proprio entries are clipped to this range before entering the
// condition encoder. Dims that are constant in the data normalize against the
// 1e-6 std floor, so an off-distribution proprio value would otherwise reach
// the encoder scaled by ~1e6 and pin every tanh unit.
inline constexpr double kProprioClip = 8.0;

inline ActionVector clip_proprio(const ActionVector& v) {
    return v.cwiseMax(-kProprioClip).cwiseMin(kProprioClip);
}

// All tensors are 64-bit matrices (biases are n x 1) so checkpointing, the
// optimizer, and the gradient checker can walk them uniformly.
struct PolicyParams {
    ModelConfig cfg;
    Eigen::MatrixXd embedding;     // vocab x d
    Eigen::MatrixXd pos_embedding; // horizon x d, zero-initialized
    std::vector<Eigen::MatrixXd> cond_w;
    std::vector<Eigen::MatrixXd> cond_b;
    std::vector<Eigen::MatrixXd> vel_w;
    std::vector<Eigen::MatrixXd> vel_b;
};

template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
    fn("embedding", p.embedding);
    fn("pos_embedding", p.pos_embedding);
    for (size_t i = 0; i < p.cond_w.size(); ++i) {
        fn("cond_w" + std::to_string(i), p.cond_w[i]);
        fn("cond_b" + std::to_string(i), p.cond_b[i]);
    }
    for (size_t i = 0; i < p.vel_w.size(); ++i) {
        fn("vel_w" + std::to_string(i), p.vel_w[i]);
        fn("vel_b" + std::to_string(i), p.vel_b[i]);
    }
}

inline PolicyParams zeros_like(const PolicyParams& p) {
    PolicyParams z = p;
    for_each_tensor(z, [](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
    return z;
}

inline PolicyParams init_policy(const ModelConfig& cfg, uint64_t seed) {
    PolicyParams p;
    p.cfg = cfg;
    Rng rng(mix_seed(seed, 0x70617261)); // "para"
    auto gaussian = [&](int rows, int cols, double scale) {
        Eigen::MatrixXd m(rows, cols);
        for (int c = 0; c < cols; ++c)
            for (int r = 0; r < rows; ++r) m(r, c) = rng.normal() * scale;
        return m;
    };
    p.embedding = gaussian(cfg.vocab, cfg.condition_dim, 0.01);
    p.pos_embedding = Eigen::MatrixXd::Zero(cfg.horizon, cfg.condition_dim);

    if (cfg.cond_layers == 1) {
        p.cond_w.push_back(gaussian(cfg.condition_dim, cfg.cond_input_dim(),
                                    1.0 / std::sqrt(cfg.cond_input_dim())));
        p.cond_b.push_back(Eigen::MatrixXd::Zero(cfg.condition_dim, 1));
    } else if (cfg.cond_layers == 2) {
        p.cond_w.push_back(gaussian(cfg.cond_hidden, cfg.cond_input_dim(),
                                    1.0 / std::sqrt(cfg.cond_input_dim())));
        p.cond_b.push_back(Eigen::MatrixXd::Zero(cfg.cond_hidden, 1));
        p.cond_w.push_back(
            gaussian(cfg.condition_dim, cfg.cond_hidden, 1.0 / std::sqrt(cfg.cond_hidden)));
        p.cond_b.push_back(Eigen::MatrixXd::Zero(cfg.condition_dim, 1));
    } else {
        throw ConfigError("cond_layers must be 1 or 2");
    }

    if (cfg.hidden_depth < 1) throw ConfigError("hidden_depth must be >= 1");
    int in = cfg.vel_input_dim();
    for (int l = 0; l < cfg.hidden_depth; ++l) {
        p.vel_w.push_back(gaussian(cfg.hidden_width, in, 1.0 / std::sqrt(in)));
        p.vel_b.push_back(Eigen::MatrixXd::Zero(cfg.hidden_width, 1));
        in = cfg.hidden_width;
    }
    // small output layer so the initial field is near zero
    p.vel_w.push_back(gaussian(kUnifiedDims, in, 0.01 / std::sqrt(in)));
    p.vel_b.push_back(Eigen::MatrixXd::Zero(kUnifiedDims, 1));
    return p;
}

inline bool all_finite(const PolicyParams& p) {
    bool ok = true;
    for_each_tensor(const_cast<PolicyParams&>(p),
                    [&](const std::string&, Eigen::MatrixXd& m) { ok = ok && m.allFinite(); });
    return ok;
}

// ---------------------------------------------------------------------------
// FlowSample: one training item. `clean` is the normalized target chunk with
// masked dims zeroed (masked targets carry no information and must not leak
// into the network input), `noise` the Gaussian draw, `time` the path
// position. Regression mode uses the same container with time = 0 and the
// noise ignored.
// ---------------------------------------------------------------------------
struct FlowSample {
    Eigen::MatrixXd clean; // H x 76
    Eigen::MatrixXd noise; // H x 76
    double time = 0.0;
    uint32_t instruction_id = 0;
    Eigen::VectorXd scene;
    ActionVector proprio = ActionVector::Zero(); // normalized
    DimMask mask = mask_none();
    Embodiment source = Embodiment::robot;
};

inline FlowSample make_regression_sample(const TrainingSample& s, const NormStats& stats) {
    FlowSample f;
    int h = static_cast<int>(s.target.rows.rows());
    f.clean.resize(h, kUnifiedDims);
    for (int r = 0; r < h; ++r) {
        ActionVector row = s.target.rows.row(r).transpose();
        f.clean.row(r) = normalize(row, stats).transpose();
    }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < kUnifiedDims; ++c)
            if (!s.target.mask[static_cast<size_t>(c)]) f.clean(r, c) = 0.0;
    f.noise = Eigen::MatrixXd::Zero(h, kUnifiedDims);
    f.instruction_id = s.instruction_id;
    f.scene = s.scene;
    f.proprio = normalize(s.proprio, stats);
    f.mask = s.target.mask;
    f.source = s.source;
    return f;
}

// Draws time uniform on [0,1) and noise N(0,1), in that order, from `rng`.
inline FlowSample make_flow_sample(const TrainingSample& s, const NormStats& stats, Rng& rng) {
    FlowSample f = make_regression_sample(s, stats);
    f.time = rng.uniform();
    int h = static_cast<int>(f.clean.rows());
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < kUnifiedDims; ++c) f.noise(r, c) = rng.normal();
    return f;
}

struct LossBreakdown {
    double l_r2h = 0.0;
    double l_h2r = 0.0;
    double total = 0.0;
};

struct BatchEvalOptions {
    bool want_grads = true;
    bool disable_r2h = false; // drop robot-sourced samples from the objective
    bool disable_h2r = false; // drop human-sourced samples
};

struct BatchEval {
    LossBreakdown loss;
    PolicyParams grads;
};

namespace detail {

struct CondCache {
    Eigen::MatrixXd xc; // cond input, (S+76) x B
    Eigen::MatrixXd a1; // post-tanh hidden (2-layer case)
    Eigen::MatrixXd c;  // condition vectors, d x B
};

inline CondCache cond_forward(const PolicyParams& p, const std::vector<const FlowSample*>& batch) {
    const ModelConfig& cfg = p.cfg;
    int b = static_cast<int>(batch.size());
    CondCache cache;
    cache.xc.resize(cfg.cond_input_dim(), b);
    for (int s = 0; s < b; ++s) {
        if (batch[static_cast<size_t>(s)]->scene.size() != cfg.scene_dim)
            throw ShapeMismatch("scene vector length does not match the model config");
        if (batch[static_cast<size_t>(s)]->instruction_id >= static_cast<uint32_t>(cfg.vocab))
            throw UnknownInstruction("instruction id " +
                                     std::to_string(batch[static_cast<size_t>(s)]->instruction_id) +
                                     " outside vocabulary of " + std::to_string(cfg.vocab));
        cache.xc.col(s).head(cfg.scene_dim) = batch[static_cast<size_t>(s)]->scene;
        cache.xc.col(s).tail(kUnifiedDims) = clip_proprio(batch[static_cast<size_t>(s)]->proprio);
    }
    if (cfg.cond_layers == 1) {
        cache.c = (p.cond_w[0] * cache.xc).colwise() + p.cond_b[0].col(0);
    } else {
        Eigen::MatrixXd z1 = (p.cond_w[0] * cache.xc).colwise() + p.cond_b[0].col(0);
        cache.a1 = z1.array().tanh();
        cache.c = (p.cond_w[1] * cache.a1).colwise() + p.cond_b[1].col(0);
    }
    for (int s = 0; s < b; ++s)
        cache.c.col(s) += p.embedding.row(static_cast<int>(batch[static_cast<size_t>(s)]->instruction_id)).transpose();
    return cache;
}

inline void cond_backward(const PolicyParams& p, const CondCache& cache,
                          const std::vector<const FlowSample*>& batch,
                          const Eigen::MatrixXd& delta_c, PolicyParams& grads) {
    int b = static_cast<int>(batch.size());
    for (int s = 0; s < b; ++s)
        grads.embedding.row(static_cast<int>(batch[static_cast<size_t>(s)]->instruction_id)) +=
            delta_c.col(s).transpose();
    if (p.cfg.cond_layers == 1) {
        grads.cond_w[0] += delta_c * cache.xc.transpose();
        grads.cond_b[0].col(0) += delta_c.rowwise().sum();
    } else {
        grads.cond_w[1] += delta_c * cache.a1.transpose();
        grads.cond_b[1].col(0) += delta_c.rowwise().sum();
        Eigen::MatrixXd delta_z1 =
            (p.cond_w[1].transpose() * delta_c).array() * (1.0 - cache.a1.array().square());
        grads.cond_w[0] += delta_z1 * cache.xc.transpose();
        grads.cond_b[0].col(0) += delta_z1.rowwise().sum();
    }
}

struct VelCache {
    Eigen::MatrixXd xv;                  // input, I x (B*H)
    std::vector<Eigen::MatrixXd> hidden; // post-tanh activations per layer
    Eigen::MatrixXd out;                 // 76 x (B*H)
};

// Columns are row-tokens ordered sample-major: column s*H + i is row i of
// sample s. Flow mode feeds (1-t) z + t clean; regression feeds zeros.
inline VelCache vel_forward(const PolicyParams& p, const std::vector<const FlowSample*>& batch,
                            const Eigen::MatrixXd& cond) {
    const ModelConfig& cfg = p.cfg;
    int b = static_cast<int>(batch.size());
    int h = cfg.horizon;
    VelCache cache;
    cache.xv.resize(cfg.vel_input_dim(), b * h);
    for (int s = 0; s < b; ++s) {
        const FlowSample& f = *batch[static_cast<size_t>(s)];
        if (f.clean.rows() != h || f.clean.cols() != kUnifiedDims)
            throw ShapeMismatch("chunk shape does not match the model horizon");
        double t = f.time;
        for (int i = 0; i < h; ++i) {
            int j = s * h + i;
            if (cfg.mode == ModelConfig::Mode::flow) {
                cache.xv.col(j).head(kUnifiedDims) =
                    ((1.0 - t) * f.noise.row(i) + t * f.clean.row(i)).transpose();
            } else {
                cache.xv.col(j).head(kUnifiedDims).setZero();
            }
            cache.xv.col(j).segment(kUnifiedDims, cfg.condition_dim) =
                cond.col(s) + p.pos_embedding.row(i).transpose();
            cache.xv(cfg.vel_input_dim() - 1, j) = cfg.mode == ModelConfig::Mode::flow ? t : 0.0;
        }
    }
    const Eigen::MatrixXd* prev = &cache.xv;
    cache.hidden.reserve(p.vel_w.size() - 1);
    for (size_t l = 0; l + 1 < p.vel_w.size(); ++l) {
        Eigen::MatrixXd z = (p.vel_w[l] * (*prev)).colwise() + p.vel_b[l].col(0);
        cache.hidden.push_back(z.array().tanh());
        prev = &cache.hidden.back();
    }
    cache.out = (p.vel_w.back() * (*prev)).colwise() + p.vel_b.back().col(0);
    return cache;
}

// Backpropagates delta at the network output; returns delta at the input.
inline Eigen::MatrixXd vel_backward(const PolicyParams& p, const VelCache& cache,
                                    const Eigen::MatrixXd& delta_out, PolicyParams& grads) {
    size_t last = p.vel_w.size() - 1;
    const Eigen::MatrixXd& h_last = last == 0 ? cache.xv : cache.hidden.back();
    grads.vel_w[last] += delta_out * h_last.transpose();
    grads.vel_b[last].col(0) += delta_out.rowwise().sum();
    Eigen::MatrixXd delta = p.vel_w[last].transpose() * delta_out;
    for (size_t l = last; l-- > 0;) {
        delta = delta.array() * (1.0 - cache.hidden[l].array().square());
        const Eigen::MatrixXd& h_prev = l == 0 ? cache.xv : cache.hidden[l - 1];
        grads.vel_w[l] += delta * h_prev.transpose();
        grads.vel_b[l].col(0) += delta.rowwise().sum();
        delta = p.vel_w[l].transpose() * delta;
    }
    return delta; // I x (B*H), gradient at the network input
}

} // namespace detail

// ---------------------------------------------------------------------------
// Loss over a batch, grouped by the source embodiment of each sample (Eq.-5/6
// grouping): l_r2h accumulates the per-sample losses of robot-sourced
// samples in batch order, l_h2r those of human-sourced samples, both divided
// by the full batch size, and total = l_r2h + l_h2r as one double addition.
// The per-sample loss is the mean over unmasked (row, dim) entries of the
// squared prediction error; in flow mode the prediction is the velocity field
// at the interpolated point and the target is clean - noise, in regression
// mode the prediction is the chunk itself.
// ---------------------------------------------------------------------------
inline BatchEval mutual_imitation_loss(const PolicyParams& p,
                                       const std::vector<FlowSample>& batch,
                                       const BatchEvalOptions& opts = BatchEvalOptions{}) {
    if (batch.empty()) throw ConfigError("loss needs a non-empty batch");
    const ModelConfig& cfg = p.cfg;
    int b = static_cast<int>(batch.size());
    int h = cfg.horizon;

    std::vector<const FlowSample*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& f : batch) ptrs.push_back(&f);

    detail::CondCache cond = detail::cond_forward(p, ptrs);
    detail::VelCache vel = detail::vel_forward(p, ptrs, cond.c);

    BatchEval eval;
    if (opts.want_grads) eval.grads = zeros_like(p);

    Eigen::MatrixXd delta_out;
    if (opts.want_grads) delta_out = Eigen::MatrixXd::Zero(kUnifiedDims, b * h);

    double r2h = 0.0, h2r = 0.0;
    for (int s = 0; s < b; ++s) {
        const FlowSample& f = batch[static_cast<size_t>(s)];
        bool enabled = f.source == Embodiment::robot ? !opts.disable_r2h : !opts.disable_h2r;
        int m_dims = 0;
        for (bool bit : f.mask) m_dims += bit ? 1 : 0;
        if (m_dims == 0) continue;
        double sse = 0.0;
        double denom = static_cast<double>(h) * static_cast<double>(m_dims);
        for (int i = 0; i < h; ++i) {
            int j = s * h + i;
            for (int k = 0; k < kUnifiedDims; ++k) {
                if (!f.mask[static_cast<size_t>(k)]) continue;
                double target = cfg.mode == ModelConfig::Mode::flow ? f.clean(i, k) - f.noise(i, k)
                                                                    : f.clean(i, k);
                double err = vel.out(k, j) - target;
                sse += err * err;
                if (opts.want_grads && enabled)
                    delta_out(k, j) = 2.0 * err / (denom * static_cast<double>(b));
            }
        }
        double sample_loss = sse / denom;
        if (!enabled) continue;
        if (f.source == Embodiment::robot)
            r2h += sample_loss;
        else
            h2r += sample_loss;
    }
    eval.loss.l_r2h = r2h / static_cast<double>(b);
    eval.loss.l_h2r = h2r / static_cast<double>(b);
    eval.loss.total = eval.loss.l_r2h + eval.loss.l_h2r;

    if (opts.want_grads) {
        Eigen::MatrixXd delta_in = detail::vel_backward(p, vel, delta_out, eval.grads);
        Eigen::MatrixXd delta_c = Eigen::MatrixXd::Zero(cfg.condition_dim, b);
        for (int s = 0; s < b; ++s) {
            for (int i = 0; i < h; ++i) {
                int j = s * h + i;
                delta_c.col(s) += delta_in.col(j).segment(kUnifiedDims, cfg.condition_dim);
                eval.grads.pos_embedding.row(i) +=
                    delta_in.col(j).segment(kUnifiedDims, cfg.condition_dim).transpose();
            }
        }
        detail::cond_backward(p, cond, ptrs, delta_c, eval.grads);
    }
    return eval;
}

// Single-sample flow-matching loss (Eq.-style CFM objective).
inline BatchEval cfm_loss(const PolicyParams& p, const FlowSample& sample, bool want_grads = true) {
    BatchEvalOptions opts;
    opts.want_grads = want_grads;
    std::vector<FlowSample> batch{sample};
    BatchEval eval = mutual_imitation_loss(p, batch, opts);
    return eval;
}

// ---------------------------------------------------------------------------
// The public per-operation surfaces.
// ---------------------------------------------------------------------------
inline Eigen::VectorXd encode_condition(const PolicyParams& p, uint32_t instruction_id,
                                        const Eigen::VectorXd& scene,
                                        const ActionVector& proprio_normalized) {
    FlowSample f;
    f.instruction_id = instruction_id;
    f.scene = scene;
    f.proprio = proprio_normalized;
    std::vector<const FlowSample*> one{&f};
    return detail::cond_forward(p, one).c.col(0);
}

inline Eigen::MatrixXd velocity_field(const PolicyParams& p, const Eigen::MatrixXd& noisy_chunk,
                                      double t, const Eigen::VectorXd& condition) {
    const ModelConfig& cfg = p.cfg;
    if (noisy_chunk.rows() != cfg.horizon || noisy_chunk.cols() != kUnifiedDims)
        throw ShapeMismatch("noisy chunk must be horizon x 76");
    if (condition.size() != cfg.condition_dim) throw ShapeMismatch("condition dim mismatch");
    int h = cfg.horizon;
    Eigen::MatrixXd xv(cfg.vel_input_dim(), h);
    for (int i = 0; i < h; ++i) {
        xv.col(i).head(kUnifiedDims) = noisy_chunk.row(i).transpose();
        xv.col(i).segment(kUnifiedDims, cfg.condition_dim) =
            condition + p.pos_embedding.row(i).transpose();
        xv(cfg.vel_input_dim() - 1, i) = t;
    }
    const Eigen::MatrixXd* prev = &xv;
    std::vector<Eigen::MatrixXd> hidden;
    for (size_t l = 0; l + 1 < p.vel_w.size(); ++l) {
        Eigen::MatrixXd z = (p.vel_w[l] * (*prev)).colwise() + p.vel_b[l].col(0);
        hidden.push_back(z.array().tanh());
        prev = &hidden.back();
    }
    Eigen::MatrixXd out = (p.vel_w.back() * (*prev)).colwise() + p.vel_b.back().col(0);
    return out.transpose(); // H x 76
}

// Vector-Jacobian product of the velocity field with respect to the noisy
// chunk; test support for derivative checks against finite differences.
inline Eigen::MatrixXd velocity_field_vjp(const PolicyParams& p, const Eigen::MatrixXd& noisy_chunk,
                                          double t, const Eigen::VectorXd& condition,
                                          const Eigen::MatrixXd& cotangent) {
    const ModelConfig& cfg = p.cfg;
    int h = cfg.horizon;
    Eigen::MatrixXd xv(cfg.vel_input_dim(), h);
    for (int i = 0; i < h; ++i) {
        xv.col(i).head(kUnifiedDims) = noisy_chunk.row(i).transpose();
        xv.col(i).segment(kUnifiedDims, cfg.condition_dim) =
            condition + p.pos_embedding.row(i).transpose();
        xv(cfg.vel_input_dim() - 1, i) = t;
    }
    std::vector<Eigen::MatrixXd> hidden;
    const Eigen::MatrixXd* prev = &xv;
    for (size_t l = 0; l + 1 < p.vel_w.size(); ++l) {
        Eigen::MatrixXd z = (p.vel_w[l] * (*prev)).colwise() + p.vel_b[l].col(0);
        hidden.push_back(z.array().tanh());
        prev = &hidden.back();
    }
    Eigen::MatrixXd delta = cotangent.transpose(); // 76 x H
    size_t last = p.vel_w.size() - 1;
    delta = p.vel_w[last].transpose() * delta;
    for (size_t l = last; l-- > 0;) {
        delta = delta.array() * (1.0 - hidden[l].array().square());
        delta = p.vel_w[l].transpose() * delta;
    }
    Eigen::MatrixXd out(h, kUnifiedDims);
    for (int i = 0; i < h; ++i) out.row(i) = delta.col(i).head(kUnifiedDims).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Sampling: Euler integration of dA/dt = v(A, t, c) from t = 0 (A = noise
// draw) to t = 1 in n_steps equal steps. The generic integrator is exposed so
// tests can drive it with oracle fields.
// ---------------------------------------------------------------------------
template <typename Field>
Eigen::MatrixXd integrate_flow(Field&& field, const Eigen::MatrixXd& z, int n_steps) {
    if (n_steps < 1) throw ConfigError("sampling needs n_steps >= 1");
    Eigen::MatrixXd a = z;
    double dt = 1.0 / n_steps;
    for (int s = 0; s < n_steps; ++s) {
        double t = static_cast<double>(s) / n_steps;
        a += dt * field(a, t);
    }
    return a;
}

struct Observation {
    uint32_t instruction_id = 0;
    Eigen::VectorXd scene;
    ActionVector proprio = ActionVector::Zero(); // raw (unnormalized)
};

// Prediction in normalized space: flow mode integrates the field from the
// given noise draw; regression mode is a single forward pass.
inline Eigen::MatrixXd predict_normalized(const PolicyParams& p, const NormStats& stats,
                                          const Observation& obs, const Eigen::MatrixXd& noise,
                                          int n_steps) {
    Eigen::VectorXd cond = encode_condition(p, obs.instruction_id, obs.scene,
                                            normalize(obs.proprio, stats));
    if (p.cfg.mode == ModelConfig::Mode::regression) {
        Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(p.cfg.horizon, kUnifiedDims);
        FlowSample f;
        f.clean = zero;
        f.noise = zero;
        f.instruction_id = obs.instruction_id;
        f.scene = obs.scene;
        f.proprio = normalize(obs.proprio, stats);
        std::vector<const FlowSample*> one{&f};
        detail::CondCache cc = detail::cond_forward(p, one);
        detail::VelCache vc = detail::vel_forward(p, one, cc.c);
        return vc.out.transpose();
    }
    return integrate_flow(
        [&](const Eigen::MatrixXd& a, double t) { return velocity_field(p, a, t, cond); }, noise,
        n_steps);
}

// Restores the UnifiedAction invariants on a raw sampled chunk: quaternion
// blocks renormalized with canonical sign (identity when degenerate), SixD
// blocks orthonormalized through a decode/encode round trip, grippers
// clamped.
inline void canonicalize_chunk(Eigen::MatrixXd& rows) {
    for (int r = 0; r < rows.rows(); ++r) {
        for (int base : {65, 72}) { // EEF quaternion slots
            Quaternion q{rows(r, base), rows(r, base + 1), rows(r, base + 2), rows(r, base + 3)};
            Quaternion canon;
            try {
                canon = quat_canonicalize(q);
            } catch (const ZeroQuaternion&) {
                canon = Quaternion{};
            }
            rows(r, base) = canon.w;
            rows(r, base + 1) = canon.x;
            rows(r, base + 2) = canon.y;
            rows(r, base + 3) = canon.z;
        }
        for (int base : {3, 12}) { // wrist SixD slots
            SixDOrientation sixd{Vec3(rows(r, base), rows(r, base + 1), rows(r, base + 2)),
                                 Vec3(rows(r, base + 3), rows(r, base + 4), rows(r, base + 5))};
            Mat3 m;
            try {
                m = sixd_to_matrix(sixd);
            } catch (const DegenerateSixD&) {
                m = Mat3::Identity();
            }
            SixDOrientation canon = matrix_to_sixd(m);
            for (int k = 0; k < 3; ++k) {
                rows(r, base + k) = canon.a[k];
                rows(r, base + 3 + k) = canon.b[k];
            }
        }
        rows(r, 54) = clamp_unit(rows(r, 54));
        rows(r, 61) = clamp_unit(rows(r, 61));
    }
}

inline ActionChunk sample_actions(const PolicyParams& p, const NormStats& stats,
                                  const Observation& obs, int n_steps, uint64_t seed) {
    Rng rng(mix_seed(seed, 0x73616d70)); // "samp"
    Eigen::MatrixXd z(p.cfg.horizon, kUnifiedDims);
    for (int r = 0; r < z.rows(); ++r)
        for (int c = 0; c < z.cols(); ++c) z(r, c) = rng.normal();
    Eigen::MatrixXd a = predict_normalized(p, stats, obs, z, n_steps);
    ActionChunk chunk;
    chunk.rows.resize(p.cfg.horizon, kUnifiedDims);
    for (int r = 0; r < a.rows(); ++r) {
        ActionVector row = a.row(r).transpose();
        chunk.rows.row(r) = denormalize(row, stats).transpose();
    }
    canonicalize_chunk(chunk.rows);
    chunk.mask = mask_all();
    chunk.padded.assign(static_cast<size_t>(p.cfg.horizon), 0);
    return chunk;
}

// ---------------------------------------------------------------------------
// Gradient check: central finite differences over a random subsample of
// parameter coordinates against the analytic gradient. Relative error uses an
// absolute floor of 1e-12 in the denominator so a true optimum reports 0.
// Non-finite values are an error, never a silent pass.
// ---------------------------------------------------------------------------
inline double grad_check(PolicyParams& params, const std::vector<FlowSample>& batch, double eps,
                         uint64_t seed, int coords = 200,
                         const BatchEvalOptions& base_opts = BatchEvalOptions{}) {
    if (eps <= 0.0) throw ConfigError("grad_check needs eps > 0");
    if (!all_finite(params)) throw NonFiniteLoss("parameters contain non-finite values");

    BatchEvalOptions opts = base_opts;
    opts.want_grads = true;
    BatchEval eval = mutual_imitation_loss(params, batch, opts);
    if (!std::isfinite(eval.loss.total)) throw NonFiniteLoss("loss is not finite");

    struct TensorRef {
        std::string name;
        Eigen::MatrixXd* values;
        Eigen::MatrixXd* grads;
    };
    std::vector<TensorRef> refs;
    {
        std::vector<std::pair<std::string, Eigen::MatrixXd*>> vs, gs;
        for_each_tensor(params, [&](const std::string& n, Eigen::MatrixXd& m) {
            vs.emplace_back(n, &m);
        });
        for_each_tensor(eval.grads, [&](const std::string& n, Eigen::MatrixXd& m) {
            gs.emplace_back(n, &m);
        });
        for (size_t i = 0; i < vs.size(); ++i)
            refs.push_back(TensorRef{vs[i].first, vs[i].second, gs[i].second});
    }
    int64_t total_coords = 0;
    for (const auto& r : refs) total_coords += r.values->size();

    BatchEvalOptions no_grads = opts;
    no_grads.want_grads = false;
    auto loss_at = [&]() { return mutual_imitation_loss(params, batch, no_grads).loss.total; };

    Rng rng(mix_seed(seed, 0x67636b)); // "gck"
    double max_rel = 0.0;
    for (int c = 0; c < coords; ++c) {
        int64_t flat = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(total_coords)));
        for (const auto& r : refs) {
            if (flat >= r.values->size()) {
                flat -= r.values->size();
                continue;
            }
            double* v = r.values->data() + flat;
            double analytic = *(r.grads->data() + flat);
            double saved = *v;
            *v = saved + eps;
            double up = loss_at();
            *v = saved - eps;
            double down = loss_at();
            *v = saved;
            double numeric = (up - down) / (2.0 * eps);
            if (!std::isfinite(numeric) || !std::isfinite(analytic))
                throw NonFiniteLoss("non-finite value in gradient check at tensor " + r.name);
            // differences below the finite-difference noise floor
            // (~eps_machine * |loss| / eps) are unmeasurable agreement, not error
            if (std::abs(analytic - numeric) >= 1e-9) {
                double rel = std::abs(analytic - numeric) /
                             std::max(1e-12, std::abs(analytic) + std::abs(numeric));
                max_rel = std::max(max_rel, rel);
            }
            break;
        }
    }
    return max_rel;
}

} // namespace mimic
