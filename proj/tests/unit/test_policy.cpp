#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "mimic/policy.hpp"
#include "mimic/training.hpp"
#include "test_helpers.hpp"

using namespace mimic;
using namespace mimic::testing;

namespace {

ModelConfig tiny_config(ModelConfig::Mode mode = ModelConfig::Mode::flow) {
    ModelConfig cfg;
    cfg.scene_dim = 6;
    cfg.horizon = 4;
    cfg.vocab = 3;
    cfg.condition_dim = 8;
    cfg.cond_hidden = 8;
    cfg.cond_layers = 2;
    cfg.hidden_width = 16;
    cfg.hidden_depth = 2;
    cfg.mode = mode;
    return cfg;
}

TrainingSample random_training_sample(const ModelConfig& cfg, Rng& rng, Embodiment source) {
    TrainingSample s;
    s.source = source;
    s.instruction_id = static_cast<uint32_t>(rng.uniform_index(cfg.vocab));
    s.scene = Eigen::VectorXd::Zero(cfg.scene_dim);
    for (int i = 0; i < cfg.scene_dim; ++i) s.scene[i] = rng.uniform(-0.4, 0.4);
    for (int i = 0; i < kUnifiedDims; ++i) s.proprio[i] = rng.uniform(-1, 1);
    s.proprio_mask = source == Embodiment::robot ? mask_robot_native() : mask_human();
    s.target.rows.resize(cfg.horizon, kUnifiedDims);
    for (int r = 0; r < cfg.horizon; ++r)
        for (int c = 0; c < kUnifiedDims; ++c) s.target.rows(r, c) = rng.uniform(-1, 1);
    s.target.mask = source == Embodiment::robot ? mask_robot_native() : mask_human();
    s.target.padded.assign(static_cast<size_t>(cfg.horizon), 0);
    return s;
}

std::vector<FlowSample> random_batch(const ModelConfig& cfg, Rng& rng, int n_robot, int n_human) {
    NormStats stats;
    std::vector<FlowSample> batch;
    for (int i = 0; i < n_robot + n_human; ++i) {
        Embodiment e = i < n_robot ? Embodiment::robot : Embodiment::human;
        TrainingSample s = random_training_sample(cfg, rng, e);
        if (cfg.mode == ModelConfig::Mode::flow)
            batch.push_back(make_flow_sample(s, stats, rng));
        else
            batch.push_back(make_regression_sample(s, stats));
    }
    return batch;
}

// Small synthetic reach dataset shared by the training tests.
struct ToyData {
    std::vector<TrainingSample> samples;
    NormStats stats;
};

ToyData toy_dataset(const ModelConfig& cfg, int demos_per_embodiment) {
    RetargetConfig rcfg = round_trip_config();
    ReachTaskConfig task = test_task(12);
    std::vector<Demonstration> demos;
    for (Embodiment e : {Embodiment::robot, Embodiment::human}) {
        auto batch = generate_synthetic_demos(task, rcfg, e, demos_per_embodiment, 5);
        for (auto& d : batch) demos.push_back(augment_complementary(d, rcfg));
    }
    ToyData out;
    out.stats = compute_norm_stats(demos);
    for (const auto& d : demos) {
        auto chunks = chunk_samples(d, cfg.horizon, 1);
        out.samples.insert(out.samples.end(), chunks.begin(), chunks.end());
    }
    return out;
}

bool params_equal(const PolicyParams& a, const PolicyParams& b) {
    bool eq = true;
    std::vector<const Eigen::MatrixXd*> ta, tb;
    for_each_tensor(const_cast<PolicyParams&>(a),
                    [&](const std::string&, Eigen::MatrixXd& m) { ta.push_back(&m); });
    for_each_tensor(const_cast<PolicyParams&>(b),
                    [&](const std::string&, Eigen::MatrixXd& m) { tb.push_back(&m); });
    for (size_t i = 0; i < ta.size(); ++i)
        eq = eq && ta[i]->rows() == tb[i]->rows() && ta[i]->cols() == tb[i]->cols() &&
             (*ta[i] - *tb[i]).cwiseAbs().maxCoeff() == 0.0;
    return eq;
}

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "mimic_policy_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_CASE("encode_condition zero weights give the zero vector") {
    ModelConfig cfg = tiny_config();
    PolicyParams p = init_policy(cfg, 1);
    for_each_tensor(p, [](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
    Eigen::VectorXd c = encode_condition(p, 0, Eigen::VectorXd::Zero(cfg.scene_dim),
                                         ActionVector::Zero());
    CHECK(c.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encode_condition single identity layer projects the input") {
    ModelConfig cfg = tiny_config();
    cfg.cond_layers = 1;
    PolicyParams p = init_policy(cfg, 1);
    for_each_tensor(p, [](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
    p.cond_w[0].setZero();
    for (int i = 0; i < cfg.condition_dim; ++i) p.cond_w[0](i, i) = 1.0; // rectangular identity
    Eigen::VectorXd scene(cfg.scene_dim);
    scene << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6;
    ActionVector proprio = ActionVector::Zero();
    proprio[0] = 0.7;
    proprio[1] = 0.8;
    Eigen::VectorXd c = encode_condition(p, 0, scene, proprio);
    CHECK(c[0] == 0.1);
    CHECK(c[5] == 0.6);
    CHECK(c[6] == 0.7); // proprio follows the scene in the concatenation
    CHECK(c[7] == 0.8);
}

TEST_CASE("encode_condition rejects unknown instructions") {
    ModelConfig cfg = tiny_config();
    PolicyParams p = init_policy(cfg, 1);
    CHECK_THROWS_AS(encode_condition(p, 99, Eigen::VectorXd::Zero(cfg.scene_dim),
                                     ActionVector::Zero()),
                    UnknownInstruction);
}

TEST_CASE("velocity_field zero weights give the zero field and proper shape") {
    ModelConfig cfg = tiny_config();
    PolicyParams p = init_policy(cfg, 2);
    Eigen::VectorXd cond = Eigen::VectorXd::Zero(cfg.condition_dim);
    Eigen::MatrixXd noisy = Eigen::MatrixXd::Random(cfg.horizon, kUnifiedDims);
    Eigen::MatrixXd v = velocity_field(p, noisy, 0.3, cond);
    CHECK(v.rows() == cfg.horizon);
    CHECK(v.cols() == kUnifiedDims);

    for_each_tensor(p, [](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
    v = velocity_field(p, noisy, 0.3, cond);
    CHECK(v.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("velocity_field input Jacobian matches finite differences on a 2-unit net") {
    ModelConfig cfg = tiny_config();
    cfg.hidden_width = 2;
    cfg.hidden_depth = 1;
    PolicyParams p = init_policy(cfg, 3);
    // non-degenerate weights
    for_each_tensor(p, [&](const std::string&, Eigen::MatrixXd& m) {
        m = Eigen::MatrixXd::Random(m.rows(), m.cols()) * 0.5;
    });
    Rng rng(17);
    Eigen::VectorXd cond = Eigen::VectorXd::Random(cfg.condition_dim);
    Eigen::MatrixXd noisy = Eigen::MatrixXd::Random(cfg.horizon, kUnifiedDims);
    Eigen::MatrixXd cot = Eigen::MatrixXd::Random(cfg.horizon, kUnifiedDims);

    Eigen::MatrixXd analytic = velocity_field_vjp(p, noisy, 0.4, cond, cot);
    double eps = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        int r = static_cast<int>(rng.uniform_index(cfg.horizon));
        int c = static_cast<int>(rng.uniform_index(kUnifiedDims));
        Eigen::MatrixXd up = noisy, down = noisy;
        up(r, c) += eps;
        down(r, c) -= eps;
        double fd = ((velocity_field(p, up, 0.4, cond).array() * cot.array()).sum() -
                     (velocity_field(p, down, 0.4, cond).array() * cot.array()).sum()) /
                    (2 * eps);
        worst = std::max(worst, std::abs(fd - analytic(r, c)) /
                                    std::max(1e-12, std::abs(fd) + std::abs(analytic(r, c))));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("cfm_loss planted optima are exactly zero") {
    ModelConfig cfg = tiny_config();
    Rng rng(23);

    SECTION("zero weights with clean = noise gives zero target velocity") {
        PolicyParams p = init_policy(cfg, 4);
        for_each_tensor(p, [](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
        NormStats stats;
        TrainingSample s = random_training_sample(cfg, rng, Embodiment::robot);
        FlowSample f = make_flow_sample(s, stats, rng);
        f.noise = f.clean; // A* = z
        BatchEval eval = cfm_loss(p, f);
        CHECK(eval.loss.total == 0.0);
    }
    SECTION("constant planted field matching a constant target velocity") {
        PolicyParams p = init_policy(cfg, 4);
        for_each_tensor(p, [](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
        NormStats stats;
        TrainingSample s = random_training_sample(cfg, rng, Embodiment::human);
        FlowSample f = make_flow_sample(s, stats, rng);
        // zero noise and constant clean rows make the target velocity exactly
        // the constant vector
        Eigen::VectorXd shift = Eigen::VectorXd::Random(kUnifiedDims);
        f.noise.setZero();
        for (int r = 0; r < cfg.horizon; ++r) f.clean.row(r) = shift.transpose();
        p.vel_b.back().col(0) = shift; // v == shift everywhere
        BatchEval eval = cfm_loss(p, f);
        CHECK(eval.loss.total == 0.0);
    }
}

TEST_CASE("regression mode is exactly zero at a planted optimum") {
    ModelConfig cfg = tiny_config(ModelConfig::Mode::regression);
    PolicyParams p = init_policy(cfg, 5);
    Rng rng(29);
    NormStats stats;
    TrainingSample s = random_training_sample(cfg, rng, Embodiment::robot);
    FlowSample f = make_regression_sample(s, stats);
    // plant: targets := the network's own prediction
    std::vector<const FlowSample*> one{&f};
    auto cc = detail::cond_forward(p, one);
    auto vc = detail::vel_forward(p, one, cc.c);
    for (int r = 0; r < cfg.horizon; ++r) f.clean.row(r) = vc.out.col(r).transpose();
    BatchEval eval = cfm_loss(p, f);
    CHECK(eval.loss.l_r2h == 0.0);
    CHECK(eval.loss.total == 0.0);
}

TEST_CASE("mutual imitation loss groups by source embodiment") {
    ModelConfig cfg = tiny_config();
    PolicyParams p = init_policy(cfg, 6);
    Rng rng(31);

    SECTION("empty human subset means l_h2r = 0 and total = l_r2h") {
        auto batch = random_batch(cfg, rng, 5, 0);
        BatchEval eval = mutual_imitation_loss(p, batch);
        CHECK(eval.loss.l_h2r == 0.0);
        CHECK(eval.loss.total == eval.loss.l_r2h);
        CHECK(eval.loss.l_r2h > 0.0);
    }
    SECTION("total = l_r2h + l_h2r bit-exact, terms recomputed independently") {
        for (int trial = 0; trial < 20; ++trial) {
            auto batch = random_batch(cfg, rng, 3, 4);
            BatchEvalOptions no_grads;
            no_grads.want_grads = false;
            BatchEval mixed = mutual_imitation_loss(p, batch, no_grads);
            CHECK(mixed.loss.total == mixed.loss.l_r2h + mixed.loss.l_h2r);

            BatchEvalOptions only_r2h = no_grads;
            only_r2h.disable_h2r = true;
            BatchEvalOptions only_h2r = no_grads;
            only_h2r.disable_r2h = true;
            CHECK(mutual_imitation_loss(p, batch, only_r2h).loss.l_r2h == mixed.loss.l_r2h);
            CHECK(mutual_imitation_loss(p, batch, only_h2r).loss.l_h2r == mixed.loss.l_h2r);
        }
    }
    SECTION("disabled objectives contribute neither loss nor gradient") {
        auto batch = random_batch(cfg, rng, 3, 3);
        BatchEvalOptions opts;
        opts.disable_r2h = true;
        BatchEval eval = mutual_imitation_loss(p, batch, opts);
        CHECK(eval.loss.l_r2h == 0.0);
        std::vector<FlowSample> human_only(batch.begin() + 3, batch.end());
        BatchEval href = mutual_imitation_loss(p, human_only);
        // same objective value up to the batch-size denominator
        CHECK(eval.loss.l_h2r * 6.0 == Catch::Approx(href.loss.l_h2r * 3.0).epsilon(1e-12));
    }
}

TEST_CASE("masked dims never contribute to loss or gradient") {
    ModelConfig cfg = tiny_config();
    PolicyParams p = init_policy(cfg, 7);
    Rng rng(37);
    NormStats stats;
    TrainingSample s = random_training_sample(cfg, rng, Embodiment::robot);

    TrainingSample perturbed = s;
    for (int r = 0; r < cfg.horizon; ++r)
        for (int c = 0; c < kUnifiedDims; ++c)
            if (!perturbed.target.mask[static_cast<size_t>(c)])
                perturbed.target.rows(r, c) += rng.uniform(-100.0, 100.0);

    // identical flow draws for both variants
    Rng draw_a(911), draw_b(911);
    FlowSample fa = make_flow_sample(s, stats, draw_a);
    FlowSample fb = make_flow_sample(perturbed, stats, draw_b);

    BatchEval ea = mutual_imitation_loss(p, {fa});
    BatchEval eb = mutual_imitation_loss(p, {fb});
    CHECK(ea.loss.total == eb.loss.total);
    CHECK(params_equal(ea.grads, eb.grads));
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(41);
    for (int trial = 0; trial < 4; ++trial) {
        ModelConfig cfg = tiny_config(trial % 2 == 0 ? ModelConfig::Mode::flow
                                                     : ModelConfig::Mode::regression);
        cfg.cond_layers = trial < 2 ? 2 : 1;
        cfg.hidden_depth = 1 + trial % 3;
        PolicyParams p = init_policy(cfg, 100 + static_cast<uint64_t>(trial));
        auto batch = random_batch(cfg, rng, 2, 2);
        double err = grad_check(p, batch, 1e-6, 500 + static_cast<uint64_t>(trial), 120);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("grad_check reports zero at a planted optimum and rejects NaN") {
    ModelConfig cfg = tiny_config(ModelConfig::Mode::regression);
    PolicyParams p = init_policy(cfg, 8);
    Rng rng(43);
    NormStats stats;
    TrainingSample s = random_training_sample(cfg, rng, Embodiment::robot);
    FlowSample f = make_regression_sample(s, stats);
    std::vector<const FlowSample*> one{&f};
    auto cc = detail::cond_forward(p, one);
    auto vc = detail::vel_forward(p, one, cc.c);
    for (int r = 0; r < cfg.horizon; ++r) f.clean.row(r) = vc.out.col(r).transpose();

    SECTION("planted optimum") {
        double err = grad_check(p, {f}, 1e-6, 1, 50);
        CHECK(err < 1e-9);
    }
    SECTION("NaN weight is an error, not a silent pass") {
        p.vel_w[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(grad_check(p, {f}, 1e-6, 1, 50), NonFiniteLoss);
    }
}

TEST_CASE("integrate_flow with the planted field recovers the target in one step") {
    Rng rng(47);
    Eigen::MatrixXd z = Eigen::MatrixXd::Random(4, kUnifiedDims);
    Eigen::MatrixXd target = Eigen::MatrixXd::Random(4, kUnifiedDims);
    // constant field v = target - z: one Euler step from z lands exactly
    Eigen::MatrixXd field = target - z;
    Eigen::MatrixXd one = integrate_flow(
        [&](const Eigen::MatrixXd&, double) { return field; }, z, 1);
    CHECK((one - target).cwiseAbs().maxCoeff() < 1e-15);
    // and stays exact for any step count, the field being constant
    Eigen::MatrixXd many = integrate_flow(
        [&](const Eigen::MatrixXd&, double) { return field; }, z, 7);
    CHECK((many - target).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("training is deterministic and reduces the loss on toy data") {
    ModelConfig cfg = tiny_config();
    cfg.horizon = 4;
    ToyData data = toy_dataset(cfg, 3);
    REQUIRE(data.samples.size() > 20);

    OptimizerConfig opt;
    opt.learning_rate = 3e-3;
    opt.steps = 120;
    opt.batch_size = 8;
    opt.seed = 99;

    PolicyParams p1 = init_policy(cfg, 1234);
    AdamState s1 = make_adam_state(p1);
    auto rows1 = train(p1, data.samples, data.stats, opt, s1);

    PolicyParams p2 = init_policy(cfg, 1234);
    AdamState s2 = make_adam_state(p2);
    auto rows2 = train(p2, data.samples, data.stats, opt, s2);

    REQUIRE(rows1.size() == rows2.size());
    for (size_t i = 0; i < rows1.size(); ++i) {
        CHECK(rows1[i].total == rows2[i].total);
        CHECK(rows1[i].grad_norm == rows2[i].grad_norm);
    }
    CHECK(params_equal(p1, p2));

    // the objective should come down substantially even in a short run
    double head = 0, tail = 0;
    for (int i = 0; i < 10; ++i) {
        head += rows1[static_cast<size_t>(i)].total;
        tail += rows1[rows1.size() - 1 - static_cast<size_t>(i)].total;
    }
    CHECK(tail < 0.7 * head);
}

TEST_CASE("lr 0 with decay 0 leaves parameters bit-identical") {
    ModelConfig cfg = tiny_config();
    ToyData data = toy_dataset(cfg, 1);
    PolicyParams p = init_policy(cfg, 55);
    PolicyParams before = p;
    OptimizerConfig opt;
    opt.learning_rate = 0.0;
    opt.weight_decay = 0.0;
    opt.steps = 1;
    opt.batch_size = 4;
    AdamState st = make_adam_state(p);
    train(p, data.samples, data.stats, opt, st);
    CHECK(params_equal(p, before));
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run bit-exactly") {
    ModelConfig cfg = tiny_config();
    ToyData data = toy_dataset(cfg, 2);
    OptimizerConfig opt;
    opt.learning_rate = 1e-3;
    opt.steps = 40;
    opt.batch_size = 6;
    opt.seed = 7;

    PolicyParams full = init_policy(cfg, 77);
    AdamState full_state = make_adam_state(full);
    auto full_rows = train(full, data.samples, data.stats, opt, full_state);

    PolicyParams half = init_policy(cfg, 77);
    AdamState half_state = make_adam_state(half);
    OptimizerConfig first_half = opt;
    first_half.steps = 20;
    train(half, data.samples, data.stats, first_half, half_state);

    auto path = temp_file("resume.ckpt");
    NormStats stats = data.stats;
    save_checkpoint(path.string(), half, stats, &half_state);
    Checkpoint ck = load_checkpoint(path.string());
    REQUIRE(ck.has_adam);
    REQUIRE(ck.step == 20);

    auto resumed_rows = train(ck.params, data.samples, ck.stats, opt, ck.adam);
    REQUIRE(resumed_rows.size() == 20);
    for (size_t i = 0; i < resumed_rows.size(); ++i) {
        CHECK(resumed_rows[i].step == full_rows[20 + i].step);
        CHECK(resumed_rows[i].total == full_rows[20 + i].total);
        CHECK(resumed_rows[i].grad_norm == full_rows[20 + i].grad_norm);
    }
    CHECK(params_equal(ck.params, full));
}

TEST_CASE("ablation flag keeps l_r2h identically zero") {
    ModelConfig cfg = tiny_config();
    ToyData data = toy_dataset(cfg, 2);
    OptimizerConfig opt;
    opt.steps = 10;
    opt.batch_size = 8;
    opt.disable_r2h = true;
    PolicyParams p = init_policy(cfg, 3);
    AdamState st = make_adam_state(p);
    auto rows = train(p, data.samples, data.stats, opt, st);
    for (const auto& r : rows) CHECK(r.l_r2h == 0.0);
}

TEST_CASE("training aborts on non-finite loss") {
    ModelConfig cfg = tiny_config();
    ToyData data = toy_dataset(cfg, 1);
    PolicyParams p = init_policy(cfg, 4);
    // poison the output layer; inner layers would saturate through tanh
    p.vel_w.back()(0, 0) = std::numeric_limits<double>::infinity();
    OptimizerConfig opt;
    opt.steps = 1;
    opt.batch_size = 2;
    AdamState st = make_adam_state(p);
    CHECK_THROWS_AS(train(p, data.samples, data.stats, opt, st), NonFiniteLoss);
}

TEST_CASE("sample_actions is seed-deterministic and restores invariants") {
    ModelConfig cfg = tiny_config();
    PolicyParams p = init_policy(cfg, 9);
    NormStats stats;
    Observation obs;
    obs.instruction_id = 1;
    obs.scene = Eigen::VectorXd::Zero(cfg.scene_dim);
    obs.proprio = ActionVector::Zero();

    ActionChunk a = sample_actions(p, stats, obs, 8, 321);
    ActionChunk b = sample_actions(p, stats, obs, 8, 321);
    CHECK((a.rows - b.rows).cwiseAbs().maxCoeff() == 0.0);
    ActionChunk c = sample_actions(p, stats, obs, 8, 322);
    CHECK((a.rows - c.rows).cwiseAbs().maxCoeff() > 0.0);

    CHECK(a.rows.rows() == cfg.horizon);
    CHECK(a.rows.cols() == kUnifiedDims);
    for (int r = 0; r < a.rows.rows(); ++r) {
        UnifiedAction u = a.row_action(r);
        CHECK(std::abs(quat_norm(u.eef.left.orientation) - 1.0) < 1e-9);
        CHECK(std::abs(quat_norm(u.eef.right.orientation) - 1.0) < 1e-9);
        CHECK(u.robot.left_gripper >= 0.0);
        CHECK(u.robot.left_gripper <= 1.0);
        CHECK_NOTHROW(sixd_to_matrix(u.human.left_wrist.orientation));
    }
}

TEST_CASE("checkpoint round trip is bit-exact and validates shapes") {
    ModelConfig cfg = tiny_config();
    PolicyParams p = init_policy(cfg, 10);
    NormStats stats;
    stats.mean.setRandom();
    stats.std.setConstant(0.5);
    auto path = temp_file("roundtrip.ckpt");
    save_checkpoint(path.string(), p, stats);
    Checkpoint ck = load_checkpoint(path.string());
    CHECK(params_equal(ck.params, p));
    CHECK((ck.stats.mean - stats.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((ck.stats.std - stats.std).cwiseAbs().maxCoeff() == 0.0);
    CHECK_FALSE(ck.has_adam);

    ModelConfig other = cfg;
    other.hidden_width = cfg.hidden_width * 2;
    CHECK_THROWS_AS(require_compatible(other, ck.params.cfg), ShapeMismatch);
    CHECK_NOTHROW(require_compatible(cfg, ck.params.cfg));

    SECTION("corrupt magic") {
        std::ofstream os(path);
        os << "NOTAKPT 1\nend_header\n";
        os.close();
        CHECK_THROWS_AS(load_checkpoint(path.string()), BadMagic);
    }
    SECTION("future version") {
        std::ofstream os(path);
        os << "MIMICKPT 9\nend_header\n";
        os.close();
        CHECK_THROWS_AS(load_checkpoint(path.string()), VersionMismatch);
    }
}

TEST_CASE("euler step refinement monotonically improves a trained flow") {
    ModelConfig cfg = tiny_config();
    ToyData data = toy_dataset(cfg, 3);
    OptimizerConfig opt;
    opt.learning_rate = 3e-3;
    opt.steps = 250;
    opt.batch_size = 8;
    opt.seed = 13;
    PolicyParams p = init_policy(cfg, 2024);
    AdamState st = make_adam_state(p);
    train(p, data.samples, data.stats, opt, st);

    // reference: very fine integration from the same noise draw
    const TrainingSample& s = data.samples[data.samples.size() / 2];
    Observation obs{s.instruction_id, s.scene, s.proprio};
    Rng rng(777);
    Eigen::MatrixXd z(cfg.horizon, kUnifiedDims);
    for (int r = 0; r < z.rows(); ++r)
        for (int c = 0; c < z.cols(); ++c) z(r, c) = rng.normal();
    Eigen::MatrixXd ref = predict_normalized(p, data.stats, obs, z, 256);
    double prev = std::numeric_limits<double>::infinity();
    for (int n : {4, 8, 16}) {
        Eigen::MatrixXd pred = predict_normalized(p, data.stats, obs, z, n);
        double err = (pred - ref).norm();
        CHECK(err < prev);
        prev = err;
    }
}
