#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mimic/dataset.hpp"
#include "test_helpers.hpp"

using namespace mimic;
using namespace mimic::testing;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "mimic_dataset_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

bool actions_equal(const UnifiedAction& a, const UnifiedAction& b) {
    return (pack(a) - pack(b)).cwiseAbs().maxCoeff() == 0.0 && a.mask == b.mask;
}

} // namespace

TEST_CASE("generate_synthetic_demos reaches the sampled target") {
    RetargetConfig cfg = base_config();
    ReachTaskConfig task = test_task();
    auto demos = generate_synthetic_demos(task, cfg, Embodiment::robot, 1, 42);
    REQUIRE(demos.size() == 1);
    const auto& d = demos[0];
    REQUIRE(d.steps.size() == 20);
    Vec3 target_left = d.steps[0].scene.head<3>();
    // oracle: FK of the final labelled joints must sit at the sampled target
    Pose final_left = forward_kinematics(cfg.left_chain, d.steps.back().label.robot.left_q);
    CHECK((final_left.position - target_left).norm() < 1e-3);
    Vec3 target_right = d.steps[0].scene.tail<3>();
    Pose final_right = forward_kinematics(cfg.right_chain, d.steps.back().label.robot.right_q);
    CHECK((final_right.position - target_right).norm() < 1e-3);
    // gripper closed at the end, open at the start
    CHECK(d.steps[0].proprio.robot.left_gripper == 1.0);
    CHECK(d.steps.back().label.robot.left_gripper == 0.0);
}

TEST_CASE("generate_synthetic_demos is deterministic per seed") {
    RetargetConfig cfg = base_config();
    ReachTaskConfig task = test_task();
    auto a = generate_synthetic_demos(task, cfg, Embodiment::robot, 3, 7);
    auto b = generate_synthetic_demos(task, cfg, Embodiment::robot, 3, 7);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].steps.size() == b[i].steps.size());
        for (size_t t = 0; t < a[i].steps.size(); ++t) {
            CHECK(actions_equal(a[i].steps[t].label, b[i].steps[t].label));
            CHECK((a[i].steps[t].scene - b[i].steps[t].scene).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    // different embodiment draws an independent stream
    auto h = generate_synthetic_demos(task, cfg, Embodiment::human, 1, 7);
    CHECK((h[0].steps[0].scene - a[0].steps[0].scene).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("generate_synthetic_demos n = 0 yields an empty list") {
    RetargetConfig cfg = base_config();
    CHECK(generate_synthetic_demos(test_task(), cfg, Embodiment::robot, 0, 1).empty());
}

TEST_CASE("generate_synthetic_demos unreachable bounds throw TaskUnreachable") {
    RetargetConfig cfg = base_config();
    ReachTaskConfig task = test_task();
    task.target_min_left = Vec3(5, 5, 5);
    task.target_max_left = Vec3(6, 6, 6);
    CHECK_THROWS_AS(generate_synthetic_demos(task, cfg, Embodiment::robot, 1, 1), TaskUnreachable);
}

TEST_CASE("human demos carry native human labels only") {
    RetargetConfig cfg = base_config();
    auto demos = generate_synthetic_demos(test_task(), cfg, Embodiment::human, 1, 11);
    const auto& d = demos[0];
    CHECK(d.embodiment == Embodiment::human);
    CHECK(d.steps[0].label.mask == mask_human());
    CHECK_NOTHROW(sixd_to_matrix(d.steps[5].label.human.left_wrist.orientation));
}

TEST_CASE("augment_complementary fills human dims of robot demos") {
    RetargetConfig cfg = round_trip_config();
    auto demos = generate_synthetic_demos(test_task(), cfg, Embodiment::robot, 1, 21);
    Demonstration aug = augment_complementary(demos[0], cfg);
    CHECK(aug.augmented);
    for (size_t t = 0; t < aug.steps.size(); ++t) {
        const auto& label = aug.steps[t].label;
        CHECK(label.mask == mask_all());
        // native robot dims unchanged bit-exactly
        ActionVector before = pack(demos[0].steps[t].label);
        ActionVector after = pack(label);
        for (int i = kRobotOffset; i < kUnifiedDims; ++i) CHECK(before[i] == after[i]);
        // Eq.-3 oracle recomputed independently: thumb reference = R^m (eef)
        Pose expect_thumb = apply_transform(cfg.r_m, label.eef.left);
        Pose got = thumb_reference(label.human, Side::left, cfg.side_thumb_offset(Side::left));
        CHECK((got.position - expect_thumb.position).norm() < 1e-9);
    }
}

TEST_CASE("augment_complementary fills robot dims of human demos") {
    RetargetConfig cfg = round_trip_config();
    auto demos = generate_synthetic_demos(test_task(), cfg, Embodiment::human, 1, 22);
    Demonstration aug = augment_complementary(demos[0], cfg);
    CHECK(aug.augmented);
    int converged_steps = 0;
    for (size_t t = 0; t < aug.steps.size(); ++t) {
        const auto& label = aug.steps[t].label;
        ActionVector before = pack(demos[0].steps[t].label);
        ActionVector after = pack(label);
        for (int i = 0; i < kHumanDims; ++i) CHECK(before[i] == after[i]);
        if (label.mask == mask_all()) ++converged_steps;
        // soundness where joints were accepted: FK matches the commanded EEF
        if (label.mask[kRobotOffset]) {
            Pose fk = forward_kinematics(cfg.left_chain, label.robot.left_q);
            CHECK((fk.position - label.eef.left.position).norm() <= cfg.ik.pos_tol + 1e-12);
        }
    }
    CHECK(converged_steps == static_cast<int>(aug.steps.size()));
}

TEST_CASE("augment_complementary is idempotent") {
    RetargetConfig cfg = round_trip_config();
    auto demos = generate_synthetic_demos(test_task(), cfg, Embodiment::robot, 1, 23);
    Demonstration once = augment_complementary(demos[0], cfg);
    Demonstration twice = augment_complementary(once, cfg);
    REQUIRE(once.steps.size() == twice.steps.size());
    for (size_t t = 0; t < once.steps.size(); ++t)
        CHECK(actions_equal(once.steps[t].label, twice.steps[t].label));
}

TEST_CASE("augmentation masks out failed steps only") {
    RetargetConfig cfg = round_trip_config();
    cfg.ik.max_iterations = 40;
    auto demos = generate_synthetic_demos(test_task(), cfg, Embodiment::human, 1, 24);
    Demonstration d = demos[0];
    // corrupt one step so the mapped EEF is far outside the workspace
    size_t bad = 7;
    for (auto& tip : d.steps[bad].label.human.left_fingertips) tip += Vec3(30, 0, 0);
    d.steps[bad].label.human.left_wrist.position += Vec3(30, 0, 0);
    Demonstration aug = augment_complementary(d, cfg);
    CHECK_FALSE(aug.steps[bad].label.mask[kRobotOffset]);
    CHECK(aug.steps[bad].label.mask[kRobotOffset + 7]); // right side unaffected
    CHECK(aug.steps[bad - 1].label.mask[kRobotOffset]);
    CHECK(aug.steps[bad + 1].label.mask[kRobotOffset]);
}

TEST_CASE("chunk_samples counts and padding") {
    Demonstration d;
    d.id = 3;
    d.steps.resize(10);
    for (size_t t = 0; t < 10; ++t) {
        d.steps[t].scene = Eigen::VectorXd::Constant(6, static_cast<double>(t));
        d.steps[t].label.robot.left_q[0] = static_cast<double>(t);
        d.steps[t].label.mask = mask_robot_native();
        d.steps[t].proprio.mask = mask_robot_native();
    }

    SECTION("length 10, H = 4, stride 1 gives 10 samples, last three padded") {
        auto samples = chunk_samples(d, 4, 1);
        REQUIRE(samples.size() == 10);
        int padded = 0;
        for (const auto& s : samples)
            if (s.target.padded.back()) ++padded;
        CHECK(padded == 3);
        // padded rows repeat the final step
        const auto& last = samples.back();
        CHECK(last.target.rows(1, kRobotOffset) == 9.0);
        CHECK(last.target.padded[0] == 0);
        CHECK(last.target.padded[1] == 1);
    }
    SECTION("H = 1 never pads") {
        auto samples = chunk_samples(d, 1, 1);
        REQUIRE(samples.size() == 10);
        for (const auto& s : samples) CHECK(s.target.padded[0] == 0);
    }
    SECTION("stride = length gives one sample") {
        CHECK(chunk_samples(d, 4, 10).size() == 1);
    }
    SECTION("count formula ceil(len/stride) holds across random lengths") {
        Rng rng(99);
        for (int trial = 0; trial < 30; ++trial) {
            int len = 1 + static_cast<int>(rng.uniform_index(40));
            int stride = 1 + static_cast<int>(rng.uniform_index(10));
            int horizon = 1 + static_cast<int>(rng.uniform_index(8));
            Demonstration dd;
            dd.steps.resize(static_cast<size_t>(len));
            for (auto& s : dd.steps) s.scene = Eigen::VectorXd::Zero(6);
            auto samples = chunk_samples(dd, horizon, stride);
            CHECK(static_cast<int>(samples.size()) == (len + stride - 1) / stride);
        }
    }
    SECTION("invalid arguments") {
        CHECK_THROWS_AS(chunk_samples(d, 0, 1), ConfigError);
        CHECK_THROWS_AS(chunk_samples(d, 4, 0), ConfigError);
    }
}

TEST_CASE("compute_norm_stats oracle values") {
    Demonstration d;
    d.steps.resize(2);
    for (auto& s : d.steps) {
        s.scene = Eigen::VectorXd::Zero(6);
        s.label.mask = mask_robot_native();
    }
    // dim kRobotOffset (left q0): values -1 and 1 -> mean 0, population std 1
    d.steps[0].label.robot.left_q[0] = -1.0;
    d.steps[1].label.robot.left_q[0] = 1.0;
    // dim kRobotOffset+1: constant 4.2 -> std floored
    d.steps[0].label.robot.left_q[1] = 4.2;
    d.steps[1].label.robot.left_q[1] = 4.2;

    NormStats stats = compute_norm_stats({d});
    CHECK(stats.mean[kRobotOffset] == 0.0);
    CHECK(stats.std[kRobotOffset] == 1.0);
    CHECK(stats.mean[kRobotOffset + 1] == Catch::Approx(4.2));
    CHECK(stats.std[kRobotOffset + 1] == 1e-6);
    // fully masked dim gets the declared default
    CHECK(stats.mean[0] == 0.0);
    CHECK(stats.std[0] == 1.0);
}

TEST_CASE("dataset file round trip is lossless") {
    RetargetConfig cfg = base_config();
    auto demos = generate_synthetic_demos(test_task(), cfg, Embodiment::robot, 2, 31);
    auto human = generate_synthetic_demos(test_task(), cfg, Embodiment::human, 2, 31);
    for (auto& d : human) {
        d.id += 100;
        demos.push_back(d);
    }
    DatasetMeta meta;
    meta.horizon = 8;
    meta.instruction_ids = {0};
    auto path = temp_file("round_trip.bin");
    write_dataset(demos, meta, path.string());

    DatasetMeta back_meta;
    auto back = read_dataset(path.string(), &back_meta);
    CHECK(back_meta.horizon == 8);
    REQUIRE(back.size() == demos.size());
    for (size_t i = 0; i < demos.size(); ++i) {
        CHECK(back[i].id == demos[i].id);
        CHECK(back[i].embodiment == demos[i].embodiment);
        REQUIRE(back[i].steps.size() == demos[i].steps.size());
        for (size_t t = 0; t < demos[i].steps.size(); ++t) {
            CHECK(actions_equal(back[i].steps[t].label, demos[i].steps[t].label));
            CHECK(actions_equal(back[i].steps[t].proprio, demos[i].steps[t].proprio));
        }
    }

    // writing again is byte-identical
    auto path2 = temp_file("round_trip2.bin");
    write_dataset(back, back_meta, path2.string());
    CHECK(file_bytes(path) == file_bytes(path2));
}

TEST_CASE("dataset file error paths") {
    auto path = temp_file("bad.bin");

    SECTION("corrupted magic") {
        std::ofstream os(path);
        os << "NOTADATASET 1\nend_header\n";
        os.close();
        CHECK_THROWS_AS(read_dataset(path.string()), BadMagic);
    }
    SECTION("future version") {
        std::ofstream os(path);
        os << "MIMICDS 2\nend_header\n";
        os.close();
        CHECK_THROWS_AS(read_dataset(path.string()), VersionMismatch);
    }
    SECTION("truncated records") {
        RetargetConfig cfg = base_config();
        auto demos = generate_synthetic_demos(test_task(), cfg, Embodiment::robot, 1, 5);
        DatasetMeta meta;
        write_dataset(demos, meta, path.string());
        std::string bytes = file_bytes(path);
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        os.close();
        CHECK_THROWS_AS(read_dataset(path.string()), TruncatedFile);
    }
    SECTION("missing file") {
        CHECK_THROWS_AS(read_dataset("/nonexistent/nowhere.bin"), IoError);
    }
}

TEST_CASE("manifest lists demos and step counts") {
    RetargetConfig cfg = base_config();
    auto demos = generate_synthetic_demos(test_task(), cfg, Embodiment::robot, 2, 51);
    DatasetMeta meta;
    auto path = temp_file("manifest.txt");
    write_manifest(demos, meta, path.string());
    std::string text = file_bytes(path);
    CHECK(text.find("0 robot 0 20") != std::string::npos);
    CHECK(text.find("1 robot 0 20") != std::string::npos);
    CHECK(text.find("total_steps 40") != std::string::npos);
}
