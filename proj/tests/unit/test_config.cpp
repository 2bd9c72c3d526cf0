#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "mimic/config.hpp"
#include "test_helpers.hpp"

using namespace mimic;

namespace {

std::filesystem::path write_temp_json(const std::string& name, const std::string& text) {
    auto dir = std::filesystem::temp_directory_path() / "mimic_config_tests";
    std::filesystem::create_directories(dir);
    auto path = dir / name;
    std::ofstream os(path, std::ios::trunc);
    os << text;
    return path;
}

} // namespace

TEST_CASE("minimal config fills defaults") {
    auto path = write_temp_json("minimal.json", R"({"seed": 9})");
    ExperimentConfig cfg = load_experiment_config(path.string());
    CHECK(cfg.seed == 9);
    CHECK(cfg.dataset.horizon == 16);
    CHECK(cfg.model.horizon == 16);
    CHECK(cfg.model.scene_dim == 6);
    CHECK(cfg.optimizer.learning_rate == 1e-4);
    CHECK(cfg.optimizer.weight_decay == 0.01);
    CHECK(cfg.optimizer.warmup_fraction == 0.02);
    CHECK(cfg.eval.execute_rows == 4); // horizon / 4
    CHECK(cfg.model.mode == ModelConfig::Mode::flow);
    // default bilateral bases
    CHECK(cfg.retarget.left_chain.base_frame.position.y() == Catch::Approx(0.18));
    CHECK(cfg.retarget.right_chain.base_frame.position.y() == Catch::Approx(-0.18));
    // initial EEF agrees with the home FK
    Pose home = forward_kinematics(cfg.retarget.left_chain, cfg.task.home_left);
    CHECK((cfg.retarget.initial_eef.left.position - home.position).norm() < 1e-12);
}

TEST_CASE("missing seed reports the field path") {
    auto path = write_temp_json("noseed.json", R"({"paths": {}})");
    try {
        load_experiment_config(path.string());
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("seed") != std::string::npos);
    }
}

TEST_CASE("config errors carry exit-code categories") {
    auto path = write_temp_json("badjson.json", "{nope");
    try {
        load_experiment_config(path.string());
        FAIL("expected ConfigError");
    } catch (const Error& e) {
        CHECK(e.exit_code() == 2);
    }
    try {
        load_experiment_config("/nonexistent/config.json");
        FAIL("expected IoError");
    } catch (const Error& e) {
        CHECK(e.exit_code() == 3);
    }
}

TEST_CASE("set-style overrides reach nested fields") {
    auto path = write_temp_json("base.json", R"({"seed": 1})");
    ExperimentConfig cfg = load_experiment_config(
        path.string(), {"optimizer.learning_rate=0.003", "dataset.horizon=8", "model.mode=regression"});
    CHECK(cfg.optimizer.learning_rate == 0.003);
    CHECK(cfg.dataset.horizon == 8);
    CHECK(cfg.model.horizon == 8);
    CHECK(cfg.model.mode == ModelConfig::Mode::regression);

    CHECK_THROWS_AS(load_experiment_config(path.string(), {"oops"}), ConfigError);
}

TEST_CASE("frame transforms parse as 12-number row-major arrays") {
    auto path = write_temp_json("transform.json", R"({
        "seed": 1,
        "retarget": {
            "r_m": [0, -1, 0, 1, 0, 0, 0, 0, 1, 0.1, -0.05, 0.3],
            "r_h_is_inverse_of_r_m": true
        }
    })");
    ExperimentConfig cfg = load_experiment_config(path.string());
    CHECK(cfg.retarget.r_m.linear(0, 1) == -1.0);
    CHECK(cfg.retarget.r_m.translation.z() == 0.3);
    // r_h is the inverse
    Mat3 prod = cfg.retarget.r_h.linear * cfg.retarget.r_m.linear;
    CHECK((prod - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("chain specs accept presets, inline documents, and files") {
    SECTION("preset") {
        auto path = write_temp_json("preset.json", R"({"seed": 1, "chains": {"left": "arm_b"}})");
        ExperimentConfig cfg = load_experiment_config(path.string());
        Pose a = forward_kinematics(preset_chain("arm_b"), JointVector::Zero());
        KinematicChain left = cfg.retarget.left_chain;
        left.base_frame = Pose{};
        Pose b = forward_kinematics(left, JointVector::Zero());
        CHECK((a.position - b.position).norm() < 1e-12);
    }
    SECTION("inline document") {
        auto path = write_temp_json("inline.json", R"({
            "seed": 1,
            "chains": {"left": {
                "base": [0, 0, 0, 1, 0, 0, 0],
                "tool": [0, 0, 0.1, 1, 0, 0, 0],
                "joints": [
                    {"axis": [0,0,1], "offset": [0,0,0.1,1,0,0,0], "limits": [-3,3]},
                    {"axis": [0,1,0], "offset": [0,0,0.1,1,0,0,0], "limits": [-2,2]},
                    {"axis": [0,1,0], "offset": [0,0,0.3,1,0,0,0], "limits": [-2,2]},
                    {"axis": [0,0,1], "offset": [0,0,0.2,1,0,0,0], "limits": [-3,3]},
                    {"axis": [0,1,0], "offset": [0,0,0.1,1,0,0,0], "limits": [-2,2]},
                    {"axis": [0,0,1], "offset": [0,0,0.1,1,0,0,0], "limits": [-3,3]}
                ]
            }}
        })");
        ExperimentConfig cfg = load_experiment_config(path.string());
        KinematicChain left = cfg.retarget.left_chain;
        left.base_frame = Pose{};
        Pose p = forward_kinematics(left, JointVector::Zero());
        CHECK(p.position.z() == Catch::Approx(1.0));
    }
    SECTION("chain file") {
        auto chain_path = write_temp_json("chain_doc.json", R"({
            "joints": [
                {"axis": [0,0,1], "offset": [0,0,0.2,1,0,0,0], "limits": [-3,3]},
                {"axis": [0,1,0], "offset": [0,0,0.2,1,0,0,0], "limits": [-2,2]},
                {"axis": [0,1,0], "offset": [0,0,0.2,1,0,0,0], "limits": [-2,2]},
                {"axis": [0,0,1], "offset": [0,0,0.2,1,0,0,0], "limits": [-3,3]},
                {"axis": [0,1,0], "offset": [0,0,0.2,1,0,0,0], "limits": [-2,2]},
                {"axis": [0,0,1], "offset": [0,0,0.2,1,0,0,0], "limits": [-3,3]}
            ]
        })");
        auto path = write_temp_json("chainfile.json", std::string(R"({"seed": 1, "chains": {"right": ")") +
                                                          chain_path.string() + R"("}})");
        ExperimentConfig cfg = load_experiment_config(path.string());
        KinematicChain right = cfg.retarget.right_chain;
        right.base_frame = Pose{};
        CHECK(forward_kinematics(right, JointVector::Zero()).position.z() == Catch::Approx(1.2));
    }
    SECTION("bad chain errors") {
        auto path = write_temp_json("badchain.json", R"({"seed": 1, "chains": {"left": "arm_zzz"}})");
        CHECK_THROWS_AS(load_experiment_config(path.string()), ConfigError);
    }
}

TEST_CASE("gripper calibration options") {
    SECTION("explicit pair") {
        auto path = write_temp_json("cal.json",
                                    R"({"seed": 1, "retarget": {"gripper_calibration": [0.02, 0.06]}})");
        ExperimentConfig cfg = load_experiment_config(path.string());
        CHECK(cfg.retarget.gripper_min_dist == 0.02);
        CHECK(cfg.retarget.gripper_max_dist == 0.06);
    }
    SECTION("derived from fingers") {
        auto path = write_temp_json("cal2.json",
                                    R"({"seed": 1, "retarget": {"gripper_calibration": "from_fingers"}})");
        ExperimentConfig cfg = load_experiment_config(path.string());
        auto cal = gripper_calibration_from_fingers(cfg.retarget.fingers);
        CHECK(cfg.retarget.gripper_min_dist == cal.first);
        CHECK(cfg.retarget.gripper_max_dist == cal.second);
    }
}

TEST_CASE("environment seed override") {
    auto path = write_temp_json("envseed.json", R"({"seed": 5})");
    setenv("MIMIC_SEED", "123", 1);
    ExperimentConfig cfg = load_experiment_config(path.string());
    unsetenv("MIMIC_SEED");
    CHECK(cfg.seed == 123);
}
