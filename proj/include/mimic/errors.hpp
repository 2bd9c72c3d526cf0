#pragma once

#include <stdexcept>
#include <string>

namespace mimic {

// Exit-code taxonomy shared by the library and the CLI:
// 2 = configuration, 3 = file/io, 4 = numeric.
enum class ErrorCategory : int {
    config = 2,
    io = 3,
    numeric = 4,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const { return category_; }
    int exit_code() const { return static_cast<int>(category_); }

private:
    ErrorCategory category_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

// geometry
struct ZeroQuaternion : NumericError {
    ZeroQuaternion() : NumericError("quaternion norm below 1e-12, cannot normalize") {}
};
struct DegenerateSixD : NumericError {
    DegenerateSixD() : NumericError("6D orientation is degenerate (zero or parallel columns)") {}
};
struct NotARotation : NumericError {
    NotARotation() : NumericError("matrix is not orthonormal with determinant +1") {}
};

// kinematics
struct SeedOutOfLimits : ConfigError {
    SeedOutOfLimits() : ConfigError("IK seed violates joint limits") {}
};

// action space / retarget
struct BadLength : ConfigError {
    explicit BadLength(const std::string& what) : ConfigError(what) {}
};
struct EmptyTrajectory : IoError {
    EmptyTrajectory() : IoError("trajectory is empty") {}
};

// dataset
struct TaskUnreachable : NumericError {
    explicit TaskUnreachable(const std::string& what) : NumericError(what) {}
};
struct BadMagic : IoError {
    explicit BadMagic(const std::string& what) : IoError(what) {}
};
struct VersionMismatch : IoError {
    explicit VersionMismatch(const std::string& what) : IoError(what) {}
};
struct TruncatedFile : IoError {
    explicit TruncatedFile(const std::string& what) : IoError(what) {}
};

// policy
struct UnknownInstruction : ConfigError {
    explicit UnknownInstruction(const std::string& what) : ConfigError(what) {}
};
struct NonFiniteLoss : NumericError {
    explicit NonFiniteLoss(const std::string& what) : NumericError(what) {}
};
struct ShapeMismatch : ConfigError {
    explicit ShapeMismatch(const std::string& what) : ConfigError(what) {}
};

} // namespace mimic
