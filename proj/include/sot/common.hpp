#pragma once

#include <Eigen/Dense>
#include <random>
#include <stdexcept>
#include <string>

namespace sot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;
using Rng = std::mt19937_64;

// Mixed into a training seed to derive the independent evaluation stream.
constexpr std::uint64_t kEvalSeedMix = 0x9E3779B97F4A7C15ULL;

// Invalid user input: bad config, malformed file, mismatched metadata.
// Maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure during a run (non-finite values, solver breakdown).
// Maps to CLI exit code 1.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace sot
