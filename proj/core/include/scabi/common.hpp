#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace scabi {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLog2Pi = 1.83787706640934548356;

// Precondition failures: wrong dimensions, invalid specs, empty inputs.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Simulator produced a non-finite trajectory; the draw is rejected.
class SimulationRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Too many rejections or another unrecoverable simulation failure.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during optimization. `item` is the offending
// batch row when known, -1 otherwise.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long item = -1, int epoch = -1)
      : std::runtime_error(what), item_(item), epoch_(epoch) {}
  long item() const noexcept { return item_; }
  int epoch() const noexcept { return epoch_; }

 private:
  long item_;
  int epoch_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

// 64-bit FNV-1a, used for config hashes, file checksums and instance ids.
class Fnv1a {
 public:
  void update(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update(const Matrix& m) {
    const auto rows = static_cast<std::int64_t>(m.rows());
    const auto cols = static_cast<std::int64_t>(m.cols());
    update(&rows, sizeof rows);
    update(&cols, sizeof cols);
    update(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t value);

}  // namespace scabi
