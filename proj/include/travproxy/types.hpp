#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace travproxy {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Vec3 = Eigen::Vector3d;
// 3 x N, one point per column.
using Points = Eigen::Matrix<double, 3, Eigen::Dynamic>;

using Rng = std::mt19937_64;

// Binary class index used by the proxy bank and the losses. Positive means
// traversable.
enum class Class : int { Negative = 0, Positive = 1 };

inline constexpr Class other(Class c) {
  return c == Class::Positive ? Class::Negative : Class::Positive;
}
inline constexpr int index_of(Class c) { return static_cast<int>(c); }

// Training objective; also selects the segmentation rule at inference.
enum class TrainMode { Supervised, ProxyNoUnlabeled, ProxyNoReinit, Full };

inline bool uses_proxies(TrainMode m) { return m != TrainMode::Supervised; }

// Error categories map onto CLI exit codes (usage 1, data 2, numeric 3).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace travproxy
