#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace reenact {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

// Fixed dimensions of the audio-to-expression pipeline.
inline constexpr int kLogitWidth = 29;
inline constexpr int kWindowLength = 16;
inline constexpr int kLogitRateHz = 50;
inline constexpr int kLogitHopMs = 20;
inline constexpr int kCodeDim = 32;
inline constexpr int kExpressionDim = 76;
inline constexpr int kShapeDim = 100;
inline constexpr int kFilterTaps = 8;
inline constexpr double kVideoFps = 25.0;

/// Thrown when an argument violates a documented precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a file does not follow its container format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a checkpoint's architecture descriptor does not match.
class IncompatibleCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when training produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, int epoch, int batch)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_;
  int batch_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidInput(message);
}

/// A learnable tensor with its accumulated gradient.
template <typename Scalar>
struct Param {
  std::string name;
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;

  Param() = default;
  Param(std::string n, Index rows, Index cols)
      : name(std::move(n)), value(MatrixX<Scalar>::Zero(rows, cols)), grad(MatrixX<Scalar>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

}  // namespace reenact
