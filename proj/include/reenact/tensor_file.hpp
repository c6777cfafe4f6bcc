#pragma once

#include "reenact/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace reenact {

/// Versioned container of named float32 matrices plus a JSON descriptor.
///
/// Layout (little-endian): "PTNS", u32 version, string descriptor (JSON),
/// u32 tensor_count, then per tensor: string name, u32 rows, u32 cols,
/// rows*cols float32 in row-major order. Tensors keep insertion order so
/// identical contents serialize to identical bytes.
class TensorFile {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json descriptor = nlohmann::json::object();

  void put(const std::string& name, const MatrixX<float>& tensor);
  template <typename Scalar>
  void put_cast(const std::string& name, const MatrixX<Scalar>& tensor) {
    put(name, tensor.template cast<float>());
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  /// Throws IncompatibleCheckpoint when missing or when the shape differs from rows x cols (-1 = any).
  const MatrixX<float>& get(const std::string& name, Index rows = -1, Index cols = -1) const;
  const std::vector<std::pair<std::string, MatrixX<float>>>& tensors() const { return tensors_; }

  void save(const std::filesystem::path& path) const;
  static TensorFile load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, MatrixX<float>>> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Stores every parameter value under its name.
template <typename Scalar>
void put_params(TensorFile& file, const std::vector<Param<Scalar>*>& params, const std::string& prefix = "") {
  for (const auto* p : params) file.put_cast(prefix + p->name, p->value);
}

/// Restores parameter values by name, validating shapes.
template <typename Scalar>
void get_params(const TensorFile& file, const std::vector<Param<Scalar>*>& params, const std::string& prefix = "") {
  for (auto* p : params) {
    p->value = file.get(prefix + p->name, p->value.rows(), p->value.cols()).template cast<Scalar>();
    p->zero_grad();
  }
}

}  // namespace reenact
