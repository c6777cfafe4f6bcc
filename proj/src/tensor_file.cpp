#include "reenact/tensor_file.hpp"

#include "reenact/binary_io.hpp"

#include <fstream>

namespace reenact {

void TensorFile::put(const std::string& name, const MatrixX<float>& tensor) {
  if (auto it = index_.find(name); it != index_.end()) {
    tensors_[it->second].second = tensor;
    return;
  }
  index_[name] = tensors_.size();
  tensors_.emplace_back(name, tensor);
}

const MatrixX<float>& TensorFile::get(const std::string& name, Index rows, Index cols) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw IncompatibleCheckpoint("checkpoint has no tensor '" + name + "'");
  const auto& t = tensors_[it->second].second;
  if ((rows >= 0 && t.rows() != rows) || (cols >= 0 && t.cols() != cols)) {
    throw IncompatibleCheckpoint("tensor '" + name + "' has shape " + std::to_string(t.rows()) + "x" +
                                 std::to_string(t.cols()) + ", expected " + std::to_string(rows) + "x" +
                                 std::to_string(cols));
  }
  return t;
}

void TensorFile::save(const std::filesystem::path& path) const {
  io::write_atomically(path, [&](std::ostream& out) {
    io::Writer w(out);
    w.magic("PTNS");
    w.u32(kVersion);
    w.string(descriptor.dump());
    w.u32(static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& [name, t] : tensors_) {
      w.string(name);
      w.u32(static_cast<std::uint32_t>(t.rows()));
      w.u32(static_cast<std::uint32_t>(t.cols()));
      for (Index r = 0; r < t.rows(); ++r)
        for (Index c = 0; c < t.cols(); ++c) w.f32(t(r, c));
    }
  });
}

TensorFile TensorFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  io::Reader r(in, path.string());
  r.expect_magic("PTNS");
  if (const auto version = r.u32(); version != kVersion) r.fail("unsupported version " + std::to_string(version));
  TensorFile file;
  try {
    file.descriptor = nlohmann::json::parse(r.string());
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad descriptor: ") + e.what());
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.string(4096);
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 31)) r.fail("tensor '" + name + "' too large");
    MatrixX<float> t(rows, cols);
    for (Index a = 0; a < t.rows(); ++a)
      for (Index b = 0; b < t.cols(); ++b) t(a, b) = r.f32();
    if (file.contains(name)) r.fail("duplicate tensor '" + name + "'");
    file.put(name, t);
  }
  return file;
}

}  // namespace reenact
