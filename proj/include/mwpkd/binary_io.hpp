#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace mwpkd {

// Little-endian append-only byte buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view s) { buf_.append(s); }
  void str(std::string_view s);  // u32 length prefix
  // rows u32, cols u32, row-major f32 payload
  void matrix_f32(const Eigen::MatrixXd& m);
  void matrix_f32(const Eigen::MatrixXf& m);

  const std::string& data() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  std::string buf_;
};

// Bounds-checked little-endian reader. Every failure is a FormatError naming
// the byte offset at which the read was attempted.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  float f32();
  double f64();
  std::string_view bytes(std::size_t n);
  std::string str();
  Eigen::MatrixXd matrix_f32();

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  [[noreturn]] void fail_at(const std::string& what) const;

 private:
  void need(std::size_t n, const char* what) const;

  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over the target, so readers never
// observe a partial file.
void atomic_write(const std::filesystem::path& path, std::string_view contents);

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace mwpkd
