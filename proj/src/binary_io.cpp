#include "mwpkd/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "mwpkd/error.hpp"

namespace mwpkd {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

void ByteWriter::u32(std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf_.append(b, 4);
}

void ByteWriter::f32(float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf_.append(b, 4);
}

void ByteWriter::f64(double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf_.append(b, 8);
}

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.append(s);
}

void ByteWriter::matrix_f32(const Eigen::MatrixXd& m) {
  u32(static_cast<std::uint32_t>(m.rows()));
  u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) f32(static_cast<float>(m(r, c)));
}

void ByteWriter::matrix_f32(const Eigen::MatrixXf& m) {
  u32(static_cast<std::uint32_t>(m.rows()));
  u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) f32(m(r, c));
}

void ByteReader::fail_at(const std::string& what) const {
  fail(ErrorKind::Format, what + " at byte offset " + std::to_string(pos_));
}

void ByteReader::need(std::size_t n, const char* what) const {
  if (data_.size() - pos_ < n) {
    fail_at(std::string("truncated input reading ") + what + " (need " + std::to_string(n) +
            " bytes, have " + std::to_string(data_.size() - pos_) + ")");
  }
}

std::uint8_t ByteReader::u8() {
  need(1, "u8");
  return static_cast<std::uint8_t>(data_[pos_++]);
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

float ByteReader::f32() {
  need(4, "f32");
  float v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

double ByteReader::f64() {
  need(8, "f64");
  double v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

std::string_view ByteReader::bytes(std::size_t n) {
  need(n, "bytes");
  auto s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::string ByteReader::str() {
  const auto n = u32();
  return std::string(bytes(n));
}

Eigen::MatrixXd ByteReader::matrix_f32() {
  const auto rows = u32();
  const auto cols = u32();
  const std::uint64_t count = std::uint64_t{rows} * cols;
  if (count * 4 > remaining()) need(static_cast<std::size_t>(count * 4), "matrix payload");
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = f32();
  return m;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void atomic_write(const std::filesystem::path& path, std::string_view contents) {
  std::random_device rd;
  auto tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      fail(ErrorKind::Io, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorKind::Io, "cannot rename into " + path.string());
  }
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace mwpkd
