#include "pesl/bytes.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "pesl/errors.hpp"

namespace pesl {

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::matrix(const Matrix& m) {
  u32(static_cast<std::uint32_t>(m.rows()));
  u32(static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) f64(v);
}

void ByteReader::need(std::size_t n, const char* what) {
  if (remaining() < n) {
    throw DecodeError(std::string("truncated ") + what + ": need " + std::to_string(n) +
                          " bytes, have " + std::to_string(remaining()),
                      offset());
  }
}

std::uint8_t ByteReader::u8() {
  need(1, "u8");
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  need(n, "string");
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

Matrix ByteReader::matrix() {
  const std::size_t start = offset();
  const std::uint32_t rows = u32();
  const std::uint32_t cols = u32();
  if (rows == 0 || cols == 0) {
    throw DecodeError("matrix with zero dimension " + std::to_string(rows) + "x" +
                          std::to_string(cols),
                      start);
  }
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
  if (count > remaining() / 8) {
    throw DecodeError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " exceeds remaining payload",
                      offset());
  }
  std::vector<double> data(count);
  for (auto& v : data) v = f64();
  try {
    return Matrix(rows, cols, std::move(data));
  } catch (const DomainError&) {
    throw DecodeError("matrix holds non-finite values", start);
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace pesl
