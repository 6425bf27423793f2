#include "binio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "uu/errors.hpp"

namespace uu::binio {

void Writer::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void Writer::f64(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void Reader::fail(const std::string& msg) const {
  throw FormatError(what_ + ": " + msg, pos_);
}

void Reader::need(std::size_t n) {
  if (buf_.size() - pos_ < n) fail("truncated file");
}

void Reader::expect_magic(std::string_view magic) {
  if (buf_.size() - pos_ < magic.size() ||
      std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) != 0) {
    fail("bad magic, expected \"" + std::string(magic) + "\"");
  }
  pos_ += magic.size();
}

std::uint8_t Reader::u8() {
  need(1);
  return static_cast<std::uint8_t>(buf_[pos_++]);
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
  }
  pos_ += 4;
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

double Reader::f64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
  }
  pos_ += 8;
  return std::bit_cast<double>(v);
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

}  // namespace uu::binio
