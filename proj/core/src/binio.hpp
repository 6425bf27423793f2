#pragma once

// Little-endian byte encoding shared by the binary file formats.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace uu::binio {

class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void f32(float v);
  void f64(double v);
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::string what)
      : buf_(buf), what_(std::move(what)) {}
  // Throws FormatError unless the next bytes equal `magic`.
  void expect_magic(std::string_view magic);
  std::uint8_t u8();
  std::uint32_t u32();
  float f32();
  double f64();
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& msg) const;

 private:
  void need(std::size_t n);
  const std::vector<char>& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<char>& data);

}  // namespace uu::binio
