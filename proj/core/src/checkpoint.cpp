#include "uu/checkpoint.hpp"

#include "binio.hpp"
#include "uu/errors.hpp"

namespace uu {

namespace {
constexpr std::uint32_t kModelVersion = 1;
}

std::vector<char> encode_model(const ModelParams& model) {
  model.validate();
  binio::Writer w;
  w.bytes("UULM");
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.arch.size()));
  for (std::size_t width : model.arch) w.u32(static_cast<std::uint32_t>(width));
  w.u8(static_cast<std::uint8_t>(model.activation));
  for (double v : model.params) w.f32(static_cast<float>(v));
  return w.buffer();
}

ModelParams decode_model(const std::vector<char>& bytes) {
  binio::Reader r(bytes, "model checkpoint");
  r.expect_magic("UULM");
  if (r.u32() != kModelVersion) r.fail("unsupported checkpoint version");
  const std::uint32_t count = r.u32();
  if (count < 3 || count > 64) r.fail("implausible layer count");
  ModelParams m;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t w = r.u32();
    if (w == 0) r.fail("zero layer width");
    m.arch.push_back(w);
  }
  const std::uint8_t act = r.u8();
  if (act != static_cast<std::uint8_t>(Activation::relu)) r.fail("unknown activation tag");
  m.activation = Activation::relu;
  m.params.resize(param_count(m.arch));
  for (double& v : m.params) v = static_cast<double>(r.f32());
  if (!r.at_end()) r.fail("trailing bytes");
  return m;
}

void save_model(const std::filesystem::path& path, const ModelParams& model) {
  binio::write_file(path, encode_model(model));
}

ModelParams load_model(const std::filesystem::path& path) {
  return decode_model(binio::read_file(path));
}

}  // namespace uu
