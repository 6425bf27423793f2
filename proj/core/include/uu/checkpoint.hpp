#pragma once

#include <filesystem>
#include <vector>

#include "uu/model.hpp"

namespace uu {

// "UULM" checkpoint: magic, u32 version=1, u32 width count, u32 widths...,
// u8 activation tag, f32 params; all little-endian. The dropout rate is not
// stored; decoded models carry dropout_rate = 0.
std::vector<char> encode_model(const ModelParams& model);
ModelParams decode_model(const std::vector<char>& bytes);
void save_model(const std::filesystem::path& path, const ModelParams& model);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace uu
