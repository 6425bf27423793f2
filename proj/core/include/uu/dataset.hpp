#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "uu/vec.hpp"

namespace uu {

struct Dataset {
  Matrix features;  // n x d
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }
  std::span<const double> row(std::size_t i) const { return features.row(i); }

  // Throws on n == 0, label out of range, shape mismatch or non-finite feature.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;

  bool operator==(const Dataset&) const = default;
};

// Gaussian class clusters around unit-norm random means scaled by `spread`.
Dataset gen_blobs(std::size_t n, std::size_t d, std::size_t classes,
                  double spread, std::uint64_t seed);

struct SplitFractions {
  double train = 0.6;
  double holdout = 0.2;
  double test = 0.2;
};

// Index sets into the source dataset. Victims are carved out of the test
// share, so train/holdout/victims/test partition [0, n) and adversary is a
// subset of train.
struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> adversary;
  std::vector<std::size_t> holdout;
  std::vector<std::size_t> victims;
  std::vector<std::size_t> test;
};

Splits split(const Dataset& ds, const SplitFractions& fractions,
             double adversary_fraction, std::size_t victim_count,
             std::uint64_t seed);

// Positions of each element of `members` inside `container` (both index
// lists into the same dataset). Throws IndexError for a missing member.
std::vector<std::size_t> positions_in(std::span<const std::size_t> container,
                                      std::span<const std::size_t> members);

// "UUAD" binary format: magic, u32 version=1, u32 n, u32 d, u32 C,
// f32 features row-major, u32 labels; all little-endian.
std::vector<char> encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::vector<char>& bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

// CSV with header f0,...,f{d-1},label. Class count is max label + 1 unless
// `class_count` is given.
Dataset read_csv(std::istream& in, std::size_t class_count = 0);
Dataset read_csv(const std::filesystem::path& path, std::size_t class_count = 0);

}  // namespace uu
