#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "uu/estimator.hpp"
#include "uu/vec.hpp"

namespace uu {

enum class CalibratorKind { ts, ets, ir };
CalibratorKind parse_calibrator_kind(std::string_view tag);
std::string_view to_string(CalibratorKind kind);

// Nondecreasing step function: value[k] applies to scores in
// (upper[k-1], upper[k]]; scores above the last breakpoint take the last value.
struct IsotonicMap {
  std::vector<double> upper;
  std::vector<double> value;
  double operator()(double score) const;
  bool operator==(const IsotonicMap&) const = default;
};

// Pool-adjacent-violators fit of a nondecreasing map from scores to targets.
IsotonicMap fit_isotonic(std::span<const double> scores, std::span<const double> targets);

struct CalibratorParams {
  CalibratorKind kind = CalibratorKind::ts;
  double temperature = 1.0;
  std::array<double, 3> ets_weights{1.0, 0.0, 0.0};  // calibrated, raw, uniform
  std::vector<IsotonicMap> ir_maps;                   // one per class

  bool operator==(const CalibratorParams&) const = default;
};

// Mean negative log-likelihood of softmax(logits / T).
double temperature_nll(const Matrix& logits, std::span<const int> labels, double temperature);

// ts: golden-section search of T on [0.05, 20];
// ets: TS temperature then a 0.01 simplex grid over the mixture weights;
// ir: one-vs-rest PAV on softmax probabilities.
CalibratorParams fit_calibrator(CalibratorKind kind, const Matrix& logits,
                                std::span<const int> labels);

ProbVector apply_calibrator(const CalibratorParams& cal, std::span<const double> logits);

// "UUCAL" + u8 kind + payload (f64 little-endian).
std::vector<char> encode_calibrator(const CalibratorParams& cal);
CalibratorParams decode_calibrator(const std::vector<char>& bytes);
void save_calibrator(const std::filesystem::path& path, const CalibratorParams& cal);
CalibratorParams load_calibrator(const std::filesystem::path& path);

}  // namespace uu
