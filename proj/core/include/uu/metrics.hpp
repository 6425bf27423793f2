#pragma once

#include <span>
#include <vector>

#include "uu/estimator.hpp"

namespace uu {

// Top-label calibration error with equal-width bins. Bins tile
// [1/C, 1], the range a top-label confidence can take; empty bins add 0.
double ece(std::span<const ProbVector> probs, std::span<const int> labels, int bins = 15);

// Equal-mass bins over the stably sorted confidences. Samples with equal
// confidence always share a bin (the bin of their first occurrence).
double ace(std::span<const ProbVector> probs, std::span<const int> labels, int bins = 15);

double brier(std::span<const ProbVector> probs, std::span<const int> labels);

double top_label_accuracy(std::span<const ProbVector> probs, std::span<const int> labels);

double label_preservation(std::span<const int> before, std::span<const int> after);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;
  double confidence = 0.0;
};

// Per-bin statistics of the equal-width binning used by ece().
std::vector<ReliabilityBin> reliability_bins(std::span<const ProbVector> probs,
                                             std::span<const int> labels, int bins = 15);

struct Report {
  double ece = 0.0;
  double ace = 0.0;
  double brier = 0.0;
  double accuracy = 0.0;
  double coverage = 0.0;
  double avg_set_size = 0.0;
  double label_preservation = 1.0;
};

}  // namespace uu
