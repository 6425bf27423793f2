#pragma once

// Forget-mask crafting by gradient alignment: choose deletions whose
// induced parameter update points along the descent direction of the
// victim objective.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uu/attack.hpp"

namespace uu {

// Cosine similarity of `target` and `psi`; 0 if either norm is below 1e-12.
double alignment_objective(std::span<const double> target, std::span<const double> psi);

// Cosine between `target` and psi = basis^T w, with its gradient w.r.t. w.
// Scaling psi (e.g. by the unlearning step size) leaves both unchanged.
double alignment_value_grad(const Matrix& basis, std::span<const double> target,
                            std::span<const double> weights, std::vector<double>* grad);

// Rows: update direction contributed by each candidate, i.e. Psi for a
// one-hot weight divided by tau. First order: the candidate's loss gradient at
// each member (concatenated). Second order: (H + damping I)^-1 times it.
Matrix update_basis(const Estimator& est, const Dataset& train,
                    std::span<const std::size_t> candidates, UnlearnMethod method,
                    const PsiOptions& opts = {});

// Direction the unlearning update should follow: -grad of the total attack
// loss at the current parameters.
std::vector<double> attack_direction(const Estimator& est, const VictimState& victims,
                                     const AttackConfig& cfg);

// Alignment objective of a (possibly continuous) mask against the attack
// direction.
double alignment_for_mask(const Estimator& est, const Dataset& train, const ForgetMask& mask,
                          const VictimState& victims, const AttackConfig& cfg);

struct AscentOptions {
  std::size_t budget = 0;
  int restarts = 5;
  int steps = 200;
  double lr = 0.1;
  std::uint64_t seed = 0;
};

struct MaskResult {
  ForgetMask mask;
  double objective = 0.0;     // continuous objective of the kept restart
  int best_restart = 0;
  bool degenerate = false;    // zero gradient at every restart
  std::vector<std::string> warnings;
};

// Projected gradient ascent on the alignment objective from `restarts`
// uniform random starts; each step moves lr in weight units along the
// gradient normalized by its largest entry, then clips to [0, 1]. Keeps the
// restart with the highest final objective (lowest index on ties) and rounds.
MaskResult optimize_weights(const Matrix& basis, std::span<const double> target,
                            std::vector<std::size_t> candidates, const AscentOptions& opts);

AscentOptions ascent_options(const AttackConfig& cfg);

MaskResult optimize_mask(const Estimator& est, const Dataset& train,
                         std::span<const std::size_t> candidates, const VictimState& victims,
                         const AttackConfig& cfg);

// Uniform random subset of `budget` candidates.
MaskResult random_mask(std::span<const std::size_t> candidates, std::size_t budget,
                       std::uint64_t seed);

enum class LabelAttackKind { untargeted, targeted };

// Label-misclassification baseline: same alignment machinery but the
// direction increases the victims' cross-entropy against their current
// labels (untargeted) or decreases it against `target_labels` (targeted).
MaskResult label_attack_mask(const Estimator& est, const Dataset& train,
                             std::span<const std::size_t> candidates, const VictimState& victims,
                             const AttackConfig& cfg, LabelAttackKind kind,
                             std::span<const int> target_labels = {});

// Black-box crafting: optimize continuous weights against every surrogate
// (each with its own victim state), average them, round to the budget. The
// deployed model is never consulted.
MaskResult transfer_attack(std::span<const Estimator> surrogates, const Dataset& train,
                           std::span<const std::size_t> candidates, const Dataset& victims,
                           const Dataset& holdout, const AttackConfig& cfg);

// Text mask file: header line, then "<candidate_row> <weight> <bit>" per
// candidate.
void write_mask(const std::filesystem::path& path, const ForgetMask& mask);
ForgetMask read_mask(const std::filesystem::path& path);

}  // namespace uu
