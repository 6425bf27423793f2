#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "uu/dataset.hpp"
#include "uu/estimator.hpp"
#include "uu/model.hpp"
#include "uu/train.hpp"

namespace uu {

// Sharded, isolated, sliced, aggregated training. Each shard trains its
// slices cumulatively, checkpointing after each one; unlearning retrains an
// affected shard from the checkpoint preceding its earliest touched slice.
struct ShardedModel {
  std::size_t shards = 0;
  std::size_t slices = 0;
  std::vector<std::size_t> arch;
  double dropout_rate = 0.0;
  std::uint64_t init_seed = 0;
  TrainConfig cfg;
  // members[s][r]: training rows of slice r in shard s, ascending.
  std::vector<std::vector<std::vector<std::size_t>>> members;
  // checkpoints[s][r]: shard s after training through slice r.
  std::vector<std::vector<ModelParams>> checkpoints;
  // Per training row: shard, slice and whether it has been unlearned.
  std::vector<std::uint32_t> shard_of;
  std::vector<std::uint32_t> slice_of;
  std::vector<std::uint8_t> removed;

  const ModelParams& shard_model(std::size_t s) const { return checkpoints[s].back(); }
};

// Hash-based assignment of row i: h = mix_seed(assign_seed, i),
// shard = h mod S, slice = (h / S) mod R.
ShardedModel sisa_train(const Dataset& data, std::size_t shards, std::size_t slices,
                        const std::vector<std::size_t>& arch, double dropout_rate,
                        std::uint64_t init_seed, const TrainConfig& cfg,
                        std::uint64_t assign_seed);

// Trains shard `s` from slice `from_slice` onward, given the checkpoints
// before it (`prior` holds at least from_slice entries). Exposed so callers
// can retrain a shard from scratch independently.
std::vector<ModelParams> sisa_train_shard(const Dataset& data,
                                          const std::vector<std::vector<std::size_t>>& slices,
                                          std::size_t s, const ShardedModel& layout,
                                          std::vector<ModelParams> prior, std::size_t from_slice);

ShardedModel sisa_unlearn(ShardedModel sm, const Dataset& data,
                          std::span<const std::size_t> forget_rows);

ProbVector sisa_predict(const ShardedModel& sm, std::span<const double> x);

// Layout: manifest.txt plus shard{i}/slice{j}.uulm.
void save_sharded(const std::filesystem::path& dir, const ShardedModel& sm);
ShardedModel load_sharded(const std::filesystem::path& dir);

}  // namespace uu
