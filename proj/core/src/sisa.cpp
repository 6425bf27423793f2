#include "uu/sisa.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "uu/checkpoint.hpp"
#include "uu/errors.hpp"
#include "uu/rng.hpp"

namespace uu {

std::vector<ModelParams> sisa_train_shard(const Dataset& data,
                                          const std::vector<std::vector<std::size_t>>& slices,
                                          std::size_t s, const ShardedModel& layout,
                                          std::vector<ModelParams> prior, std::size_t from_slice) {
  prior.resize(from_slice);
  ModelParams current = from_slice == 0
                            ? init_model(layout.arch, layout.dropout_rate, mix_seed(layout.init_seed, s))
                            : prior.back();
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < from_slice; ++r) rows.insert(rows.end(), slices[r].begin(), slices[r].end());
  for (std::size_t r = from_slice; r < slices.size(); ++r) {
    rows.insert(rows.end(), slices[r].begin(), slices[r].end());
    if (!rows.empty()) {
      TrainConfig cfg = layout.cfg;
      cfg.seed = mix_seed(layout.cfg.seed, s * slices.size() + r);
      current = train_from(std::move(current), data, rows, cfg);
    }
    prior.push_back(current);
  }
  return prior;
}

ShardedModel sisa_train(const Dataset& data, std::size_t shards, std::size_t slices,
                        const std::vector<std::size_t>& arch, double dropout_rate,
                        std::uint64_t init_seed, const TrainConfig& cfg,
                        std::uint64_t assign_seed) {
  if (shards < 1 || slices < 1) throw ConfigError("SISA needs at least one shard and slice");
  if (shards * slices > data.size()) throw ConfigError("SISA needs shards * slices <= n");
  cfg.validate();
  ShardedModel sm;
  sm.shards = shards;
  sm.slices = slices;
  sm.arch = arch;
  sm.dropout_rate = dropout_rate;
  sm.init_seed = init_seed;
  sm.cfg = cfg;
  sm.members.assign(shards, std::vector<std::vector<std::size_t>>(slices));
  sm.shard_of.resize(data.size());
  sm.slice_of.resize(data.size());
  sm.removed.assign(data.size(), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint64_t h = mix_seed(assign_seed, i);
    const std::size_t s = h % shards;
    const std::size_t r = (h / shards) % slices;
    sm.shard_of[i] = static_cast<std::uint32_t>(s);
    sm.slice_of[i] = static_cast<std::uint32_t>(r);
    sm.members[s][r].push_back(i);
  }
  sm.checkpoints.resize(shards);
  for (std::size_t s = 0; s < shards; ++s) {
    sm.checkpoints[s] = sisa_train_shard(data, sm.members[s], s, sm, {}, 0);
  }
  return sm;
}

ShardedModel sisa_unlearn(ShardedModel sm, const Dataset& data,
                          std::span<const std::size_t> forget_rows) {
  std::vector<std::size_t> earliest(sm.shards, sm.slices);
  for (std::size_t i : forget_rows) {
    if (i >= sm.removed.size() || sm.removed[i]) {
      throw IndexError("SISA: row " + std::to_string(i) + " is not in the training set");
    }
    const std::size_t s = sm.shard_of[i];
    const std::size_t r = sm.slice_of[i];
    auto& slice = sm.members[s][r];
    slice.erase(std::find(slice.begin(), slice.end(), i));
    sm.removed[i] = 1;
    earliest[s] = std::min(earliest[s], r);
  }
  for (std::size_t s = 0; s < sm.shards; ++s) {
    if (earliest[s] == sm.slices) continue;
    sm.checkpoints[s] = sisa_train_shard(data, sm.members[s], s, sm, std::move(sm.checkpoints[s]),
                                         earliest[s]);
  }
  return sm;
}

ProbVector sisa_predict(const ShardedModel& sm, std::span<const double> x) {
  std::vector<double> acc(sm.arch.back(), 0.0);
  const double w = 1.0 / static_cast<double>(sm.shards);
  for (std::size_t s = 0; s < sm.shards; ++s) {
    auto p = softmax(forward(sm.shard_model(s), x));
    axpy(w, p, acc);
  }
  return ProbVector(std::move(acc));
}

void save_sharded(const std::filesystem::path& dir, const ShardedModel& sm) {
  std::filesystem::create_directories(dir);
  std::ofstream man(dir / "manifest.txt");
  if (!man) throw Error("cannot write SISA manifest in " + dir.string());
  man.precision(17);
  man << "shards " << sm.shards << "\nslices " << sm.slices << "\narch";
  for (std::size_t w : sm.arch) man << ' ' << w;
  man << "\ndropout_rate " << sm.dropout_rate << "\ninit_seed " << sm.init_seed
      << "\nepochs " << sm.cfg.epochs << "\nbatch_size " << sm.cfg.batch_size
      << "\nlearning_rate " << sm.cfg.learning_rate << "\nseed " << sm.cfg.seed
      << "\nweight_decay " << sm.cfg.weight_decay << "\nrows " << sm.shard_of.size() << '\n';
  for (std::size_t i = 0; i < sm.shard_of.size(); ++i) {
    man << i << ' ' << sm.shard_of[i] << ' ' << sm.slice_of[i] << ' '
        << static_cast<int>(sm.removed[i]) << '\n';
  }
  for (std::size_t s = 0; s < sm.shards; ++s) {
    const auto sd = dir / ("shard" + std::to_string(s));
    std::filesystem::create_directories(sd);
    for (std::size_t r = 0; r < sm.slices; ++r) {
      save_model(sd / ("slice" + std::to_string(r) + ".uulm"), sm.checkpoints[s][r]);
    }
  }
}

ShardedModel load_sharded(const std::filesystem::path& dir) {
  std::ifstream man(dir / "manifest.txt");
  if (!man) throw Error("cannot read SISA manifest in " + dir.string());
  ShardedModel sm;
  std::string key;
  std::size_t rows = 0;
  auto expect = [&](const char* k) {
    if (!(man >> key) || key != k) throw ConfigError(std::string("SISA manifest: expected '") + k + "'");
  };
  expect("shards");
  man >> sm.shards;
  expect("slices");
  man >> sm.slices;
  expect("arch");
  std::string line;
  std::getline(man, line);
  std::istringstream widths(line);
  for (std::size_t w; widths >> w;) sm.arch.push_back(w);
  expect("dropout_rate");
  man >> sm.dropout_rate;
  expect("init_seed");
  man >> sm.init_seed;
  expect("epochs");
  man >> sm.cfg.epochs;
  expect("batch_size");
  man >> sm.cfg.batch_size;
  expect("learning_rate");
  man >> sm.cfg.learning_rate;
  expect("seed");
  man >> sm.cfg.seed;
  expect("weight_decay");
  man >> sm.cfg.weight_decay;
  expect("rows");
  man >> rows;
  sm.shard_of.resize(rows);
  sm.slice_of.resize(rows);
  sm.removed.resize(rows);
  sm.members.assign(sm.shards, std::vector<std::vector<std::size_t>>(sm.slices));
  for (std::size_t k = 0; k < rows; ++k) {
    std::size_t i, s, r;
    int gone;
    if (!(man >> i >> s >> r >> gone) || i != k || s >= sm.shards || r >= sm.slices) {
      throw ConfigError("SISA manifest: bad assignment line " + std::to_string(k));
    }
    sm.shard_of[i] = static_cast<std::uint32_t>(s);
    sm.slice_of[i] = static_cast<std::uint32_t>(r);
    sm.removed[i] = static_cast<std::uint8_t>(gone != 0);
    if (!gone) sm.members[s][r].push_back(i);
  }
  sm.checkpoints.resize(sm.shards);
  for (std::size_t s = 0; s < sm.shards; ++s) {
    for (std::size_t r = 0; r < sm.slices; ++r) {
      auto m = load_model(dir / ("shard" + std::to_string(s)) / ("slice" + std::to_string(r) + ".uulm"));
      m.dropout_rate = sm.dropout_rate;
      sm.checkpoints[s].push_back(std::move(m));
    }
  }
  return sm;
}

}  // namespace uu
