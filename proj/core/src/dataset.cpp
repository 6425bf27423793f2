#include "uu/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>

#include "binio.hpp"
#include "uu/errors.hpp"
#include "uu/rng.hpp"

namespace uu {

namespace {
constexpr std::uint32_t kDatasetVersion = 1;
}

void Dataset::validate() const {
  if (labels.empty()) throw EmptyInputError("dataset has no samples");
  if (features.rows != labels.size() ||
      features.data.size() != features.rows * features.cols) {
    throw ShapeError("dataset feature/label shape mismatch");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(class_count) + ")");
    }
  }
  for (double v : features.data) {
    if (!std::isfinite(v)) throw ShapeError("non-finite feature value");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.class_count = class_count;
  out.features = Matrix(indices.size(), dim());
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= size()) throw IndexError("subset index out of range");
    auto src = row(i);
    std::copy(src.begin(), src.end(), out.features.row(k).begin());
    out.labels.push_back(labels[i]);
  }
  return out;
}

Dataset gen_blobs(std::size_t n, std::size_t d, std::size_t classes,
                  double spread, std::uint64_t seed) {
  if (d < 1) throw ConfigError("gen_blobs: d must be >= 1");
  if (classes < 1 || n < classes) throw ConfigError("gen_blobs: need n >= classes >= 1");
  if (!(spread > 0.0)) throw ConfigError("gen_blobs: spread must be > 0");

  Rng rng(seed);
  Matrix means(classes, d);
  for (std::size_t c = 0; c < classes; ++c) {
    auto m = means.row(c);
    for (double& v : m) v = rng.normal();
    const double nrm = norm2(m);
    for (double& v : m) v = v / nrm * spread;
  }

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  rng.shuffle(std::span<int>(labels));

  Dataset ds;
  ds.class_count = classes;
  ds.features = Matrix(n, d);
  ds.labels = std::move(labels);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = ds.features.row(i);
    auto m = means.row(static_cast<std::size_t>(ds.labels[i]));
    for (std::size_t j = 0; j < d; ++j) x[j] = m[j] + rng.normal();
  }
  return ds;
}

Splits split(const Dataset& ds, const SplitFractions& fr,
             double adversary_fraction, std::size_t victim_count,
             std::uint64_t seed) {
  if (fr.train < 0 || fr.holdout < 0 || fr.test < 0 ||
      std::abs(fr.train + fr.holdout + fr.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  if (adversary_fraction < 0.0 || adversary_fraction > 1.0) {
    throw ConfigError("adversary_fraction must lie in [0, 1]");
  }
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fr.train * n));
  const auto n_hold = static_cast<std::size_t>(std::llround(fr.holdout * n));
  if (n_train + n_hold > n) throw ConfigError("split sizes exceed dataset size");
  const std::size_t n_test = n - n_train - n_hold;
  if (victim_count > n_test) {
    throw ConfigError("victim_count " + std::to_string(victim_count) +
                      " exceeds test size " + std::to_string(n_test));
  }

  Rng rng(seed);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(perm));

  Splits s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.holdout.assign(perm.begin() + n_train, perm.begin() + n_train + n_hold);
  std::vector<std::size_t> test(perm.begin() + n_train + n_hold, perm.end());

  std::vector<std::size_t> adv = s.train;
  rng.shuffle(std::span<std::size_t>(adv));
  const auto n_adv = static_cast<std::size_t>(std::llround(adversary_fraction * n_train));
  adv.resize(n_adv);
  std::sort(adv.begin(), adv.end());
  s.adversary = std::move(adv);

  rng.shuffle(std::span<std::size_t>(test));
  s.victims.assign(test.begin(), test.begin() + victim_count);
  s.test.assign(test.begin() + victim_count, test.end());
  std::sort(s.victims.begin(), s.victims.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<std::size_t> positions_in(std::span<const std::size_t> container,
                                      std::span<const std::size_t> members) {
  std::unordered_map<std::size_t, std::size_t> where;
  for (std::size_t k = 0; k < container.size(); ++k) where.emplace(container[k], k);
  std::vector<std::size_t> out;
  out.reserve(members.size());
  for (std::size_t m : members) {
    auto it = where.find(m);
    if (it == where.end()) throw IndexError("index " + std::to_string(m) + " not in container");
    out.push_back(it->second);
  }
  return out;
}

std::vector<char> encode_dataset(const Dataset& ds) {
  binio::Writer w;
  w.bytes("UUAD");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.dim()));
  w.u32(static_cast<std::uint32_t>(ds.class_count));
  for (double v : ds.features.data) w.f32(static_cast<float>(v));
  for (int y : ds.labels) w.u32(static_cast<std::uint32_t>(y));
  return w.buffer();
}

Dataset decode_dataset(const std::vector<char>& bytes) {
  binio::Reader r(bytes, "dataset");
  r.expect_magic("UUAD");
  if (r.u32() != kDatasetVersion) r.fail("unsupported dataset version");
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint32_t c = r.u32();
  Dataset ds;
  ds.class_count = c;
  ds.features = Matrix(n, d);
  for (double& v : ds.features.data) v = static_cast<double>(r.f32());
  ds.labels.resize(n);
  for (auto& y : ds.labels) {
    const std::uint32_t raw = r.u32();
    if (raw >= c) r.fail("label out of range");
    y = static_cast<int>(raw);
  }
  if (!r.at_end()) r.fail("trailing bytes");
  ds.validate();
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  binio::write_file(path, encode_dataset(ds));
}

Dataset read_dataset(const std::filesystem::path& path) {
  return decode_dataset(binio::read_file(path));
}

Dataset read_csv(std::istream& in, std::size_t class_count) {
  std::string line;
  if (!std::getline(in, line)) throw EmptyInputError("csv: missing header");
  std::size_t cols = 1;
  for (char ch : line) cols += (ch == ',');
  if (cols < 2) throw ShapeError("csv: need at least one feature and a label column");
  const std::size_t d = cols - 1;

  std::vector<double> feats;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t k = 0;
    while (std::getline(ss, cell, ',')) {
      if (k < d) {
        feats.push_back(std::stod(cell));
      } else if (k == d) {
        labels.push_back(std::stoi(cell));
      }
      ++k;
    }
    if (k != cols) {
      throw ShapeError("csv: line " + std::to_string(lineno) + " has " +
                       std::to_string(k) + " columns, expected " + std::to_string(cols));
    }
  }
  Dataset ds;
  ds.features.rows = labels.size();
  ds.features.cols = d;
  ds.features.data = std::move(feats);
  ds.labels = std::move(labels);
  if (class_count == 0) {
    int mx = -1;
    for (int y : ds.labels) mx = std::max(mx, y);
    class_count = static_cast<std::size_t>(mx + 1);
  }
  ds.class_count = class_count;
  ds.validate();
  return ds;
}

Dataset read_csv(const std::filesystem::path& path, std::size_t class_count) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_csv(in, class_count);
}

}  // namespace uu
