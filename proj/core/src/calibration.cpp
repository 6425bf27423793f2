#include "uu/calibration.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "binio.hpp"
#include "uu/errors.hpp"

namespace uu {

CalibratorKind parse_calibrator_kind(std::string_view tag) {
  if (tag == "ts") return CalibratorKind::ts;
  if (tag == "ets") return CalibratorKind::ets;
  if (tag == "ir") return CalibratorKind::ir;
  throw ConfigError("unknown calibrator kind '" + std::string(tag) + "'");
}

std::string_view to_string(CalibratorKind kind) {
  switch (kind) {
    case CalibratorKind::ts: return "ts";
    case CalibratorKind::ets: return "ets";
    case CalibratorKind::ir: return "ir";
  }
  return "?";
}

double IsotonicMap::operator()(double score) const {
  if (value.empty()) return score;
  auto it = std::lower_bound(upper.begin(), upper.end(), score);
  if (it == upper.end()) return value.back();
  return value[static_cast<std::size_t>(it - upper.begin())];
}

IsotonicMap fit_isotonic(std::span<const double> scores, std::span<const double> targets) {
  if (scores.size() != targets.size()) throw ShapeError("isotonic: length mismatch");
  if (scores.empty()) throw EmptyInputError("isotonic: no points");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  struct Block {
    double sum;
    double weight;
    double upper;
  };
  std::vector<Block> blocks;
  for (std::size_t i : order) {
    blocks.push_back({targets[i], 1.0, scores[i]});
    while (blocks.size() >= 2) {
      const Block& b = blocks.back();
      const Block& a = blocks[blocks.size() - 2];
      if (a.sum / a.weight < b.sum / b.weight) break;
      Block merged{a.sum + b.sum, a.weight + b.weight, b.upper};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  IsotonicMap map;
  for (const auto& b : blocks) {
    map.upper.push_back(b.upper);
    map.value.push_back(b.sum / b.weight);
  }
  return map;
}

double temperature_nll(const Matrix& logits, std::span<const int> labels, double temperature) {
  double s = 0.0;
  std::vector<double> z(logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    auto row = logits.row(i);
    for (std::size_t c = 0; c < z.size(); ++c) z[c] = row[c] / temperature;
    s -= log_softmax(z)[static_cast<std::size_t>(labels[i])];
  }
  return s / static_cast<double>(logits.rows);
}

namespace {

void check_validation_set(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows == 0 || labels.empty()) throw EmptyInputError("calibration: empty validation set");
  if (logits.rows != labels.size()) throw ShapeError("calibration: logits/labels length mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols) throw IndexError("calibration: label out of range");
  }
  const int first = labels.front();
  if (std::all_of(labels.begin(), labels.end(), [&](int y) { return y == first; })) {
    throw DegenerateDataError("calibration: validation set contains a single class");
  }
}

double golden_section_temperature(const Matrix& logits, std::span<const int> labels) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.05;
  double b = 20.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = temperature_nll(logits, labels, c);
  double fd = temperature_nll(logits, labels, d);
  while (b - a > 1e-6) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = temperature_nll(logits, labels, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = temperature_nll(logits, labels, d);
    }
  }
  return 0.5 * (a + b);
}

std::vector<double> ets_mix(std::span<const double> logits, double temperature,
                            const std::array<double, 3>& w) {
  std::vector<double> z(logits.begin(), logits.end());
  for (double& v : z) v /= temperature;
  auto pt = softmax(z);
  auto p1 = softmax(logits);
  const double u = 1.0 / static_cast<double>(logits.size());
  std::vector<double> out(logits.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = w[0] * pt[c] + w[1] * p1[c] + w[2] * u;
  return out;
}

}  // namespace

CalibratorParams fit_calibrator(CalibratorKind kind, const Matrix& logits,
                                std::span<const int> labels) {
  check_validation_set(logits, labels);
  CalibratorParams cal;
  cal.kind = kind;
  switch (kind) {
    case CalibratorKind::ts:
      cal.temperature = golden_section_temperature(logits, labels);
      break;
    case CalibratorKind::ets: {
      cal.temperature = golden_section_temperature(logits, labels);
      // Cache the three components once; the grid only reweights them.
      const std::size_t n = logits.rows;
      std::vector<double> pt(n), p1(n);
      std::vector<double> z(logits.cols);
      const double u = 1.0 / static_cast<double>(logits.cols);
      for (std::size_t i = 0; i < n; ++i) {
        auto row = logits.row(i);
        const auto y = static_cast<std::size_t>(labels[i]);
        for (std::size_t c = 0; c < z.size(); ++c) z[c] = row[c] / cal.temperature;
        pt[i] = softmax(z)[y];
        p1[i] = softmax(row)[y];
      }
      double best = INFINITY;
      for (int a = 0; a <= 100; ++a) {
        for (int b = 0; a + b <= 100; ++b) {
          const std::array<double, 3> w{a / 100.0, b / 100.0, (100 - a - b) / 100.0};
          double nll = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            nll -= std::log(std::max(w[0] * pt[i] + w[1] * p1[i] + w[2] * u, 1e-300));
          }
          if (nll < best) {
            best = nll;
            cal.ets_weights = w;
          }
        }
      }
      break;
    }
    case CalibratorKind::ir: {
      const std::size_t C = logits.cols;
      std::vector<std::vector<double>> scores(C), targets(C);
      for (std::size_t i = 0; i < logits.rows; ++i) {
        auto p = softmax(logits.row(i));
        for (std::size_t c = 0; c < C; ++c) {
          scores[c].push_back(p[c]);
          targets[c].push_back(static_cast<std::size_t>(labels[i]) == c ? 1.0 : 0.0);
        }
      }
      for (std::size_t c = 0; c < C; ++c) cal.ir_maps.push_back(fit_isotonic(scores[c], targets[c]));
      break;
    }
  }
  return cal;
}

ProbVector apply_calibrator(const CalibratorParams& cal, std::span<const double> logits) {
  switch (cal.kind) {
    case CalibratorKind::ts: {
      std::vector<double> z(logits.begin(), logits.end());
      for (double& v : z) v /= cal.temperature;
      return ProbVector(softmax(z));
    }
    case CalibratorKind::ets:
      return ProbVector(ets_mix(logits, cal.temperature, cal.ets_weights));
    case CalibratorKind::ir: {
      if (cal.ir_maps.size() != logits.size()) throw ShapeError("isotonic calibrator class count mismatch");
      auto p = softmax(logits);
      std::vector<double> q(p.size());
      double s = 0.0;
      for (std::size_t c = 0; c < p.size(); ++c) {
        q[c] = cal.ir_maps[c](p[c]);
        s += q[c];
      }
      if (s <= 0.0) {
        std::fill(q.begin(), q.end(), 1.0 / static_cast<double>(q.size()));
      } else {
        for (double& v : q) v /= s;
      }
      return ProbVector(std::move(q));
    }
  }
  throw ConfigError("unknown calibrator kind");
}

std::vector<char> encode_calibrator(const CalibratorParams& cal) {
  binio::Writer w;
  w.bytes("UUCAL");
  w.u8(static_cast<std::uint8_t>(cal.kind));
  switch (cal.kind) {
    case CalibratorKind::ts:
      w.f64(cal.temperature);
      break;
    case CalibratorKind::ets:
      w.f64(cal.temperature);
      for (double v : cal.ets_weights) w.f64(v);
      break;
    case CalibratorKind::ir:
      w.u32(static_cast<std::uint32_t>(cal.ir_maps.size()));
      for (const auto& m : cal.ir_maps) {
        w.u32(static_cast<std::uint32_t>(m.upper.size()));
        for (double v : m.upper) w.f64(v);
        for (double v : m.value) w.f64(v);
      }
      break;
  }
  return w.buffer();
}

CalibratorParams decode_calibrator(const std::vector<char>& bytes) {
  binio::Reader r(bytes, "calibrator");
  r.expect_magic("UUCAL");
  CalibratorParams cal;
  const std::uint8_t kind = r.u8();
  if (kind > 2) r.fail("unknown calibrator kind");
  cal.kind = static_cast<CalibratorKind>(kind);
  switch (cal.kind) {
    case CalibratorKind::ts:
      cal.temperature = r.f64();
      break;
    case CalibratorKind::ets:
      cal.temperature = r.f64();
      for (double& v : cal.ets_weights) v = r.f64();
      break;
    case CalibratorKind::ir: {
      const std::uint32_t classes = r.u32();
      cal.ir_maps.resize(classes);
      for (auto& m : cal.ir_maps) {
        const std::uint32_t k = r.u32();
        if (k > bytes.size()) r.fail("implausible breakpoint count");
        m.upper.resize(k);
        m.value.resize(k);
        for (double& v : m.upper) v = r.f64();
        for (double& v : m.value) v = r.f64();
      }
      break;
    }
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return cal;
}

void save_calibrator(const std::filesystem::path& path, const CalibratorParams& cal) {
  binio::write_file(path, encode_calibrator(cal));
}

CalibratorParams load_calibrator(const std::filesystem::path& path) {
  return decode_calibrator(binio::read_file(path));
}

}  // namespace uu
