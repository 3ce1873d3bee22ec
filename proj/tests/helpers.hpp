#pragma once

#include "ruie/model.hpp"
#include "ruie/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ruie::support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ruie_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<const SequenceSample*> pointers(const std::vector<SequenceSample>& v) {
  std::vector<const SequenceSample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

inline SynthConfig small_synth(std::uint64_t seed, std::size_t users = 6, std::size_t events = 12) {
  SynthConfig c;
  c.num_users = users;
  c.num_items = 40;
  c.num_scenarios = 3;
  c.num_topics = 4;
  c.events_per_user = events;
  c.shift_probability = 0.2;
  c.seed = seed;
  return c;
}

inline Catalog catalog_of(const SynthConfig& c) {
  return {static_cast<Id>(c.num_items), static_cast<Id>(c.num_scenarios)};
}

/// Row-major (B*H) x d random matrix.
template <typename T>
Mat<T> random_mat(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

/// Negatives for every sample, drawn from one stream.
inline std::vector<Id> draw_negatives(const Catalog& cat, std::span<const SequenceSample* const> batch,
                                      std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Id> out;
  for (const auto* s : batch) {
    auto n = sample_negatives(cat, s->history_items, s->target_item, k, rng);
    out.insert(out.end(), n.begin(), n.end());
  }
  return out;
}

/// Central differences of a scalar function with respect to every entry of p.
template <typename F>
Mat<double> numeric_grad(F&& f, Mat<double>& p, double h = 1e-5) {
  Mat<double> g(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double saved = p.data()[i];
    p.data()[i] = saved + h;
    const double plus = f();
    p.data()[i] = saved - h;
    const double minus = f();
    p.data()[i] = saved;
    g.data()[i] = (plus - minus) / (2 * h);
  }
  return g;
}

/// max |a - n| / max(|a|, |n|, floor)
inline double max_rel_error(const Mat<double>& a, const Mat<double>& n, double floor = 1e-4) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = n.data()[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

}  // namespace ruie::support
