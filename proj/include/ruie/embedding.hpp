#pragma once

// Item and scenario embedding tables. The item table carries one extra row
// for the padding token (row num_items).

#include "ruie/core.hpp"

#include <random>
#include <span>
#include <string>

namespace ruie {

template <typename T>
struct EmbeddingTables {
  Mat<T> item_table;      // (num_items + 1) x d
  Mat<T> scenario_table;  // num_scenarios x d

  Eigen::Index dim() const { return item_table.cols(); }
  Id num_items() const { return static_cast<Id>(item_table.rows()) - 1; }
  Id num_scenarios() const { return static_cast<Id>(scenario_table.rows()); }
  Id padding_item_id() const { return num_items(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".item_table", item_table);
    f(prefix + ".scenario_table", scenario_table);
  }
};

/// Entries i.i.d. Normal(0, 1/d) (standard deviation 1/sqrt(d)).
template <typename T>
EmbeddingTables<T> init_tables(Id num_items, Id num_scenarios, Eigen::Index d,
                               std::uint64_t seed) {
  if (num_items < 1 || num_scenarios < 1 || d < 1)
    throw ConfigError("init_tables: sizes must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  EmbeddingTables<T> t{Mat<T>(num_items + 1, d), Mat<T>(num_scenarios, d)};
  for (Eigen::Index i = 0; i < t.item_table.size(); ++i)
    t.item_table.data()[i] = static_cast<T>(dist(rng));
  for (Eigen::Index i = 0; i < t.scenario_table.size(); ++i)
    t.scenario_table.data()[i] = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
RowVec<T> lookup_item(const EmbeddingTables<T>& t, Id item) {
  if (item < 0 || item > t.num_items())
    throw IndexError("lookup_item: id " + std::to_string(item) + " out of range");
  return t.item_table.row(item);
}

template <typename T>
RowVec<T> lookup_scenario(const EmbeddingTables<T>& t, Id scenario) {
  if (scenario < 0 || scenario >= t.num_scenarios())
    throw IndexError("lookup_scenario: id " + std::to_string(scenario) + " out of range");
  return t.scenario_table.row(scenario);
}

/// e_{i+s} = e_i + e_s
template <typename T>
RowVec<T> fuse(const RowVec<T>& item, const RowVec<T>& scenario) {
  if (item.size() != scenario.size()) throw ShapeError("fuse: length mismatch");
  return item + scenario;
}

/// Stacks table rows for `ids` into an ids.size() x d matrix.
template <typename T>
Mat<T> gather_rows(const Mat<T>& table, std::span<const Id> ids) {
  Mat<T> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Id id = ids[i];
    if (id < 0 || id >= table.rows())
      throw IndexError("embedding lookup: id " + std::to_string(id) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.row(id);
  }
  return out;
}

/// Adjoint of gather_rows: grad_table[ids[i]] += grad_rows[i].
template <typename T>
void scatter_add_rows(Mat<T>& grad_table, std::span<const Id> ids, const Mat<T>& grad_rows) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    grad_table.row(ids[i]) += grad_rows.row(static_cast<Eigen::Index>(i));
}

}  // namespace ruie
