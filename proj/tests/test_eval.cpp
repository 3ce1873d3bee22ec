#include "helpers.hpp"
#include "ruie/gradcheck.hpp"
#include "ruie/eval.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace ruie;

namespace {

/// Brute force: sort all real items by (distance, id) and find the target.
std::size_t sorted_rank(const RowVec<double>& pred, const Mat<double>& table, Id target) {
  std::vector<std::pair<double, Id>> all;
  for (Id i = 0; i + 1 < table.rows(); ++i) all.emplace_back((table.row(i) - pred).squaredNorm(), i);
  std::sort(all.begin(), all.end());
  for (std::size_t r = 0; r < all.size(); ++r)
    if (all[r].second == target) return r + 1;
  return 0;
}

double ndcg_oracle(std::size_t rank, std::size_t k) {
  if (rank > k) return 0.0;
  return std::log(2.0) / std::log(static_cast<double>(rank + 1));
}

}  // namespace

TEST(Rank, WorkedExamples) {
  Mat<double> table(4, 1);  // three items plus padding
  table << 2.0, 1.0, 3.0, 0.0;
  RowVec<double> pred = RowVec<double>::Zero(1);
  EXPECT_EQ(rank_target(pred, table, 0), 2u);
  EXPECT_EQ(rank_target(pred, table, 1), 1u);
  EXPECT_EQ(rank_target(pred, table, 2), 3u);
  pred(0) = 3.0;
  EXPECT_EQ(rank_target(pred, table, 2), 1u);
}

TEST(Rank, TiesFavourSmallerId) {
  Mat<double> table(4, 1);
  table << 1.0, -1.0, 1.0, 0.0;
  const RowVec<double> pred = RowVec<double>::Zero(1);
  EXPECT_EQ(rank_target(pred, table, 0), 1u);
  EXPECT_EQ(rank_target(pred, table, 1), 2u);
  EXPECT_EQ(rank_target(pred, table, 2), 3u);
}

TEST(Rank, PaddingRowNeverCompetes) {
  Mat<double> table(3, 2);
  table << 1, 1, 2, 2, 0, 0;  // padding row sits exactly on the prediction
  EXPECT_EQ(rank_target<double>(RowVec<double>::Zero(2), table, 0), 1u);
  EXPECT_THROW(rank_target<double>(RowVec<double>::Zero(2), table, 2), IndexError);
  EXPECT_THROW(rank_target<double>(RowVec<double>::Zero(3), table, 0), ShapeError);
}

TEST(Rank, MatchesFullSortOracle) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = std::uniform_int_distribution<Eigen::Index>(2, 100)(rng);
    const Eigen::Index d = std::uniform_int_distribution<Eigen::Index>(1, 4)(rng);
    Mat<double> table(n + 1, d);
    // Small integer grid forces many exact distance ties.
    std::uniform_int_distribution<int> cell(-2, 2);
    for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = cell(rng);
    RowVec<double> pred(d);
    for (Eigen::Index i = 0; i < d; ++i) pred(i) = cell(rng);
    if (trial % 3 == 0) table.row(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng)) = pred;
    for (Id t = 0; t < n; ++t) {
      const auto r = rank_target(pred, table, t);
      ASSERT_EQ(r, sorted_rank(pred, table, t)) << "trial " << trial;
      for (std::size_t k : {5u, 10u, 15u, 20u}) ASSERT_DOUBLE_EQ(ndcg_at_k(r, k), ndcg_oracle(r, k));
    }
  }
}

TEST(Ndcg, WorkedExamples) {
  EXPECT_EQ(ndcg_at_k(1, 1), 1.0);
  EXPECT_EQ(ndcg_at_k(1, 20), 1.0);
  EXPECT_EQ(ndcg_at_k(3, 5), 0.5);
  EXPECT_EQ(ndcg_at_k(7, 5), 0.0);
  EXPECT_THROW(ndcg_at_k(0, 5), PreconditionError);
  EXPECT_THROW(ndcg_at_k(1, 0), PreconditionError);
}

TEST(Ndcg, MonotoneInKAndRank) {
  for (std::size_t r = 1; r < 40; ++r)
    for (std::size_t k = 1; k < 30; ++k) {
      EXPECT_LE(ndcg_at_k(r, k), ndcg_at_k(r, k + 1));
      EXPECT_GE(ndcg_at_k(r, k), ndcg_at_k(r + 1, k));
    }
}

namespace {

struct EvalFixture {
  Model<float> model;
  std::vector<SequenceSample> test;

  EvalFixture(Id items, std::size_t samples, std::uint64_t seed) {
    TrainConfig cfg = tiny_config();
    cfg.seed = seed;
    model = Model<float>::init(cfg, Catalog{items, 2});
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Id> item(0, items - 1);
    for (std::size_t i = 0; i < samples; ++i) {
      SequenceSample s;
      s.user_id = static_cast<Id>(i);
      s.history_items.assign(5, items);
      s.history_scenarios.assign(5, 0);
      s.history_items[4] = item(rng);
      s.target_item = item(rng);
      s.next_history_items = s.history_items;
      s.next_history_scenarios = s.history_scenarios;
      test.push_back(s);
    }
  }
};

}  // namespace

TEST(Evaluate, PerfectOracleScoresHundred) {
  EvalFixture f(30, 25, 1);
  // The head outputs a constant; make every item's row identical to it
  // except for distinct offsets along a direction the head cannot reach.
  f.model.intent.fc3.weight.setZero();
  f.model.intent.fc3.bias.setZero();
  for (auto& s : f.test) s.target_item = 0;
  f.model.embedding.item_table.setConstant(1.0f);
  f.model.embedding.item_table.row(0).setZero();
  const auto rep = evaluate(f.model, f.test);
  for (int k : default_cutoffs()) EXPECT_EQ(rep.ndcg.at(k), 100.0);
  EXPECT_EQ(rep.num_test_users, 25u);
}

TEST(Evaluate, SingleSampleAtRankThree) {
  EvalFixture f(10, 1, 2);
  f.model.intent.fc3.weight.setZero();
  f.model.intent.fc3.bias.setZero();
  auto& table = f.model.embedding.item_table;
  for (Id i = 0; i < 10; ++i) table.row(i).setConstant(static_cast<float>(i + 1));
  f.test[0].target_item = 2;
  const auto rep = evaluate(f.model, f.test);
  EXPECT_EQ(rep.ndcg.at(5), 50.0);
}

TEST(Evaluate, RandomModelNearMonteCarloBaseline) {
  EvalFixture f(50, 1000, 3);
  const auto rep = evaluate(f.model, f.test);
  // Oracle: uniform ranks over 50 items.
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> rank(1, 50);
  double sum = 0.0;
  const int draws = 200000;
  for (int i = 0; i < draws; ++i) sum += ndcg_oracle(rank(rng), 10);
  EXPECT_NEAR(rep.ndcg.at(10), 100.0 * sum / draws, 2.0);
}

TEST(Evaluate, PureAndThreadIndependent) {
  EvalFixture f(60, 300, 4);
  const auto a = evaluate(f.model, f.test), b = evaluate(f.model, f.test, default_cutoffs(), 3);
  EXPECT_EQ(a.to_json(), b.to_json());
  double prev = 0.0;
  for (const auto& [k, v] : a.ndcg) {
    EXPECT_GE(v, prev);
    EXPECT_LE(v, 100.0);
    prev = v;
  }
}

TEST(Evaluate, EmptyTestSetIsAnError) {
  EvalFixture f(10, 0, 5);
  EXPECT_THROW(evaluate(f.model, f.test), PreconditionError);
}

TEST(Report, JsonRoundTripAndTable) {
  MetricsReport r;
  r.ndcg = {{5, 1.5}, {10, 2.25}, {15, 3.0}, {20, 14.6784}};
  r.num_test_users = 7;
  r.config_fingerprint = "abc";
  EXPECT_EQ(MetricsReport::from_json(r.to_json()).to_json(), r.to_json());
  const auto table = metrics_table({{"RUIE", r}});
  EXPECT_NE(table.find("N@5"), std::string::npos);
  EXPECT_NE(table.find("N@20"), std::string::npos);
  EXPECT_NE(table.find("14.6784"), std::string::npos);
  EXPECT_LT(table.find("N@10"), table.find("N@15"));
}
