#include "helpers.hpp"
#include "ruie/intent_head.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace ruie;

namespace {

RowVec<double> vec(std::initializer_list<double> v) {
  RowVec<double> r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

}  // namespace

TEST(IntentHead, ZeroWeightsGiveZero) {
  std::mt19937_64 rng(1);
  auto h = IntentHead<double>::random(4, false, rng);
  h.visit("h", [](const std::string&, Mat<double>& m) { m.setZero(); });
  EXPECT_EQ(predict_intent<double>(vec({1, -2, 3, 4}), h), RowVec<double>::Zero(4));
}

TEST(IntentHead, IdentityLayersPassNonnegativeInput) {
  std::mt19937_64 rng(1);
  for (bool strict : {false, true}) {
    auto h = IntentHead<double>::random(4, strict, rng);
    for (auto* l : {&h.fc1, &h.fc2, &h.fc3}) {
      l->weight = Mat<double>::Identity(4, 4);
      l->bias.setZero();
    }
    const auto x = vec({0.0, 1.5, 2.0, 0.25});
    EXPECT_EQ(predict_intent<double>(x, h), x);
  }
}

TEST(IntentHead, GradientCheck) {
  for (bool strict : {false, true}) {
    std::mt19937_64 rng(3);
    auto h = IntentHead<double>::random(4, strict, rng);
    h.visit("h", [&](const std::string& n, Mat<double>& m) {
      if (n.find("bias") != std::string::npos) m = support::random_mat<double>(1, 4, 9, 0.2);
    });
    Mat<double> x = support::random_mat<double>(3, 4, 4);
    const Mat<double> w = support::random_mat<double>(3, 4, 5);
    auto loss = [&] { return (h.forward(x, nullptr).array() * w.array()).sum(); };
    IntentHead<double>::Cache cache;
    h.forward(x, &cache);
    auto g = h;
    g.visit("g", [](const std::string&, Mat<double>& m) { m.setZero(); });
    const auto dx = h.backward(w, cache, g);
    std::vector<std::pair<std::string, Mat<double>*>> ps;
    std::vector<Mat<double>*> gs;
    h.visit("h", [&](const std::string& n, Mat<double>& m) { ps.emplace_back(n, &m); });
    g.visit("h", [&](const std::string&, Mat<double>& m) { gs.push_back(&m); });
    for (std::size_t i = 0; i < ps.size(); ++i)
      EXPECT_LT(support::max_rel_error(*gs[i], support::numeric_grad(loss, *ps[i].second)), 1e-4) << ps[i].first;
    EXPECT_LT(support::max_rel_error(dx, support::numeric_grad(loss, x)), 1e-4);
  }
}

TEST(IntentHead, ShapeMismatch) {
  std::mt19937_64 rng(1);
  const auto h = IntentHead<double>::random(4, false, rng);
  EXPECT_THROW(predict_intent<double>(vec({1, 2, 3}), h), ShapeError);
}

TEST(Negatives, TenDistinctAllowedIds) {
  const Catalog cat{2000, 2};
  std::vector<Id> history{5, 9, 2000, 13, 5};
  std::mt19937_64 rng(7);
  const auto n = sample_negatives(cat, history, 42, 10, rng);
  ASSERT_EQ(n.size(), 10u);
  std::set<Id> s(n.begin(), n.end());
  EXPECT_EQ(s.size(), 10u);
  for (Id id : n) {
    EXPECT_NE(id, 42);
    EXPECT_NE(id, cat.padding_item_id());
    EXPECT_EQ(std::count(history.begin(), history.end(), id), 0);
  }
}

TEST(Negatives, ExhaustionReturnsEveryRemainingItem) {
  const Catalog cat{12, 1};
  std::vector<Id> history{12, 12, 3};
  std::mt19937_64 rng(1);
  const auto n = sample_negatives(cat, history, 7, 10, rng);
  const std::set<Id> got(n.begin(), n.end());
  std::set<Id> expect;
  for (Id i = 0; i < 12; ++i)
    if (i != 3 && i != 7) expect.insert(i);
  EXPECT_EQ(got, expect);
  EXPECT_THROW(sample_negatives(cat, history, 7, 11, rng), SamplingError);
}

TEST(Negatives, DeterministicGivenRngState) {
  const Catalog cat{500, 1};
  std::vector<Id> history{1, 2, 3};
  std::mt19937_64 a(99), b(99);
  EXPECT_EQ(sample_negatives(cat, history, 4, 10, a), sample_negatives(cat, history, 4, 10, b));
}

TEST(Negatives, ExhaustiveExclusionOnSmallCatalogs) {
  std::mt19937_64 rng(123);
  for (Id items = 8; items <= 30; ++items) {
    const Catalog cat{items, 1};
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Id> history;
      std::uniform_int_distribution<Id> any(0, items);
      for (int t = 0; t < 4; ++t) history.push_back(any(rng));
      const Id target = std::uniform_int_distribution<Id>(0, items - 1)(rng);
      const auto n = sample_negatives(cat, history, target, 3, rng);
      std::set<Id> s(n.begin(), n.end());
      ASSERT_EQ(s.size(), 3u);
      for (Id id : n) {
        ASSERT_GE(id, 0);
        ASSERT_LT(id, items);
        ASSERT_NE(id, target);
        ASSERT_EQ(std::count(history.begin(), history.end(), id), 0);
      }
    }
  }
}

TEST(Negatives, RoughlyUniform) {
  const Catalog cat{50, 1};
  std::vector<Id> history{0, 1};
  std::mt19937_64 rng(5);
  std::vector<int> counts(50, 0);
  for (int i = 0; i < 4000; ++i)
    for (Id id : sample_negatives(cat, history, 2, 10, rng)) ++counts[id];
  for (Id id = 3; id < 50; ++id) EXPECT_NEAR(counts[id], 40000.0 / 47.0, 120.0) << id;
  EXPECT_EQ(counts[0] + counts[1] + counts[2], 0);
}

TEST(Triplet, WorkedExamples) {
  const auto z = vec({0, 0});
  EXPECT_EQ(triplet_loss<double>(z, z, {vec({0, 2})}, 1.0), 0.0);
  EXPECT_EQ(triplet_loss<double>(z, z, {z}, 1.0), 1.0);
  EXPECT_EQ(triplet_loss<double>(z, vec({3, 4}), {vec({0, 1})}, 1.0), 5.0);
  EXPECT_THROW(triplet_loss<double>(z, z, {}, 1.0), PreconditionError);
}

TEST(Triplet, MeanOverNegatives) {
  const auto a = vec({0, 0}), p = vec({3, 4});
  // hinges: 5-1+1 = 5, 5-10+1 -> 0
  EXPECT_EQ(triplet_loss<double>(a, p, {vec({0, 1}), vec({6, 8})}, 1.0), 2.5);
}

TEST(Triplet, ZeroIffAllNegativesFarEnough) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 200; ++trial) {
    RowVec<double> a(3), p(3);
    for (int i = 0; i < 3; ++i) a(i) = g(rng), p(i) = g(rng);
    std::vector<RowVec<double>> n(4, RowVec<double>(3));
    for (auto& v : n)
      for (int i = 0; i < 3; ++i) v(i) = g(rng) * 2;
    const double loss = triplet_loss(a, p, n, 0.5);
    bool all_far = true;
    for (const auto& v : n) all_far = all_far && (a - v).norm() >= (a - p).norm() + 0.5;
    EXPECT_GE(loss, 0.0);
    EXPECT_EQ(loss == 0.0, all_far);
  }
}

TEST(Triplet, RotationInvariant) {
  const double th = 0.7;
  Mat<double> R(2, 2);
  R << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  const auto a = vec({0.3, -1.0}), p = vec({1.0, 0.5});
  std::vector<RowVec<double>> n{vec({0.1, 0.2}), vec({-2.0, 0.7})};
  std::vector<RowVec<double>> rn;
  for (const auto& v : n) rn.push_back(v * R);
  EXPECT_NEAR(triplet_loss(a, p, n, 1.0), triplet_loss<double>(a * R, p * R, rn, 1.0), 1e-12);
}

TEST(Triplet, BatchedGradientCheck) {
  const Eigen::Index B = 3, k = 4, d = 5;
  Mat<double> a = support::random_mat<double>(B, d, 1), p = support::random_mat<double>(B, d, 2);
  Mat<double> n = support::random_mat<double>(B * k, d, 3);
  const ColArray<double> w = support::random_mat<double>(B, 1, 4).array().abs();
  auto loss = [&] { return (triplet_forward<double>(a, p, n, k, 1.0, nullptr) * w).sum(); };
  TripletCache<double> cache;
  triplet_forward<double>(a, p, n, k, 1.0, &cache);
  const auto g = triplet_backward<double>(w, cache);
  EXPECT_LT(support::max_rel_error(g.anchors, support::numeric_grad(loss, a)), 1e-6);
  EXPECT_LT(support::max_rel_error(g.positives, support::numeric_grad(loss, p)), 1e-6);
  EXPECT_LT(support::max_rel_error(g.negatives, support::numeric_grad(loss, n)), 1e-6);
}

TEST(Triplet, KinkConventions) {
  // a == p: distance gradient is taken as zero.
  Mat<double> a = Mat<double>::Zero(1, 2), p = Mat<double>::Zero(1, 2), n(1, 2);
  n << 0.0, 0.5;
  TripletCache<double> cache;
  triplet_forward<double>(a, p, n, 1, 1.0, &cache);
  const auto g = triplet_backward<double>(ColArray<double>::Ones(1), cache);
  EXPECT_TRUE(g.positives.isZero(0));
  // hinge argument exactly zero: no gradient
  Mat<double> n2(1, 2);
  n2 << 0.0, 1.0;
  triplet_forward<double>(a, p, n2, 1, 1.0, &cache);
  const auto g2 = triplet_backward<double>(ColArray<double>::Ones(1), cache);
  EXPECT_TRUE(g2.negatives.isZero(0));
  EXPECT_TRUE(g2.anchors.isZero(0));
}
