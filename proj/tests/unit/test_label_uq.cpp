#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "checks.hpp"
#include "doctest.h"
#include "uqbench/error.hpp"
#include "uqbench/label_uq.hpp"

using namespace uqbench;
using namespace uqbench::label;

namespace {

// Probability that the plurality of M votes (lowest index on ties) names the
// true class, averaged over a uniformly drawn true class. Each vote is the
// true class with probability p and any other class uniformly otherwise.
double brute_majority_accuracy(int k, int m, double p) {
  const double q = (1.0 - p) / (k - 1);
  std::vector<double> fact(static_cast<std::size_t>(m + 1), 1.0);
  for (int i = 1; i <= m; ++i) fact[static_cast<std::size_t>(i)] = fact[static_cast<std::size_t>(i - 1)] * i;
  double total = 0.0;
  std::vector<int> c(static_cast<std::size_t>(k), 0);
  // Enumerate compositions of m into k parts.
  auto rec = [&](auto&& self, int idx, int left) -> void {
    if (idx == k - 1) {
      c[static_cast<std::size_t>(idx)] = left;
      for (int truth = 0; truth < k; ++truth) {
        double prob = fact[static_cast<std::size_t>(m)];
        for (int j = 0; j < k; ++j) {
          prob /= fact[static_cast<std::size_t>(c[static_cast<std::size_t>(j)])];
          prob *= std::pow(j == truth ? p : q, c[static_cast<std::size_t>(j)]);
        }
        if (std::max_element(c.begin(), c.end()) - c.begin() == truth) total += prob / k;
      }
      return;
    }
    for (int v = 0; v <= left; ++v) {
      c[static_cast<std::size_t>(idx)] = v;
      self(self, idx + 1, left - v);
    }
  };
  rec(rec, 0, m);
  return total;
}

}  // namespace

TEST_CASE("distributional labels") {
  VoteLabel all3{std::vector<int>(17, 0)};
  all3.counts[3] = 10;
  CHECK(to_distributional(all3) == one_hot(3, 17));
  VoteLabel half{{5, 5, 0, 0}};
  CHECK(to_distributional(half) == std::vector<double>{0.5, 0.5, 0.0, 0.0});
  CHECK(majority_vote(VoteLabel{{4, 3, 3, 0}}) == 0);
  CHECK(majority_vote(VoteLabel{{2, 4, 4, 0}}) == 1);
  CHECK_THROWS_AS(to_distributional(VoteLabel{{0, 0, 0}}), ParameterError);
  CHECK_THROWS_AS(to_distributional(VoteLabel{{3, -1, 0}}), ParameterError);
}

TEST_CASE("KL loss") {
  const std::vector<double> p{0.2, 0.5, 0.3};
  CHECK(std::abs(kl_loss(p, p)) <= 1e-12);
  CHECK(kl_loss(one_hot(1, 3), p) == doctest::Approx(-std::log(0.5)));
  CHECK(kl_loss(one_hot(4, 17), std::vector<double>(17, 1.0 / 17)) == doctest::Approx(2.833213344));
  rand::Stream rng({11});
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> y(5), q(5);
    for (auto& v : y) v = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
    for (auto& v : q) v = 0.01 + rng.uniform();
    y[0] += 0.1;
    const double sy = std::accumulate(y.begin(), y.end(), 0.0), sq = std::accumulate(q.begin(), q.end(), 0.0);
    for (auto& v : y) v /= sy;
    for (auto& v : q) v /= sq;
    CHECK(kl_loss(y, q) >= 0.0);
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(checks::check_kl_gradient(seed).pass);
}

TEST_CASE("expected calibration error") {
  SUBCASE("confident and always correct") {
    const auto r = ece(std::vector<double>(100, 1.0), std::vector<bool>(100, true));
    CHECK(r.ece == 0.0);
  }
  SUBCASE("confident and half correct") {
    std::vector<bool> correct(100);
    for (int i = 0; i < 100; ++i) correct[static_cast<std::size_t>(i)] = i % 2 == 0;
    const auto r = ece(std::vector<double>(100, 1.0), correct);
    CHECK(r.ece == doctest::Approx(0.5));
    std::size_t occupied = 0, total = 0;
    for (const auto& b : r.bins) {
      occupied += b.count > 0;
      total += b.count;
    }
    CHECK(occupied == 1);
    CHECK(total == 100);
    CHECK(r.bins.back().count == 100);
  }
  SUBCASE("calibrated sampler approaches zero") {
    rand::Stream rng({12});
    double previous = 1.0;
    for (const int n : {1000, 100000}) {
      std::vector<double> conf(static_cast<std::size_t>(n));
      std::vector<bool> correct(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        conf[static_cast<std::size_t>(i)] = 0.1 + 0.9 * rng.uniform();
        correct[static_cast<std::size_t>(i)] = rng.bernoulli(conf[static_cast<std::size_t>(i)]);
      }
      const double e = ece(conf, correct).ece;
      CHECK(e < previous);
      previous = e;
    }
    CHECK(previous < 0.01);
  }
  SUBCASE("bin placement, empty bins, permutation") {
    const auto r = ece(std::vector<double>{0.1, 0.15, 0.55}, std::vector<bool>{false, true, true});
    CHECK(r.bins[0].count == 1);
    CHECK(r.bins[1].count == 1);
    CHECK(r.bins[5].count == 1);
    CHECK(r.ece == doctest::Approx((0.1 + 0.85 + 0.45) / 3));
    const auto s = ece(std::vector<double>{0.55, 0.1, 0.15}, std::vector<bool>{true, false, true});
    CHECK(s.ece == doctest::Approx(r.ece));
  }
  SUBCASE("matrix form uses max softmax against the true class") {
    nn::Matrix p(2, 2);
    p << 0.8, 0.3, 0.2, 0.7;
    const auto r = ece(p, {0, 0});
    CHECK(r.ece == doctest::Approx((0.2 + 0.7) / 2));
  }
  CHECK_THROWS_AS(ece(std::vector<double>{}, std::vector<bool>{}), ParameterError);
  CHECK_THROWS_AS(ece(std::vector<double>{0.5}, std::vector<bool>{true}, 0), ParameterError);
}

TEST_CASE("synthetic votes") {
  SUBCASE("identity confusion") {
    const auto items = synth_votes(5, 50, diagonal_confusion(5, 1.0), 10, {1});
    for (const auto& it : items) CHECK(to_distributional(it.votes) == one_hot(it.true_class, 5));
  }
  SUBCASE("uniform confusion") {
    const int k = 4, m = 10, n = 20000;
    const auto items = synth_votes(k, n, nn::Matrix::Constant(k, k, 0.25), m, {2});
    std::vector<double> mean(k, 0.0);
    for (const auto& it : items) {
      CHECK(it.votes.total() == m);
      for (int j = 0; j < k; ++j) mean[static_cast<std::size_t>(j)] += it.votes.counts[static_cast<std::size_t>(j)];
    }
    // Each count has variance M p (1 - p) = 1.875.
    for (const double s : mean) CHECK(std::abs(s / n - 2.5) < 4 * std::sqrt(1.875 / n));
  }
  SUBCASE("majority vote beats a single vote") {
    const double exact = brute_majority_accuracy(3, 10, 0.85);
    CHECK(exact > 0.85);
    const auto items = synth_votes(3, 40000, diagonal_confusion(3, 0.85), 10, {3});
    int hits = 0;
    for (const auto& it : items) hits += majority_vote(it.votes) == it.true_class;
    const double se = std::sqrt(exact * (1 - exact) / 40000);
    CHECK(std::abs(hits / 40000.0 - exact) < 4 * se);
  }
  SUBCASE("errors") {
    nn::Matrix bad = diagonal_confusion(3, 0.8);
    bad(0, 0) = 0.9;
    CHECK_THROWS_AS(synth_votes(3, 5, bad, 10, {1}), ParameterError);
    CHECK_THROWS_AS(synth_votes(3, 5, diagonal_confusion(3, 0.8), 0, {1}), ParameterError);
  }
}

TEST_CASE("vote-accuracy calibration of the ambiguous corpus") {
  const double s = scale_for_vote_accuracy(17, 0.85);
  CHECK(expected_vote_accuracy(17, s) == doctest::Approx(0.85).epsilon(1e-3));
  CorpusConfig cc;
  cc.items = 4000;
  const auto ds = ambiguous_corpus(cc, {4});
  double agree = 0.0;
  for (const auto& it : ds.items) agree += it.votes.counts[static_cast<std::size_t>(it.true_class)];
  CHECK(agree / (10.0 * ds.size()) == doctest::Approx(0.85).epsilon(0.02));
  CHECK(ds.features.rows() == 17);
}

TEST_CASE("identity-confusion votes make both encodings coincide") {
  CorpusConfig cc;
  cc.classes = 4;
  cc.items = 400;
  cc.feature_scale = 2.5;
  const auto train = confusion_corpus(cc, diagonal_confusion(4, 1.0), {5});
  const auto test = confusion_corpus(cc, diagonal_confusion(4, 1.0), {6});
  ClassifierConfig conf;
  conf.train.epochs = 20;
  const auto a = train_classifier(train, test, LabelEncoding::one_hot, conf, {7});
  const auto b = train_classifier(train, test, LabelEncoding::distributional, conf, {7});
  CHECK(a.overall_accuracy == doctest::Approx(b.overall_accuracy).epsilon(1e-9));
  CHECK(a.calibration.ece == doctest::Approx(b.calibration.ece).epsilon(1e-9));
  CHECK(a.ce_one_hot == doctest::Approx(a.ce_distributional));
}

TEST_CASE("corpus files") {
  const auto dir = std::filesystem::temp_directory_path() / "uqbench_test_label";
  CorpusConfig cc;
  cc.classes = 5;
  cc.items = 30;
  const auto ds = ambiguous_corpus(cc, {8});
  write_votes_csv(ds.items, dir / "votes.csv");
  write_features_csv(ds.features, dir / "features.csv");
  const auto back = load_dataset(dir / "votes.csv", dir / "features.csv");
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.items[i].true_class == ds.items[i].true_class);
    CHECK(back.items[i].votes.counts == ds.items[i].votes.counts);
  }
  CHECK((back.features - ds.features).cwiseAbs().maxCoeff() < 1e-9);
  write_calibration_json(ece(std::vector<double>{0.5}, std::vector<bool>{true}), dir / "cal.json");
  CHECK(std::filesystem::exists(dir / "cal.json"));
  std::filesystem::remove_all(dir);
}
