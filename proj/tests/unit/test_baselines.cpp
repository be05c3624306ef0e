#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "vqlc/baselines.hpp"
#include "vqlc/concepts.hpp"
#include "vqlc/dataset.hpp"

using namespace vqlc;
using oracle::random_tensor;

namespace {

Tensor2 two_blobs(std::size_t per, std::size_t d, std::uint64_t seed, std::vector<std::size_t>& truth) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  Tensor2 x(2 * per, d);
  truth.assign(2 * per, 0);
  for (std::size_t i = 0; i < 2 * per; ++i) {
    truth[i] = i % 2;
    for (std::size_t j = 0; j < d; ++j) x(i, j) = noise(rng);
    x(i, truth[i]) += 1.0;  // centers e0 and e1
  }
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// Ward linkage

TEST(Ward, MatchesNaiveGreedyOracle) {
  for (int seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor2 x = random_tensor(8, 3, rng);
    const auto got = ward_linkage(x);
    const auto want = oracle::naive_ward(x);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t s = 0; s < got.size(); ++s) {
      EXPECT_EQ(got[s].step, s);
      EXPECT_EQ(got[s].a, want[s].a) << "seed " << seed << " step " << s;
      EXPECT_EQ(got[s].b, want[s].b) << "seed " << seed << " step " << s;
      EXPECT_EQ(got[s].size, want[s].size);
      // The working matrix is float32.
      EXPECT_NEAR(got[s].distance, want[s].distance, 1e-5 * std::max(1.0, want[s].distance));
    }
  }
}

TEST(Ward, CollinearFourPointsSplitIntoPairs) {
  const Tensor2 x = Tensor2::from_rows({{0.0}, {1.0}, {10.0}, {11.0}});
  const auto res = hierarchical_discover(x, 2);
  EXPECT_EQ(res.labels, (std::vector<std::size_t>{0, 0, 1, 1}));
  // Exhaustive: the cut minimizes within-cluster sum of squares over all 2-partitions.
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < 15; ++mask) {
    std::vector<std::size_t> l(4);
    for (std::size_t i = 0; i < 4; ++i) l[i] = (mask >> i) & 1u;
    best = std::min(best, oracle::wcss(x, l, 2));
  }
  EXPECT_DOUBLE_EQ(oracle::wcss(x, res.labels, 2), best);
  EXPECT_DOUBLE_EQ(res.assigner.centroids(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(res.assigner.centroids(1, 0), 10.5);
  // First two merges join the unit-gap pairs at Ward distance 1.
  EXPECT_NEAR(res.merges[0].distance, 1.0, 1e-6);
  EXPECT_NEAR(res.merges[1].distance, 1.0, 1e-6);
  EXPECT_EQ(res.merges[2].size, 4u);
}

TEST(Ward, KEqualsNAppliesNoMerges) {
  std::mt19937_64 rng(1);
  const Tensor2 x = random_tensor(6, 2, rng);
  const auto res = hierarchical_discover(x, 6);
  EXPECT_EQ(res.labels, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(res.assigner.centroids[i], x[i]);
}

TEST(Ward, DistancesAreNonDecreasing) {
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor2 x = random_tensor(300, 5, rng);
    const auto m = ward_linkage(x);
    ASSERT_EQ(m.size(), 299u);
    for (std::size_t s = 1; s < m.size(); ++s) EXPECT_LE(m[s - 1].distance, m[s].distance);
    EXPECT_EQ(m.back().size, 300u);
  }
}

TEST(Ward, MergeIdsFollowDendrogramNumbering) {
  std::mt19937_64 rng(2);
  const std::size_t n = 50;
  const auto m = ward_linkage(random_tensor(n, 3, rng));
  std::set<std::size_t> used;
  for (std::size_t s = 0; s < m.size(); ++s) {
    EXPECT_LT(m[s].a, m[s].b);
    EXPECT_LT(m[s].b, n + s);
    EXPECT_TRUE(used.insert(m[s].a).second);
    EXPECT_TRUE(used.insert(m[s].b).second);
  }
  const std::string jsonl = dendrogram_to_jsonl(m);
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), static_cast<long>(n - 1));
}

TEST(Ward, CutSizesMatchK) {
  std::mt19937_64 rng(3);
  const Tensor2 x = random_tensor(40, 2, rng);
  const auto merges = ward_linkage(x);
  for (std::size_t k = 1; k <= 40; ++k) {
    const auto labels = cut_dendrogram(40, merges, k);
    EXPECT_EQ(std::set<std::size_t>(labels.begin(), labels.end()).size(), k);
    EXPECT_EQ(labels[0], 0u);
  }
}

TEST(Ward, MemoryGuardNamesQuadraticCost) {
  std::mt19937_64 rng(4);
  const Tensor2 x = random_tensor(100, 2, rng);
  try {
    (void)hierarchical_discover(x, 2, 100 * 100 * 4 - 1);
    FAIL() << "guard did not trip";
  } catch (const MemoryGuardError& e) {
    EXPECT_EQ(e.requested(), 40000u);
    EXPECT_NE(std::string(e.what()).find("O(N^2)"), std::string::npos);
  }
  EXPECT_NO_THROW(hierarchical_discover(x, 2, 100 * 100 * 4));
}

TEST(Ward, TrackedPeakCoversDistanceMatrix) {
  std::mt19937_64 rng(5);
  const std::size_t n = 500;
  const Tensor2 x = random_tensor(n, 4, rng);
  auto& tracker = MemoryTracker::instance();
  tracker.reset_peak();
  const std::size_t base = tracker.live();
  (void)ward_linkage(x);
  EXPECT_GE(tracker.peak() - base, 4 * n * n);
  EXPECT_EQ(tracker.live(), base);
}

TEST(Ward, TooFewPointsIsAnError) {
  EXPECT_THROW(hierarchical_discover(Tensor2(2, 2, 1.0), 3), ValidationError);
}

// ---------------------------------------------------------------------------
// K-Means discovery

TEST(KMeansDiscover, TwoBlobsRecoverGroundTruth) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<std::size_t> truth;
    const Tensor2 x = two_blobs(100, 6, seed, truth);
    const CentroidAssigner a = kmeans_discover(x, 2, 50, seed);
    EXPECT_EQ(a.metric, Metric::cosine);
    EXPECT_GE(oracle::pair_counting_ari(a.assign(x), truth), 0.99);
  }
}

TEST(KMeansDiscover, KEqualsNGivesOneConceptPerPoint) {
  std::mt19937_64 rng(6);
  const Tensor2 x = random_tensor(9, 4, rng);
  const auto labels = kmeans_discover(x, 9, 50, 0).assign(x);
  EXPECT_EQ(std::set<std::size_t>(labels.begin(), labels.end()).size(), 9u);
}

TEST(KMeansDiscover, DeterministicGivenSeed) {
  std::mt19937_64 rng(7);
  const Tensor2 x = random_tensor(120, 4, rng);
  const auto a = kmeans_discover(x, 5, 50, 3), b = kmeans_discover(x, 5, 50, 3);
  for (std::size_t i = 0; i < a.centroids.size(); ++i) EXPECT_EQ(a.centroids[i], b.centroids[i]);
}

TEST(HierarchicalDiscover, TwoBlobsRecoverGroundTruth) {
  std::vector<std::size_t> truth;
  const Tensor2 x = two_blobs(100, 6, 9, truth);
  const auto res = hierarchical_discover(x, 2);
  EXPECT_GE(oracle::pair_counting_ari(res.labels, truth), 0.99);
  EXPECT_GE(oracle::pair_counting_ari(res.assigner.assign(x), truth), 0.99);
}

// ---------------------------------------------------------------------------
// Assignment surface

TEST(CentroidAssign, CentroidsMapToThemselves) {
  std::mt19937_64 rng(8);
  for (Metric m : {Metric::cosine, Metric::euclidean}) {
    CentroidAssigner a{random_tensor(7, 4, rng), m, "kmeans"};
    const auto got = a.assign(a.centroids);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(got[i], i);
  }
}

TEST(CentroidAssign, CosineIgnoresRowScale) {
  std::mt19937_64 rng(9);
  const CentroidAssigner a{random_tensor(5, 4, rng), Metric::cosine, "kmeans"};
  const Tensor2 z = random_tensor(30, 4, rng);
  EXPECT_EQ(a.assign(z * 5.0), a.assign(z));
}

TEST(CentroidAssign, MatchesExhaustiveScan) {
  for (int inst = 0; inst < 50; ++inst) {
    std::mt19937_64 rng(500 + inst);
    const Tensor2 z = random_tensor(20, 4, rng);
    const CentroidAssigner cos{random_tensor(6, 4, rng), Metric::cosine, "kmeans"};
    const CentroidAssigner euc{cos.centroids, Metric::euclidean, "kmeans"};
    const auto a = cos.assign(z), b = euc.assign(z);
    for (std::size_t i = 0; i < 20; ++i) {
      EXPECT_EQ(a[i], oracle::nearest_cosine(z.row(i), cos.centroids));
      EXPECT_EQ(b[i], oracle::nearest_euclidean(z.row(i), euc.centroids));
    }
  }
}

TEST(CentroidAssign, ErrorsAndSerialization) {
  const CentroidAssigner a{Tensor2::identity(3), Metric::cosine, "hierarchical"};
  EXPECT_THROW(a.assign(Tensor2(1, 3)), ValidationError);
  EXPECT_THROW(a.assign(Tensor2(1, 2, 1.0)), ValidationError);
  const CentroidAssigner back = CentroidAssigner::from_blob(TensorBlob::deserialize(a.to_blob().serialize()));
  EXPECT_EQ(back.tag, "hierarchical");
  EXPECT_EQ(back.metric, Metric::cosine);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(back.centroids[i], a.centroids[i]);
}

TEST(CentroidAssign, BothBaselinesSwapIntoConceptExtraction) {
  const auto ds = synthesize_dataset(600, 8, 4, 2);
  const auto pool = filter_pool(ds, {});
  const Tensor2 pooled = gather_rows(ds.representations, pool);
  const CentroidAssigner km = kmeans_discover(pooled, 4, 50, 0);
  const CentroidAssigner hc = hierarchical_discover(pooled, 4).assigner;
  for (const CentroidAssigner* a : {&km, &hc}) {
    const auto cs = extract_concepts(*a, ds, pool);
    std::size_t total = 0;
    for (const auto& c : cs) total += c.size;
    EXPECT_EQ(total, pool.size()) << a->method();
    EXPECT_EQ(explain(*a, ds, cs, 0, 0, ModelFamily::encoder_based).method, a->method());
  }
}
