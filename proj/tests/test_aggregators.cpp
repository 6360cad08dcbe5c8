#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"

#include "bzsim/aggregators.hpp"

using namespace bzsim;

namespace {

std::vector<SubmittedUpdate> make(const std::vector<UpdateVector>& updates,
                                  std::vector<std::int64_t> sizes = {}) {
  std::vector<SubmittedUpdate> out;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    out.push_back({static_cast<int>(i), updates[i], sizes.empty() ? 1 : sizes[i]});
  }
  return out;
}

// Random instance; `grid` draws small integers so ties actually happen.
std::vector<SubmittedUpdate> random_instance(RngStream& rng, std::size_t k, std::size_t d,
                                             bool grid) {
  std::vector<SubmittedUpdate> out;
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<double> x(d);
    for (auto& v : x) v = grid ? static_cast<double>(rng.uniform_int(4)) : rng.normal(0, 3);
    out.push_back({static_cast<int>(i), UpdateVector(x), 1 + static_cast<std::int64_t>(rng.uniform_int(50))});
  }
  return out;
}

std::vector<SubmittedUpdate> shuffled(std::vector<SubmittedUpdate> v, RngStream& rng) {
  rng.shuffle(v);
  return v;
}

double quadratic(const UpdateVector& v) { return 0.5 * v.squared_norm(); }

bool within_envelope(const UpdateVector& out, std::span<const SubmittedUpdate> reports) {
  for (std::size_t j = 0; j < out.dim(); ++j) {
    double lo = reports[0].update[j], hi = lo;
    for (const auto& r : reports) {
      lo = std::min(lo, r.update[j]);
      hi = std::max(hi, r.update[j]);
    }
    if (out[j] < lo || out[j] > hi) return false;
  }
  return true;
}

const std::vector<UpdateVector> kKrumExample{{0, 0}, {0.1, 0}, {0, 0.1}, {10, 10}};

}  // namespace

TEST_CASE("fedavg") {
  CHECK(fedavg(make({{0.0}, {2.0}}, {1, 3})).aggregate[0] == doctest::Approx(1.5));
  const auto r = fedavg(make({{1.0, 2.0}, {3.0, 4.0}, {5.0, 0.0}}, {7, 7, 7}));
  CHECK(r.aggregate[0] == doctest::Approx(3.0));
  CHECK(r.aggregate[1] == doctest::Approx(2.0));
  CHECK(r.accepted_ids == std::vector<int>{0, 1, 2});
}

TEST_CASE("weight attack arithmetic under fedavg") {
  std::vector<SubmittedUpdate> reports;
  for (int i = 0; i < 20; ++i) reports.push_back({i, {i < 12 ? 0.0 : 1.0}, 500});
  const auto r = fedavg(reports);
  // Attackers own 8 * 20 real samples but claim 8 * 500.
  CHECK(r.aggregate[0] == doctest::Approx(0.4));
  const double honest_share = 8.0 * 20 / (12.0 * 500 + 8.0 * 20);
  CHECK(honest_share == doctest::Approx(0.026).epsilon(0.01));
  CHECK(r.weights[12].weight / 20.0 == doctest::Approx(25.0));
}

TEST_CASE("krum") {
  const auto r = krum(make(kKrumExample), 1);
  CHECK(r.accepted_ids == std::vector<int>{0});
  CHECK(r.aggregate == kKrumExample[0]);
  const DistanceMatrix m = pairwise_sq_distances(kKrumExample);
  CHECK(krum_scores(m, 1)[0] == doctest::Approx(0.01));

  CHECK(krum(make({{1, 1}, {1, 1}, {1, 1}, {1, 1}}), 1).accepted_ids == std::vector<int>{0});

  RngStream rng(1, 1);
  for (int t = 0; t < 50; ++t) {
    const auto reports = random_instance(rng, 7, 3, false);
    const auto out = krum(reports, 2).aggregate;
    CHECK(std::ranges::any_of(reports, [&](const auto& s) { return s.update == out; }));
  }
}

TEST_CASE("multi_krum") {
  const auto r = multi_krum(make(kKrumExample), 1, 2);
  CHECK(r.aggregate[0] == doctest::Approx(0.05));
  CHECK(r.aggregate[1] == doctest::Approx(0.0));
  CHECK(r.accepted_ids == std::vector<int>{0, 1});

  RngStream rng(2, 2);
  for (int t = 0; t < 30; ++t) {
    const auto reports = random_instance(rng, 6, 3, t % 2 == 0);
    CHECK(multi_krum(reports, 1, 1).aggregate == krum(reports, 1).aggregate);
    CHECK(multi_krum(reports, 0, 6).aggregate == fedavg(reports).aggregate);
  }
  CHECK_THROWS_AS(multi_krum(make(kKrumExample), 1, 0), AggregationError);
}

TEST_CASE("faba") {
  const auto one = faba(make({{0}, {1}, {2}, {9}}), 1);
  CHECK(one.aggregate[0] == doctest::Approx(1.0));
  CHECK(one.accepted_ids == std::vector<int>{0, 1, 2});

  const auto two = faba(make({{0}, {0}, {0}, {5}, {5}}), 2);
  CHECK(two.aggregate[0] == 0.0);
  CHECK(two.accepted_ids == std::vector<int>{0, 1, 2});

  const auto reports = make({{1, 2}, {3, 5}, {-1, 0}}, {4, 1, 9});
  CHECK(faba(reports, 0).aggregate == fedavg(reports).aggregate);
}

TEST_CASE("coordinate_median") {
  CHECK(coordinate_median(make({{1, 2}, {3, 4}, {5, 0}})).aggregate == UpdateVector{3, 2});
  CHECK(coordinate_median(make({{0}, {4}})).aggregate == UpdateVector{2});

  for (double outlier : {1e9, -1e9}) {
    const auto r = coordinate_median(make({{1.0}, {1.1}, {0.9}, {1.05}, {outlier}}));
    CHECK(r.aggregate[0] >= 0.9);
    CHECK(r.aggregate[0] <= 1.1);
  }
}

TEST_CASE("trimmed_mean") {
  CHECK(trimmed_mean(make({{1}, {2}, {3}, {100}}), 1).aggregate[0] == doctest::Approx(2.5));
  const auto reports = make({{1, -3}, {2, 8}, {6, 0.5}}, {10, 1, 1});
  const auto plain = trimmed_mean(reports, 0).aggregate;
  CHECK(plain[0] == doctest::Approx(3.0));
  CHECK(plain[1] == doctest::Approx(5.5 / 3));
  CHECK_THROWS_AS(trimmed_mean(make({{1}, {2}, {3}, {4}}), 2), AggregationError);
}

TEST_CASE("mean_around_median") {
  const auto reports = make({{0}, {1}, {2}, {100}});
  CHECK(mean_around_median(reports, 3).aggregate[0] == doctest::Approx(1.0));
  CHECK(mean_around_median(reports, 4).aggregate[0] == doctest::Approx(25.75));
  CHECK(mean_around_median(make({{7}, {-2}, {3}}), 1).aggregate[0] == 3.0);
  // Median 1.5: 1 and 2 tie at distance 0.5, so k=1 takes the smaller value.
  CHECK(mean_around_median(reports, 1).aggregate[0] == 1.0);
}

TEST_CASE("geometric_median") {
  const auto sym = geometric_median(make({{1, 0}, {-1, 0}, {0, 1}, {0, -1}}), 1e-6, 3);
  CHECK(sym.aggregate[0] == doctest::Approx(0.0));
  CHECK(sym.aggregate[1] == doctest::Approx(0.0));

  CHECK(geometric_median(make({{2.5, -1}}), 1e-6, 3).aggregate == UpdateVector{2.5, -1});

  const auto majority = make({{0}, {0}, {10}});
  const auto out = geometric_median(majority, 1e-6, 50).aggregate;
  CHECK(std::abs(out[0]) < 1e-3);
  CHECK(weighted_distance_sum(majority, out) < weighted_distance_sum(majority, {10.0 / 3}));
}

TEST_CASE("Weiszfeld objective never increases") {
  RngStream rng(3, 3);
  for (int t = 0; t < 100; ++t) {
    const auto reports = random_instance(rng, 2 + rng.uniform_int(6), 1 + rng.uniform_int(4), false);
    const auto trace = weiszfeld_trace(reports, 1e-9, 40);
    for (std::size_t i = 1; i < trace.size(); ++i) {
      bool clear = true;
      for (const auto& r : reports) clear &= distance(r.update, trace[i - 1]) > 1e-9;
      if (!clear) continue;
      const double before = weighted_distance_sum(reports, trace[i - 1]);
      CHECK(weighted_distance_sum(reports, trace[i]) <= before * (1 + 1e-12));
    }
  }
}

TEST_CASE("bulyan") {
  std::vector<UpdateVector> pts{{0.01, 0}, {-0.02, 0.01}, {0, -0.01}, {0.015, 0.02}, {-0.01, -0.02}};
  pts.push_back({10, 10});
  pts.push_back({-10, -10});
  const auto r = bulyan(make(pts), 1);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(r.aggregate[j] >= -0.02);
    CHECK(r.aggregate[j] <= 0.02);
  }
  CHECK(r.weights[5].weight == 0.0);
  CHECK(r.weights[6].weight == 0.0);

  const auto reports = make({{1, 2}, {4, -1}, {0, 0}});
  const auto plain = bulyan(reports, 0).aggregate;
  CHECK(plain[0] == doctest::Approx(5.0 / 3));
  CHECK(plain[1] == doctest::Approx(1.0 / 3));

  CHECK_THROWS_AS(bulyan(make({{0}, {1}, {2}, {3}}), 1), AggregationError);
}

TEST_CASE("foolsgold") {
  SUBCASE("identical histories get no weight") {
    const auto reports = make({{1, 0}, {1, 0}, {0, 1}});
    const std::vector<UpdateVector> hist{{1, 1}, {1, 1}, {1, -1}};
    const auto r = foolsgold(reports, hist);
    CHECK(r.weights[0].weight == 0.0);
    CHECK(r.weights[1].weight == 0.0);
    CHECK(r.accepted_ids == std::vector<int>{2});
  }
  SUBCASE("orthogonal histories reduce to fedavg") {
    const auto reports = make({{1, 0, 0}, {0, 4, 0}, {2, 2, 2}}, {3, 1, 2});
    const std::vector<UpdateVector> hist{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    const auto r = foolsgold(reports, hist);
    const auto avg = fedavg(reports).aggregate;
    for (std::size_t j = 0; j < 3; ++j) CHECK(r.aggregate[j] == doctest::Approx(avg[j]));
  }
  SUBCASE("sybil pair among orthogonal benign clients") {
    // Cosines: 1 between the sybils, 0 for every other pair, so
    // cs = {1, 1, 0, 0} and trust = {0, 0, 1, 1}.
    const auto reports = make({{5, 5, 0}, {5, 5, 0}, {1, 0, 0}, {0, 0, 3}}, {10, 10, 2, 6});
    const std::vector<UpdateVector> hist{{1, 1, 0}, {1, 1, 0}, {1, -1, 0}, {0, 0, 1}};
    const auto r = foolsgold(reports, hist);
    CHECK(r.accepted_ids == std::vector<int>{2, 3});
    CHECK(r.weights[2].weight == doctest::Approx(2.0));
    CHECK(r.weights[3].weight == doctest::Approx(6.0));
    CHECK(r.aggregate[0] == doctest::Approx(0.25));
    CHECK(r.aggregate[1] == doctest::Approx(0.0));
    CHECK(r.aggregate[2] == doctest::Approx(2.25));
  }
  SUBCASE("everyone a sybil") {
    const auto reports = make({{1}, {1}});
    const std::vector<UpdateVector> hist{{1}, {1}};
    CHECK_THROWS_AS(foolsgold(reports, hist), AggregationError);
  }
}

TEST_CASE("zeno") {
  SUBCASE("closed-form quadratic score") {
    const auto s = zeno_scores(make({{0.0}}), {1.0}, quadratic, 0.1, 0.05);
    CHECK(s[0] == doctest::Approx(0.045).epsilon(1e-12));
  }
  SUBCASE("unchanged report scores zero") {
    const auto s = zeno_scores(make({{1.0, -2.0}, {0.5, 0.5}}), {1.0, -2.0}, quadratic, 0.1, 0.05);
    CHECK(s[0] == 0.0);
  }
  SUBCASE("keep selects the best scores") {
    const auto reports = make({{0.0}, {1.0}, {5.0}}, {1, 1, 99});
    const auto r = zeno(reports, {1.0}, quadratic, 0.1, 0.05, 1);
    CHECK(r.accepted_ids == std::vector<int>{0});
    CHECK(r.op_counts.loss_evals == 4);
    const auto all = zeno(reports, {1.0}, quadratic, 0.1, 0.05, 3);
    CHECK(all.aggregate[0] == doctest::Approx(2.0));
  }
}

TEST_CASE("fltrust") {
  SUBCASE("clipping and rescaling") {
    const auto r = fltrust(make({{0.5, 0}, {-1, 0}}), {0, 0}, {1, 0});
    CHECK(r.aggregate[0] == doctest::Approx(1.0));
    CHECK(r.aggregate[1] == doctest::Approx(0.0));
    CHECK(r.accepted_ids == std::vector<int>{0});
  }
  SUBCASE("no trust at all") {
    CHECK_THROWS_AS(fltrust(make({{-1, 0}, {0, 2}}), {0, 0}, {1, 0}), AggregationError);
  }
  SUBCASE("trust ignores positive rescaling of a delta") {
    const auto a = fltrust(make({{1, 1}, {2, -1}}), {0, 0}, {1, 0.2});
    const auto b = fltrust(make({{7, 7}, {2, -1}}), {0, 0}, {1, 0.2});
    CHECK(a.weights[0].weight == doctest::Approx(b.weights[0].weight));
    CHECK(a.aggregate[0] == doctest::Approx(b.aggregate[0]));
  }
}

TEST_CASE("brute-force oracle equivalence") {
  RngStream rng(20, 20);
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 2 + rng.uniform_int(5);  // 2..6
    const std::size_t d = 1 + rng.uniform_int(3);  // 1..3
    const bool grid = t % 3 == 0;
    const auto reports = shuffled(random_instance(rng, k, d, grid), rng);
    const auto pts = oracle::from_reports(reports);
    const int f = static_cast<int>(rng.uniform_int(k / 2));

    CHECK(krum(reports, f).aggregate.raw() == oracle::krum(pts, f));
    const int m = 1 + static_cast<int>(rng.uniform_int(k - f));
    CHECK(multi_krum(reports, f, m).aggregate.raw() == oracle::multi_krum(pts, f, m));
    CHECK(faba(reports, f).aggregate.raw() == oracle::faba(pts, f));
    const int fb = static_cast<int>(rng.uniform_int((k - 1) / 4 + 1));
    CHECK(bulyan(reports, fb).aggregate.raw() == oracle::bulyan(pts, fb));

    CHECK(coordinate_median(reports).aggregate.raw() == oracle::coordinate_median(pts));
    const int beta = static_cast<int>(rng.uniform_int((k + 1) / 2));
    CHECK(trimmed_mean(reports, beta).aggregate.raw() == oracle::trimmed_mean(pts, beta));
    const int keep = 1 + static_cast<int>(rng.uniform_int(k));
    CHECK(mean_around_median(reports, keep).aggregate.raw() ==
          oracle::mean_around_median(pts, oracle::all(pts), keep));
  }
}

TEST_CASE("every aggregator is permutation invariant") {
  RngStream rng(30, 30);
  AggregatorConfig cfg{.f = 1, .m = 4, .beta = 2, .k_near = 5, .gamma = 0.1, .zeno_keep = 5};
  const Architecture arch = Architecture::softmax(2, 2);
  RngStream data_rng(30, 31);
  const auto val = generate_blobs(2, 2, 10, 0.3, data_rng);
  for (int t = 0; t < 25; ++t) {
    auto reports = random_instance(rng, 7, arch.param_count(), t % 4 == 0);
    std::vector<UpdateVector> hist;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      std::vector<double> h(arch.param_count());
      for (auto& v : h) v = rng.normal();
      hist.emplace_back(h);
    }
    ServerSideAssets assets{.validation_set = &val,
                            .server_shard = &val,
                            .previous_global = UpdateVector::zeros(arch.param_count()),
                            .train = {.epochs = 1, .batch_size = 4, .learning_rate = 0.1, .architecture = arch},
                            .server_seed = 5};
    std::vector<std::size_t> perm(reports.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<SubmittedUpdate> p_reports;
    std::vector<UpdateVector> p_hist;
    for (auto i : perm) {
      p_reports.push_back(reports[i]);
      p_hist.push_back(hist[i]);
    }
    for (const auto& name : aggregator_names()) {
      CAPTURE(name);
      AggregationResult a, b;
      bool failed_a = false, failed_b = false;
      try {
        a = aggregate(name, reports, cfg, {&assets, hist});
      } catch (const AggregationError&) {
        failed_a = true;
      }
      try {
        b = aggregate(name, p_reports, cfg, {&assets, p_hist});
      } catch (const AggregationError&) {
        failed_b = true;
      }
      REQUIRE(failed_a == failed_b);
      if (failed_a) continue;
      for (std::size_t j = 0; j < a.aggregate.dim(); ++j) {
        CHECK(std::abs(a.aggregate[j] - b.aggregate[j]) <= 1e-12 * std::max(1.0, std::abs(a.aggregate[j])));
      }
      CHECK(a.accepted_ids == b.accepted_ids);
      CHECK(a.weights == b.weights);
    }
  }
}

TEST_CASE("envelope property") {
  RngStream rng(40, 40);
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 3 + rng.uniform_int(6);
    const auto reports = random_instance(rng, k, 4, t % 2 == 0);
    CHECK(within_envelope(coordinate_median(reports).aggregate, reports));
    CHECK(within_envelope(trimmed_mean(reports, static_cast<int>((k - 1) / 2)).aggregate, reports));
    CHECK(within_envelope(mean_around_median(reports, 2).aggregate, reports));
    const auto g = geometric_median(reports, 1e-6, 3).aggregate;
    for (std::size_t j = 0; j < g.dim(); ++j) {
      double lo = reports[0].update[j], hi = lo;
      for (const auto& r : reports) {
        lo = std::min(lo, r.update[j]);
        hi = std::max(hi, r.update[j]);
      }
      CHECK(g[j] >= lo - 1e-12);
      CHECK(g[j] <= hi + 1e-12);
    }
  }
}

TEST_CASE("breakdown with four extreme outliers out of ten") {
  RngStream rng(50, 50);
  std::vector<SubmittedUpdate> reports;
  for (int i = 0; i < 10; ++i) {
    std::vector<double> x(5);
    for (auto& v : x) v = i < 6 ? rng.normal(0, 0.1) : (i % 2 ? 1e6 : -1e6);
    reports.push_back({i, UpdateVector(x), 1});
  }
  const std::span<const SubmittedUpdate> benign(reports.data(), 6);
  CHECK(within_envelope(coordinate_median(reports).aggregate, benign));
  CHECK(within_envelope(trimmed_mean(reports, 4).aggregate, benign));
}

TEST_CASE("op counts scale as expected") {
  for (int k : {10, 20, 40}) {
    CAPTURE(k);
    RngStream rng(60, static_cast<std::uint64_t>(k));
    const std::size_t d = 30;
    const auto reports = random_instance(rng, static_cast<std::size_t>(k), d, false);
    const int f = k / 5;
    CHECK(krum(reports, f).op_counts.distance_evals == k * (k - 1) / 2);
    CHECK(multi_krum(reports, f, k - f).op_counts.distance_evals == k * (k - 1) / 2);
    CHECK(faba(reports, f).op_counts.distance_evals == f * k - f * (f - 1) / 2);
    const auto med = coordinate_median(reports).op_counts;
    CHECK(med.coordinate_sorts == static_cast<std::int64_t>(d));
    CHECK(trimmed_mean(reports, f).op_counts.coordinate_sorts == static_cast<std::int64_t>(d));
    // A comparison sort of k items needs at least log2(k!) comparisons.
    const double lower = std::lgamma(k + 1.0) / std::log(2.0);
    CHECK(static_cast<double>(med.sort_comparisons) >= d * lower);
    CHECK(static_cast<double>(med.sort_comparisons) <= d * 4.0 * k * std::log2(k));
  }
}

TEST_CASE("rules that ignore declared sizes are blind to the weight attack") {
  RngStream rng(70, 70);
  auto honest = random_instance(rng, 10, 4, false);
  for (auto& r : honest) r.declared_size = 500;
  auto lying = honest;
  for (int i = 6; i < 10; ++i) lying[i].declared_size = 5000;
  const auto prev = UpdateVector::zeros(4);
  const UpdateVector server{0.3, -0.2, 0.1, 0.4};

  CHECK(coordinate_median(honest).aggregate == coordinate_median(lying).aggregate);
  CHECK(trimmed_mean(honest, 2).aggregate == trimmed_mean(lying, 2).aggregate);
  CHECK(mean_around_median(honest, 6).aggregate == mean_around_median(lying, 6).aggregate);
  CHECK(krum(honest, 2).aggregate == krum(lying, 2).aggregate);
  CHECK(multi_krum(honest, 2, 6).accepted_ids == multi_krum(lying, 2, 6).accepted_ids);
  CHECK(zeno(honest, prev, quadratic, 0.1, 5e-4, 6).aggregate ==
        zeno(lying, prev, quadratic, 0.1, 5e-4, 6).aggregate);
  CHECK(fltrust(honest, prev, server).aggregate == fltrust(lying, prev, server).aggregate);

  CHECK(fedavg(honest).aggregate != fedavg(lying).aggregate);
}

TEST_CASE("dispatcher") {
  const auto reports = make({{0.0}, {1.0}, {2.0}, {3.0}, {4.0}});
  AggregatorConfig cfg{.f = 1, .m = 3, .beta = 1, .k_near = 3, .zeno_keep = 3};
  CHECK(aggregate("median", reports, cfg).aggregate[0] == 2.0);
  CHECK(aggregate("krum", reports, cfg).accepted_ids.size() == 1);
  CHECK_THROWS_AS(aggregate("zeno", reports, cfg), std::invalid_argument);
  CHECK_THROWS_AS(aggregate("afa", reports, cfg), std::invalid_argument);
  CHECK(aggregator_names().size() == 12);
  CHECK(is_known_aggregator("fltrust"));
  CHECK(!is_known_aggregator("rsa"));

  const std::vector<SubmittedUpdate> none;
  CHECK_THROWS_AS(fedavg(none), AggregationError);
  CHECK_THROWS_AS(fedavg(make({{0.0}, {1.0, 2.0}})), DimensionError);
}
