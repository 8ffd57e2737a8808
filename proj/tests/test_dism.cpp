#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "fedtcd/dism.hpp"
#include "fedtcd/errors.hpp"
#include "oracles.hpp"

using namespace fedtcd;

namespace {

// One-slice panel (T = 1, L = 0) from an n x D sample matrix.
TimeSeriesPanel static_panel(const Eigen::MatrixXd& X, std::size_t id = 0) {
    TimeSeriesPanel p{id, Tensor3(X.rows(), 1, X.cols())};
    for (Eigen::Index s = 0; s < X.rows(); ++s)
        for (Eigen::Index d = 0; d < X.cols(); ++d) p.values(s, 0, d) = X(s, d);
    return p;
}

GlobalMoments moments_of(std::span<const TimeSeriesPanel> panels, const RFFParams& rff) {
    std::vector<StatPacket> pk;
    for (const auto& p : panels) pk.push_back(time_slice_stats(p, 0, 0, rff));
    return aggregate_moments(pk);
}

GlobalMoments moments_of(const TimeSeriesPanel& p, const RFFParams& rff) { return moments_of(std::span(&p, 1), rff); }

Eigen::MatrixXd chain(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::MatrixXd X(n, 3);
    for (std::size_t s = 0; s < n; ++s) {
        X(s, 0) = z(rng);
        X(s, 1) = 0.8 * X(s, 0) + 0.6 * z(rng);
        X(s, 2) = 0.8 * X(s, 1) + 0.6 * z(rng);
    }
    return X;
}

ScenarioSpec dism_spec() {
    ScenarioSpec s;
    s.D = 3;
    s.T = 12;
    s.L = 1;
    s.K = 2;
    s.n_k = {300, 300};
    s.sparsity = 0.0;
    s.dynamics = Dynamics::Constant;
    s.seed = 5;
    return s;
}

BinaryMatrix matrix(std::initializer_list<std::uint8_t> v, std::size_t D) {
    BinaryMatrix m(D, D);
    std::copy(v.begin(), v.end(), m.data.begin());
    return m;
}

}  // namespace

TEST_CASE("aggregate_moments: single client is the identity") {
    const auto p = static_panel(chain(50, 1));
    const auto rff = make_rff(6, 1.0, 2);
    const auto pk = time_slice_stats(p, 0, 0, rff);
    const auto g = aggregate_moments(std::span(&pk, 1));
    CHECK(g.pooled == pk.moments);
    CHECK(g.n() == 50);
}

TEST_CASE("aggregate_moments: identical clients pool to either") {
    const auto X = chain(40, 3);
    const std::vector<TimeSeriesPanel> ps{static_panel(X, 0), static_panel(X, 1)};
    const auto rff = make_rff(6, 1.0, 2);
    const auto g = moments_of(ps, rff);
    const auto one = moments_of(ps[0], rff);
    CHECK((g.covariance(0, 2) - one.covariance(0, 2)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(g.n() == 80);
}

TEST_CASE("aggregate_moments: split panel matches the whole-panel covariance") {
    const auto X = chain(100, 4);
    const auto rff = make_rff(8, 1.0, 2);
    const std::vector<TimeSeriesPanel> parts{static_panel(X.topRows(37), 0), static_panel(X.bottomRows(63), 1)};
    const auto g = moments_of(parts, rff);
    const auto ref = oracle::slice_moments(static_panel(X), 0, rff, Standardizer::identity(3));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            const Eigen::MatrixXd want = oracle::centered(ref, i, j);
            CHECK((g.covariance(i, j) - want).norm() <= 1e-10 * std::max(1.0, want.norm()));
        }
}

TEST_CASE("aggregate_moments: rejects mismatched packets") {
    const auto p = static_panel(chain(20, 1));
    std::vector<StatPacket> pk{time_slice_stats(p, 0, 0, make_rff(4, 1.0, 1)),
                               time_slice_stats(p, 0, 0, make_rff(4, 1.0, 2))};
    CHECK_THROWS_AS(aggregate_moments(pk), ConfigError);
    pk[1] = pk[0];
    pk[1].t = 3;
    CHECK_THROWS_AS(aggregate_moments(pk), ConfigError);
    CHECK_THROWS_AS(aggregate_moments(std::span<const StatPacket>()), ConfigError);
}

TEST_CASE("conditional cross-covariance matches the Schur complement") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::MatrixXd Y(20, 7);
    for (int a = 0; a < Y.size(); ++a) Y.data()[a] = z(rng);
    const Eigen::MatrixXd C = Y.transpose() * Y / 20.0;
    CiBlocks b{C.block(0, 2, 2, 2), C.block(0, 4, 2, 3), C.block(4, 4, 3, 3), C.block(4, 2, 3, 2)};
    const double ridge = 1e-3 * C.block(4, 4, 3, 3).trace() / 3.0;
    const Eigen::MatrixXd want =
        b.xy - b.xz * (b.zz + ridge * Eigen::MatrixXd::Identity(3, 3)).inverse() * b.zy;
    CHECK((conditional_cross_covariance(b, 1e-3) - want).cwiseAbs().maxCoeff() < 1e-12);
    CiBlocks none{b.xy, {}, {}, {}};
    CHECK(conditional_cross_covariance(none, 1e-3) == b.xy);
    CiBlocks bad = b;
    bad.zz(0, 0) = std::nan("");
    CHECK_THROWS_AS(conditional_cross_covariance(bad, 1e-3), NumericError);
}

TEST_CASE("conditioning set is everything but the pair") {
    CHECK(conditioning_set(5, 1, 3) == std::vector<std::size_t>{0, 2, 4});
    CHECK(conditioning_set(2, 0, 1).empty());
}

TEST_CASE("fcit: copied variable gives n * ||C_ii||^2") {
    Eigen::MatrixXd X = chain(200, 7);
    X.col(2) = X.col(0);
    const auto g = moments_of(static_panel(X), make_rff(8, 1.0, 1));
    const double want = 200.0 * g.covariance(0, 0).squaredNorm();
    CHECK(fcit_statistic(g, 0, 2, {}, {1e-3, false}) == doctest::Approx(want).epsilon(1e-12));
    CHECK(want > 0.0);
}

TEST_CASE("fcit: argument validation") {
    const auto g = moments_of(static_panel(chain(30, 1)), make_rff(4, 1.0, 1));
    const std::vector<std::size_t> z0{0};
    CHECK_THROWS_AS(fcit_statistic(g, 1, 1, {}), ConfigError);
    CHECK_THROWS_AS(fcit_statistic(g, 0, 2, z0), ConfigError);
    CHECK_THROWS_AS(fcit_statistic(g, 0, 5, {}), ConfigError);
}

TEST_CASE("fcit: chain endpoints are dependent, independent given the middle") {
    // Permutation null: shuffle V2 across samples, unconditional statistic.
    const auto X = chain(1000, 11);
    const auto rff = make_rff(16, 1.0, 3);
    const CiOptions opts{1e-3, false};
    std::mt19937_64 rng(99);
    std::vector<double> null;
    std::vector<Eigen::Index> order(1000);
    for (int b = 0; b < 100; ++b) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        Eigen::MatrixXd Y = X;
        for (Eigen::Index s = 0; s < 1000; ++s) Y(s, 2) = X(order[s], 2);
        null.push_back(fcit_statistic(moments_of(static_panel(Y), rff), 0, 2, {}, opts));
    }
    const double delta = quantile(null, 0.95);
    const auto g = moments_of(static_panel(X), rff);
    const std::vector<std::size_t> z{1};
    CHECK(fcit_statistic(g, 0, 2, {}, opts) > delta);
    CHECK(fcit_statistic(g, 0, 2, z, opts) < delta);
}

TEST_CASE("surrogate statistic equals the plain one for a single client") {
    const auto g = moments_of(static_panel(chain(80, 2)), make_rff(6, 1.0, 1));
    const std::vector<std::size_t> z{1};
    CHECK(fcit_statistic(g, 0, 2, z, {1e-3, true}) == fcit_statistic(g, 0, 2, z, {1e-3, false}));
}

TEST_CASE("surrogate explains a client-level shift") {
    // Two clients whose V0 and V1 means move together; no dependence within a client.
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<TimeSeriesPanel> ps;
    for (int k = 0; k < 2; ++k) {
        Eigen::MatrixXd X(400, 2);
        for (int s = 0; s < 400; ++s) {
            X(s, 0) = (k ? 1.0 : -1.0) + 0.3 * z(rng);
            X(s, 1) = (k ? 1.0 : -1.0) + 0.3 * z(rng);
        }
        ps.push_back(static_panel(X, k));
    }
    const auto g = moments_of(ps, make_rff(16, 1.0, 1));
    const double plain = fcit_statistic(g, 0, 1, {}, {1e-3, false});
    const double strat = fcit_statistic(g, 0, 1, {}, {1e-3, true});
    CHECK(plain > 50.0 * strat);
}

TEST_CASE("hard mask: zero diagonal, symmetric, monotone in the threshold") {
    const auto g = moments_of(static_panel(chain(300, 5)), make_rff(8, 1.0, 1));
    const Eigen::MatrixXd stats = pair_statistics(g);
    CHECK((stats - stats.transpose()).cwiseAbs().maxCoeff() == 0.0);
    std::vector<double> deltas{0.0, 0.05, 0.2, 1.0, 5.0, 1e9};
    BinaryMatrix prev = compute_hard_mask(g, deltas[0]);
    for (std::size_t q = 1; q < deltas.size(); ++q) {
        const BinaryMatrix S = compute_hard_mask(g, deltas[q]);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(S(i, i) == 0);
            for (std::size_t j = 0; j < 3; ++j) CHECK(S(i, j) <= prev(i, j));
        }
        prev = S;
    }
    for (auto v : prev.data) CHECK(v == 0);
}

TEST_CASE("all-zero data removes every edge") {
    const auto g = moments_of(static_panel(Eigen::MatrixXd::Zero(20, 3)), make_rff(4, 1.0, 1));
    const BinaryMatrix S = compute_hard_mask(g, 1e-9);
    for (auto v : S.data) CHECK(v == 0);
}

TEST_CASE("local indicator: copy is dependent") {
    Eigen::MatrixXd X = chain(200, 8);
    X.col(1) = X.col(0);
    const auto pk = time_slice_stats(static_panel(X), 0, 0, make_rff(8, 1.0, 1));
    CHECK(local_kci_indicator(pk, 0, 1, 0.5) == 1);
    CHECK(local_statistic(pk.moments, 0, 1, std::vector<std::size_t>{2}, 1e-3) >= 0.0);
}

TEST_CASE("quantile is type 7") {
    CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == doctest::Approx(2.5));
    CHECK(quantile({4.0, 1.0, 3.0, 2.0, 5.0}, 0.95) == doctest::Approx(4.8));
    CHECK(quantile({7.0}, 0.3) == 7.0);
}

TEST_CASE("temporal filter: spike patterns") {
    const std::vector<std::uint8_t> none;
    CHECK(median_filter(std::vector<std::uint8_t>{0, 0, 1, 0, 0}, none) == std::vector<std::uint8_t>{0, 0, 0, 0, 0});
    CHECK(median_filter(std::vector<std::uint8_t>{1, 1, 0, 1, 1}, none) == std::vector<std::uint8_t>{1, 1, 1, 1, 1});
    CHECK(median_filter(std::vector<std::uint8_t>{1, 1, 1, 1}, none) == std::vector<std::uint8_t>{1, 1, 1, 1});
    CHECK(median_filter(std::vector<std::uint8_t>{0, 0, 0}, none) == std::vector<std::uint8_t>{0, 0, 0});
    CHECK(median_filter(std::vector<std::uint8_t>{0, 1}, none) == std::vector<std::uint8_t>{0, 1});
    // A two-step run survives window 3 but not window 5.
    const std::vector<std::uint8_t> run{0, 0, 1, 1, 0, 0, 0};
    CHECK(median_filter(run, none) == run);
    CHECK(median_filter(run, std::vector<std::uint8_t>{0, 0, 0, 1, 0, 0, 0}) ==
          std::vector<std::uint8_t>{0, 0, 1, 0, 0, 0, 0});
}

TEST_CASE("omega alarm flags a variance burst") {
    const std::vector<double> omega{1.0, 1.1, 0.9, 1.0, 9.0, 1.05, 0.95};
    CHECK(omega_alarm(omega) == std::vector<std::uint8_t>{0, 0, 0, 0, 1, 0, 0});
    CHECK(omega_alarm(std::vector<double>{1.0, 50.0}) == std::vector<std::uint8_t>{0, 0});
}

TEST_CASE("temporal_filter over an indicator series") {
    IndicatorSeries s(5, 1, 2);
    const std::uint8_t spike[5] = {0, 0, 1, 0, 0};
    const std::uint8_t dip[5] = {1, 1, 0, 1, 1};
    for (std::size_t t = 0; t < 5; ++t) s(t, 0, 0, 1) = spike[t], s(t, 0, 1, 0) = dip[t];
    const auto out = temporal_filter(s, Tensor3(5, 1, 2, 1.0));
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(out(t, 0, 0, 1) == 0);
        CHECK(out(t, 0, 1, 0) == 1);
    }
    CHECK_THROWS_AS(temporal_filter(s, Tensor3(4, 1, 2)), ConfigError);
}

TEST_CASE("zero-order hold") {
    const std::vector<std::size_t> times{1, 4};
    const std::vector<char> vals{'A', 'B'};
    CHECK(zero_order_hold<char>(times, vals, 6) == std::vector<char>{'A', 'A', 'A', 'A', 'B', 'B'});
    const std::vector<std::size_t> every{0, 1, 2};
    const std::vector<int> v{5, 6, 7};
    CHECK(zero_order_hold<int>(every, v, 3) == v);
    CHECK(hold_index(times, 6) == std::vector<std::size_t>{0, 0, 0, 0, 1, 1});
    CHECK_THROWS_AS(hold_index(std::vector<std::size_t>{}, 3), ConfigError);
}

TEST_CASE("soft mask truth table") {
    for (std::uint8_t s = 0; s < 2; ++s)
        for (std::uint8_t a = 0; a < 2; ++a)
            for (std::uint8_t b = 0; b < 2; ++b) {
                BinaryMatrix S(1, 1, s);
                const std::vector<BinaryMatrix> I{BinaryMatrix(1, 1, a), BinaryMatrix(1, 1, b)};
                const std::uint8_t want = (s && !(a && b)) ? 1 : 0;
                CHECK(compute_soft_mask(S, I)(0, 0) == want);
            }
    const std::vector<BinaryMatrix> three{matrix({0, 1, 1, 0}, 2), matrix({0, 0, 1, 0}, 2), matrix({0, 1, 1, 0}, 2)};
    const BinaryMatrix L = compute_soft_mask(matrix({0, 1, 1, 0}, 2), three);
    CHECK(L(0, 1) == 1);
    CHECK(L(1, 0) == 0);
}

TEST_CASE("run_dism: null graph removes everything") {
    const auto panels = generate(dism_spec()).first;
    const auto r = run_dism(panels, 1, {});
    CHECK(priors_consistent(r.priors));
    std::size_t kept = 0;
    for (auto v : r.priors.S.data) kept += v;
    // The permutation threshold admits about 5% false dependences.
    CHECK(kept <= r.priors.S.size() / 5);
    for (std::size_t a = 0; a < r.priors.L_soft.size(); ++a) CHECK(r.priors.L_soft.data[a] <= r.priors.S.data[a]);
}

TEST_CASE("run_dism: false-dependence rate on null data") {
    // One slice per seed, three pair tests each.
    std::size_t kept = 0, tests = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        auto spec = dism_spec();
        spec.T = 2;
        spec.n_k = {150, 150};
        spec.seed = seed;
        DismConfig cfg;
        cfg.h = 16;
        cfg.seed = seed;
        const auto r = run_dism(generate(spec).first, 1, cfg);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = i + 1; j < 3; ++j) kept += r.priors.S(1, i, j) || r.priors.S(1, j, i), ++tests;
    }
    CHECK(kept <= tests / 10);
}

TEST_CASE("run_dism: deterministic, nested, held between samples") {
    auto spec = dism_spec();
    spec.sparsity = 0.67;
    const auto panels = generate(spec).first;
    DismConfig cfg;
    cfg.T_S = 3;
    const auto a = run_dism(panels, 1, cfg);
    const auto b = run_dism(panels, 1, cfg);
    CHECK(a.priors == b.priors);
    CHECK(priors_consistent(a.priors));
    CHECK(a.priors.sampled_times == std::vector<std::size_t>{1, 4, 7, 10});
    for (std::size_t t = 0; t < spec.T; ++t) {
        const std::size_t src = t < 4 ? 1 : (t < 7 ? 4 : (t < 10 ? 7 : 10));
        CHECK(std::equal(a.priors.S.slice(t), a.priors.S.slice(t) + 9, a.priors.S.slice(src)));
    }
    CHECK(a.log.bytes_up > 0);
    CHECK(a.packets.size() == 2 * 4);
}

TEST_CASE("run_dism: single sampled time gives constant masks") {
    const auto spec = dism_spec();
    const auto panels = generate(spec).first;
    DismConfig cfg;
    cfg.T_S = spec.T;
    const auto r = run_dism(panels, 1, cfg);
    CHECK(r.priors.sampled_times.size() == 1);
    for (std::size_t t = 1; t < spec.T; ++t)
        CHECK(std::equal(r.priors.S.slice(t), r.priors.S.slice(t) + 9, r.priors.S.slice(0)));
}

TEST_CASE("run_dism: fixed thresholds override calibration") {
    const auto panels = generate(dism_spec()).first;
    DismConfig cfg;
    cfg.delta_hard = 0.0;
    cfg.delta_local = 0.0;
    const auto r = run_dism(panels, 1, cfg);
    CHECK(r.log.thresholds.delta_hard == 0.0);
    for (std::size_t t = 0; t < r.priors.T(); ++t)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) CHECK(r.priors.S(t, i, j) == (i != j ? 1 : 0));
    cfg.delta_hard = 1e12;
    const auto none = run_dism(panels, 1, cfg);
    for (auto v : none.priors.S.data) CHECK(v == 0);
    for (auto v : none.priors.S_A.data) CHECK(v == 0);
}

TEST_CASE("static lag priors: consistent lag edge kept without a flag") {
    auto spec = dism_spec();
    spec.K = 3;
    spec.n_k = {300, 300, 300};
    spec.lag_edges.push_back({1, 0, 1, 0.5});
    const auto r = run_dism(generate(spec).first, 1, {});
    CHECK(r.priors.S_A(0, 0, 1) == 1);
    CHECK(r.priors.L_soft_A(0, 0, 1) == 0);
}

TEST_CASE("static lag priors: lag edge on one client only is kept and flagged") {
    auto spec = dism_spec();
    spec.n_k = {500, 500};
    spec.inconsistent_edges.push_back({1, 0, 2, {1}});
    const auto [panels, truth] = generate(spec);
    REQUIRE(truth.A_true(0, 0, 2) != 0.0);
    const auto r = run_dism(panels, 1, {});
    CHECK(r.priors.S_A(0, 0, 2) == 1);
    CHECK(r.priors.L_soft_A(0, 0, 2) == 1);
}
