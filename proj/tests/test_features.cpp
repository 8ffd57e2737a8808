#include <doctest.h>

#include <cmath>

#include "fedtcd/errors.hpp"
#include "fedtcd/features.hpp"
#include "oracles.hpp"

using namespace fedtcd;

namespace {

TimeSeriesPanel random_panel(std::size_t n, std::size_t T, std::size_t D, std::uint64_t seed) {
    ScenarioSpec s;
    s.D = D;
    s.T = T;
    s.L = 1;
    s.K = 1;
    s.n_k = {n};
    s.sparsity = 0.5;
    s.seed = seed;
    return generate(s).first[0];
}

TimeSeriesPanel rows(const TimeSeriesPanel& p, std::size_t begin, std::size_t end, std::size_t id) {
    TimeSeriesPanel out{id, Tensor3(end - begin, p.T(), p.D())};
    for (std::size_t s = begin; s < end; ++s)
        for (std::size_t t = 0; t < p.T(); ++t)
            for (std::size_t d = 0; d < p.D(); ++d) out.values(s - begin, t, d) = p(s, t, d);
    return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("make_rff: deterministic and validated") {
    CHECK(make_rff(16, 1.0, 5) == make_rff(16, 1.0, 5));
    CHECK_FALSE(make_rff(16, 1.0, 5) == make_rff(16, 1.0, 6));
    CHECK_THROWS_AS(make_rff(1, 1.0, 5), ConfigError);
    CHECK_THROWS_AS(make_rff(16, 0.0, 5), ConfigError);
    CHECK_THROWS_AS(make_rff(16, -1.0, 5), ConfigError);
    const auto p = make_rff(64, 1.0, 5);
    for (double b : p.phases) CHECK((b >= 0.0 && b < 2.0 * M_PI));
}

TEST_CASE("rff_map: bounds and zero input") {
    const auto p = make_rff(32, 1.0, 3);
    const double bound = std::sqrt(2.0 / 32.0);
    for (double x : {-3.0, 0.0, 0.7, 10.0}) {
        const auto phi = rff_map(x, p);
        double norm = 0.0;
        for (double v : phi) {
            CHECK(std::abs(v) <= bound + 1e-15);
            norm += v * v;
        }
        CHECK(norm <= 2.0 + 1e-12);
    }
    const auto phi0 = rff_map(0.0, p);
    for (std::size_t a = 0; a < 32; ++a) CHECK(phi0[a] == doctest::Approx(bound * std::cos(p.phases[a])));
}

TEST_CASE("rff_map approximates the Gaussian kernel at large h") {
    const auto p = make_rff(4096, 1.0, 17);
    auto k = [&](double x, double y) {
        const auto a = rff_map(x, p), b = rff_map(y, p);
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    CHECK(k(0.0, 0.0) == doctest::Approx(1.0).epsilon(0.02));
    CHECK(std::abs(k(0.0, 1.0) - std::exp(-0.5)) < 0.03);
}

TEST_CASE("rff_map slope matches finite differences") {
    const auto p = make_rff(16, 1.0, 9);
    const double x = 0.5, h = 1e-6;
    const auto up = rff_map(x + h, p), dn = rff_map(x - h, p);
    const double scale = std::sqrt(2.0 / 16.0);
    double lipschitz = 0.0;
    for (std::size_t a = 0; a < 16; ++a) {
        const double analytic = -scale * p.frequencies[a] * std::sin(p.frequencies[a] * x + p.phases[a]);
        CHECK((up[a] - dn[a]) / (2 * h) == doctest::Approx(analytic).epsilon(1e-6));
        lipschitz += p.frequencies[a] * p.frequencies[a];
    }
    // |phi(x) - phi(y)| <= sqrt(2/h) ||w|| |x - y|
    const auto a = rff_map(0.0, p), b = rff_map(1.0, p);
    double dist = 0.0;
    for (std::size_t i = 0; i < 16; ++i) dist += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(std::sqrt(dist) <= scale * std::sqrt(lipschitz) + 1e-12);
}

TEST_CASE("feature_matrix agrees with rff_map") {
    const auto p = make_rff(8, 0.5, 2);
    Eigen::VectorXd x(3);
    x << -1.0, 0.2, 3.0;
    const Eigen::MatrixXd F = feature_matrix(x, p);
    for (int s = 0; s < 3; ++s) {
        const auto phi = rff_map(x(s), p);
        for (int a = 0; a < 8; ++a) CHECK(F(s, a) == doctest::Approx(phi[a]).epsilon(1e-14));
    }
}

TEST_CASE("time_slice_stats: three hand samples against brute force") {
    TimeSeriesPanel p{0, Tensor3(3, 2, 2)};
    const double v[3][2] = {{0.3, -1.0}, {1.5, 0.4}, {-0.2, 2.0}};
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t d = 0; d < 2; ++d) {
            p.values(s, 1, d) = v[s][d];
            p.values(s, 0, d) = 0.1 * double(s + d);
        }
    const auto rff = make_rff(4, 1.0, 1);
    const auto pk = time_slice_stats(p, 1, 1, rff);
    // E[phi(V_0) phi(V_1)^T] written out sample by sample.
    Eigen::MatrixXd hand = Eigen::MatrixXd::Zero(4, 4);
    for (std::size_t s = 0; s < 3; ++s) {
        const auto a = rff_map(v[s][0], rff), b = rff_map(v[s][1], rff);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) hand(i, j) += a[i] * b[j] / 3.0;
    }
    CHECK((Eigen::MatrixXd(pk.moments.cross(0, 1)) - hand).cwiseAbs().maxCoeff() < 1e-15);
    // Lag block: phi(V_0^{t-1}) against phi(V_1^t).
    Eigen::MatrixXd lag = Eigen::MatrixXd::Zero(4, 4);
    for (std::size_t s = 0; s < 3; ++s) {
        const auto a = rff_map(p(s, 0, 0), rff), b = rff_map(v[s][1], rff);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) lag(i, j) += a[i] * b[j] / 3.0;
    }
    CHECK((Eigen::MatrixXd(pk.moments.lag_cross(0, 0, 1)) - lag).cwiseAbs().maxCoeff() < 1e-15);
    // omega: unbiased variance of the raw values.
    const double m0 = (0.3 + 1.5 - 0.2) / 3.0;
    const double var0 = ((0.3 - m0) * (0.3 - m0) + (1.5 - m0) * (1.5 - m0) + (-0.2 - m0) * (-0.2 - m0)) / 2.0;
    CHECK(pk.omega[0] == doctest::Approx(var0).epsilon(1e-14));
    CHECK(pk.n() == 3);
}

TEST_CASE("time_slice_stats: whole panel against the brute-force oracle") {
    const auto p = random_panel(40, 6, 3, 4);
    const auto rff = make_rff(6, 1.0, 8);
    const Standardizer st{{0.1, -0.2, 0.3}, {1.5, 0.8, 1.1}};
    const auto pk = time_slice_stats(p, 3, 1, rff, st);
    const auto ref = oracle::slice_moments(p, 3, rff, st);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK((Eigen::MatrixXd(pk.moments.cross(i, j)) - ref.m2[i][j]).cwiseAbs().maxCoeff() < 1e-14);
            CHECK((pk.moments.centered_cross(i, j) - oracle::centered(ref, i, j)).cwiseAbs().maxCoeff() < 1e-14);
        }
}

TEST_CASE("second moments: symmetry and PSD after centering") {
    const auto p = random_panel(60, 5, 3, 7);
    const auto pk = time_slice_stats(p, 2, 1, make_rff(8, 1.0, 3));
    for (std::size_t i = 0; i < 3; ++i) {
        const Eigen::MatrixXd Cii = pk.moments.centered_cross(i, i);
        CHECK((Cii - Cii.transpose()).cwiseAbs().maxCoeff() < 1e-14);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Cii);
        CHECK(es.eigenvalues().minCoeff() > -1e-12);
        for (std::size_t j = 0; j < 3; ++j)
            CHECK((Eigen::MatrixXd(pk.moments.cross(i, j)) - Eigen::MatrixXd(pk.moments.cross(j, i)).transpose())
                      .cwiseAbs()
                      .maxCoeff() < 1e-14);
    }
}

TEST_CASE("constant variable: zero omega and zero centered covariance") {
    auto p = random_panel(30, 4, 3, 2);
    for (std::size_t s = 0; s < 30; ++s) p.values(s, 2, 1) = 0.75;
    const auto pk = time_slice_stats(p, 2, 1, make_rff(8, 1.0, 1));
    CHECK(pk.omega[1] == doctest::Approx(0.0));
    for (std::size_t j = 0; j < 3; ++j) CHECK(pk.moments.centered_cross(1, j).norm() < 1e-14);
}

TEST_CASE("identical variables: cross block has the norm of the auto block") {
    auto p = random_panel(30, 4, 3, 2);
    for (std::size_t s = 0; s < 30; ++s) p.values(s, 2, 2) = p.values(s, 2, 1);
    const auto pk = time_slice_stats(p, 2, 1, make_rff(8, 1.0, 1));
    CHECK(pk.moments.centered_cross(1, 2).norm() == doctest::Approx(pk.moments.centered_cross(1, 1).norm()));
}

TEST_CASE("aggregability: split panels pool to the whole-panel moments") {
    const auto p = random_panel(90, 5, 3, 13);
    const auto rff = make_rff(8, 1.0, 21);
    const auto whole = time_slice_stats(p, 3, 1, rff);
    for (std::size_t parts : {2u, 3u, 4u}) {
        std::vector<StatPacket> pk;
        std::size_t begin = 0;
        for (std::size_t q = 0; q < parts; ++q) {
            const std::size_t end = q + 1 == parts ? 90 : begin + 90 / parts + q;
            pk.push_back(time_slice_stats(rows(p, begin, end, q), 3, 1, rff));
            begin = end;
        }
        std::vector<const SliceMoments*> ptrs;
        for (const auto& x : pk) ptrs.push_back(&x.moments);
        const auto pooled = pool_moments(ptrs);
        CHECK(pooled.n == 90);
        CHECK(max_abs_diff(pooled.m1, whole.moments.m1) < 1e-13);
        CHECK(max_abs_diff(pooled.m2, whole.moments.m2) < 1e-13);
        CHECK(max_abs_diff(pooled.lag_m2, whole.moments.lag_m2) < 1e-13);
    }
}

TEST_CASE("packet size does not depend on n") {
    const auto rff = make_rff(8, 1.0, 1);
    const auto a = serialize(time_slice_stats(random_panel(10, 4, 3, 1), 2, 1, rff));
    const auto b = serialize(time_slice_stats(random_panel(500, 4, 3, 1), 2, 1, rff));
    CHECK(a.size() == b.size());
}

TEST_CASE("packet serialization round-trips") {
    const auto pk = time_slice_stats(random_panel(20, 4, 3, 1), 2, 1, make_rff(4, 1.0, 1));
    const auto bytes = serialize(pk);
    CHECK(deserialize_packet(bytes) == pk);
    auto cut = bytes;
    cut.pop_back();
    CHECK_THROWS(deserialize_packet(cut));
}

TEST_CASE("slice preconditions") {
    const auto p = random_panel(20, 4, 3, 1);
    const auto rff = make_rff(4, 1.0, 1);
    CHECK_THROWS_AS(time_slice_stats(p, 0, 1, rff), ConfigError);
    CHECK_THROWS_AS(time_slice_stats(p, 4, 1, rff), ConfigError);
    CHECK_NOTHROW(time_slice_stats(p, 1, 1, rff));
    TimeSeriesPanel one{0, Tensor3(1, 4, 3)};
    CHECK_THROWS_AS(time_slice_stats(one, 2, 1, rff), ConfigError);
}

TEST_CASE("sampled times start at L") {
    CHECK(sampled_times(10, 1, 1) == std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK(sampled_times(10, 1, 4) == std::vector<std::size_t>{1, 5, 9});
    CHECK(sampled_times(10, 2, 10) == std::vector<std::size_t>{2});
    CHECK_THROWS_AS(sampled_times(10, 1, 0), ConfigError);
}

TEST_CASE("standardizer: global and within-client scale") {
    TimeSeriesPanel a{0, Tensor3(2, 2, 1)}, b{1, Tensor3(2, 2, 1)};
    a.values(0, 1, 0) = 1.0, a.values(1, 1, 0) = 3.0;
    b.values(0, 1, 0) = 11.0, b.values(1, 1, 0) = 13.0;
    const std::vector<VariableSums> sums{variable_sums(a, 1), variable_sums(b, 1)};
    const auto g = combine_variable_sums(sums);
    CHECK(g.mean[0] == doctest::Approx(7.0));
    CHECK(g.scale[0] == doctest::Approx(std::sqrt((36 + 16 + 16 + 36) / 3.0)));
    const auto w = combine_variable_sums(sums, true);
    CHECK(w.mean[0] == doctest::Approx(7.0));
    CHECK(w.scale[0] == doctest::Approx(std::sqrt(4.0 / 2.0)));
}
