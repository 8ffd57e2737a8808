#include "fedtcd/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "fedtcd/bytes.hpp"
#include "fedtcd/errors.hpp"

namespace fedtcd {

RFFParams make_rff(std::size_t h, double sigma, std::uint64_t seed) {
    if (h < 2) throw ConfigError("rff: feature dimension h must be >= 2");
    if (!(sigma > 0.0)) throw ConfigError("rff: bandwidth sigma must be positive");
    RFFParams p{h, std::vector<double>(h), std::vector<double>(h), sigma, seed};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> freq(0.0, 1.0 / sigma);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (std::size_t a = 0; a < h; ++a) {
        p.frequencies[a] = freq(rng);
        p.phases[a] = phase(rng);
    }
    return p;
}

std::vector<double> rff_map(double x, const RFFParams& params) {
    const double scale = std::sqrt(2.0 / static_cast<double>(params.h));
    std::vector<double> out(params.h);
    for (std::size_t a = 0; a < params.h; ++a) out[a] = scale * std::cos(params.frequencies[a] * x + params.phases[a]);
    return out;
}

Eigen::MatrixXd feature_matrix(const Eigen::Ref<const Eigen::VectorXd>& x, const RFFParams& params) {
    const auto h = static_cast<Eigen::Index>(params.h);
    const double scale = std::sqrt(2.0 / static_cast<double>(params.h));
    Eigen::Map<const Eigen::RowVectorXd> w(params.frequencies.data(), h);
    Eigen::Map<const Eigen::RowVectorXd> b(params.phases.data(), h);
    Eigen::MatrixXd arg = x * w;
    arg.rowwise() += b;
    return scale * arg.array().cos().matrix();
}

Standardizer Standardizer::identity(std::size_t D) {
    return {std::vector<double>(D, 0.0), std::vector<double>(D, 1.0)};
}

VariableSums variable_sums(const TimeSeriesPanel& panel, std::size_t L) {
    const std::size_t D = panel.D();
    VariableSums out{0, std::vector<double>(D, 0.0), std::vector<double>(D, 0.0)};
    for (std::size_t s = 0; s < panel.n(); ++s) {
        for (std::size_t t = L; t < panel.T(); ++t) {
            for (std::size_t d = 0; d < D; ++d) {
                const double v = panel(s, t, d);
                out.sum[d] += v;
                out.sum_sq[d] += v * v;
            }
            ++out.count;
        }
    }
    return out;
}

Standardizer combine_variable_sums(std::span<const VariableSums> parts, bool within_client) {
    if (parts.empty()) throw ConfigError("standardizer: no client sums");
    const std::size_t D = parts.front().sum.size();
    std::size_t count = 0;
    std::vector<double> sum(D, 0.0), sum_sq(D, 0.0), within(D, 0.0);
    for (const auto& p : parts) {
        count += p.count;
        for (std::size_t d = 0; d < D; ++d) {
            sum[d] += p.sum[d];
            sum_sq[d] += p.sum_sq[d];
            if (p.count > 0) within[d] += p.sum_sq[d] - p.sum[d] * p.sum[d] / static_cast<double>(p.count);
        }
    }
    const std::size_t dof = within_client ? count - std::min(count, parts.size()) : count - std::min<std::size_t>(count, 1);
    if (count < 2 || dof < 1) throw ConfigError("standardizer: need at least two observations");
    Standardizer s{std::vector<double>(D), std::vector<double>(D)};
    const auto c = static_cast<double>(count);
    for (std::size_t d = 0; d < D; ++d) {
        s.mean[d] = sum[d] / c;
        const double ss = within_client ? within[d] : sum_sq[d] - c * s.mean[d] * s.mean[d];
        const double var = std::max(0.0, ss / static_cast<double>(dof));
        s.scale[d] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
}

SliceMoments::SliceMoments(std::size_t D_, std::size_t h_, std::size_t L_)
    : n(0), D(D_), h(h_), L(L_), m1(D_ * h_, 0.0), m2(D_ * D_ * h_ * h_, 0.0), lag_m1(L_ * D_ * h_, 0.0),
      lag_m2(L_ * D_ * D_ * h_ * h_, 0.0) {}

Eigen::MatrixXd SliceMoments::centered_cross(std::size_t i, std::size_t j) const {
    return cross(i, j) - mean(i) * mean(j).transpose();
}

Eigen::MatrixXd SliceMoments::centered_lag_cross(std::size_t tau, std::size_t i, std::size_t j) const {
    return lag_cross(tau, i, j) - lag_mean(tau, i) * mean(j).transpose();
}

SliceMoments pool_moments(std::span<const SliceMoments* const> parts) {
    if (parts.empty()) throw ConfigError("pool_moments: nothing to pool");
    const SliceMoments& first = *parts.front();
    SliceMoments out(first.D, first.h, first.L);
    std::size_t total = 0;
    for (const auto* p : parts) {
        if (!p->same_layout(first)) throw ConfigError("pool_moments: layout mismatch");
        total += p->n;
    }
    if (total == 0) throw ConfigError("pool_moments: zero samples");
    out.n = total;
    auto accumulate = [](std::vector<double>& dst, const std::vector<double>& src, double w) {
        for (std::size_t a = 0; a < dst.size(); ++a) dst[a] += w * src[a];
    };
    for (const auto* p : parts) {
        const double w = static_cast<double>(p->n) / static_cast<double>(total);
        accumulate(out.m1, p->m1, w);
        accumulate(out.m2, p->m2, w);
        accumulate(out.lag_m1, p->lag_m1, w);
        accumulate(out.lag_m2, p->lag_m2, w);
    }
    return out;
}

namespace {

Eigen::MatrixXd standardized_slice(const TimeSeriesPanel& panel, std::size_t t, const Standardizer& st) {
    const std::size_t n = panel.n(), D = panel.D();
    Eigen::MatrixXd X(n, D);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t d = 0; d < D; ++d) X(s, d) = (panel(s, t, d) - st.mean[d]) / st.scale[d];
    return X;
}

// Features of all variables side by side: column block d holds phi(V_d).
Eigen::MatrixXd stacked_features(const Eigen::MatrixXd& X, const RFFParams& params) {
    const auto h = static_cast<Eigen::Index>(params.h);
    Eigen::MatrixXd F(X.rows(), X.cols() * h);
    for (Eigen::Index d = 0; d < X.cols(); ++d) F.middleCols(d * h, h) = feature_matrix(X.col(d), params);
    return F;
}

void scatter_gram(const Eigen::MatrixXd& G, std::size_t D, std::size_t h, double* dst) {
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j)
            for (std::size_t a = 0; a < h; ++a)
                for (std::size_t b = 0; b < h; ++b)
                    dst[((i * D + j) * h + a) * h + b] = G(static_cast<Eigen::Index>(i * h + a),
                                                           static_cast<Eigen::Index>(j * h + b));
}

void fill_current(SliceMoments& m, const Eigen::MatrixXd& F) {
    const double inv_n = 1.0 / static_cast<double>(F.rows());
    const Eigen::RowVectorXd means = F.colwise().sum() * inv_n;
    std::copy(means.data(), means.data() + means.size(), m.m1.begin());
    const Eigen::MatrixXd G = (F.transpose() * F) * inv_n;
    scatter_gram(G, m.D, m.h, m.m2.data());
}

void check_slice(const TimeSeriesPanel& panel, std::size_t t, std::size_t L) {
    if (t < L) throw ConfigError("time_slice_stats: slice t must be >= L so lagged slices exist");
    if (t >= panel.T()) throw ConfigError("time_slice_stats: slice t out of range");
    if (panel.n() < 2) throw ConfigError("time_slice_stats: need n >= 2 samples");
}

std::vector<double> slice_variance(const TimeSeriesPanel& panel, std::size_t t) {
    const std::size_t n = panel.n(), D = panel.D();
    std::vector<double> omega(D);
    for (std::size_t d = 0; d < D; ++d) {
        double mean = 0.0;
        for (std::size_t s = 0; s < n; ++s) mean += panel(s, t, d);
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t s = 0; s < n; ++s) ss += (panel(s, t, d) - mean) * (panel(s, t, d) - mean);
        omega[d] = ss / static_cast<double>(n - 1);
    }
    return omega;
}

}  // namespace

StatPacket time_slice_stats(const TimeSeriesPanel& panel, std::size_t t, std::size_t L, const RFFParams& params) {
    return time_slice_stats(panel, t, L, params, Standardizer::identity(panel.D()));
}

StatPacket time_slice_stats(const TimeSeriesPanel& panel, std::size_t t, std::size_t L, const RFFParams& params,
                            const Standardizer& standardizer) {
    check_slice(panel, t, L);
    const std::size_t D = panel.D(), h = params.h;
    StatPacket p{panel.client_id, t, params.seed, SliceMoments(D, h, L), slice_variance(panel, t)};
    p.moments.n = panel.n();

    const Eigen::MatrixXd F = stacked_features(standardized_slice(panel, t, standardizer), params);
    fill_current(p.moments, F);

    const double inv_n = 1.0 / static_cast<double>(panel.n());
    for (std::size_t tau = 0; tau < L; ++tau) {
        const Eigen::MatrixXd Fl = stacked_features(standardized_slice(panel, t - tau - 1, standardizer), params);
        const Eigen::RowVectorXd means = Fl.colwise().sum() * inv_n;
        std::copy(means.data(), means.data() + means.size(), p.moments.lag_m1.begin() + tau * D * h);
        const Eigen::MatrixXd G = (Fl.transpose() * F) * inv_n;
        scatter_gram(G, D, h, p.moments.lag_m2.data() + tau * D * D * h * h);
    }
    return p;
}

StatPacket permuted_slice_stats(const TimeSeriesPanel& panel, std::size_t t, const RFFParams& params,
                                const Standardizer& standardizer, std::uint64_t perm_seed) {
    check_slice(panel, t, 0);
    const std::size_t n = panel.n(), D = panel.D();
    Eigen::MatrixXd X = standardized_slice(panel, t, standardizer);
    std::mt19937_64 rng(perm_seed);
    std::vector<std::size_t> order(n);
    for (std::size_t d = 0; d < D; ++d) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        const Eigen::VectorXd col = X.col(static_cast<Eigen::Index>(d));
        for (std::size_t s = 0; s < n; ++s) X(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(d)) = col(static_cast<Eigen::Index>(order[s]));
    }
    StatPacket p{panel.client_id, t, params.seed, SliceMoments(D, params.h, 0), slice_variance(panel, t)};
    p.moments.n = n;
    fill_current(p.moments, stacked_features(X, params));
    return p;
}

std::vector<std::size_t> sampled_times(std::size_t T, std::size_t L, std::size_t T_S) {
    if (T_S < 1) throw ConfigError("sampling rate T_S must be >= 1");
    std::vector<std::size_t> out;
    for (std::size_t t = L; t < T; t += T_S) out.push_back(t);
    return out;
}

namespace {
constexpr std::uint16_t kPacketVersion = 1;
}

std::vector<std::uint8_t> serialize(const StatPacket& p) {
    ByteWriter body;
    body.put_magic("DDSP");
    body.put<std::uint16_t>(kPacketVersion);
    body.put<std::uint32_t>(static_cast<std::uint32_t>(p.client_id));
    body.put<std::uint32_t>(static_cast<std::uint32_t>(p.t));
    body.put<std::uint64_t>(p.rff_seed);
    body.put<std::uint64_t>(p.moments.n);
    body.put<std::uint32_t>(static_cast<std::uint32_t>(p.moments.D));
    body.put<std::uint32_t>(static_cast<std::uint32_t>(p.moments.h));
    body.put<std::uint32_t>(static_cast<std::uint32_t>(p.moments.L));
    body.put_doubles(p.moments.m1);
    body.put_doubles(p.moments.m2);
    body.put_doubles(p.moments.lag_m1);
    body.put_doubles(p.moments.lag_m2);
    body.put_doubles(p.omega);

    ByteWriter out;
    out.put<std::uint64_t>(body.bytes().size());
    out.put_bytes(body.bytes());
    return out.take();
}

StatPacket deserialize_packet(std::span<const std::uint8_t> bytes) {
    ByteReader outer(bytes, "stat packet");
    const auto len = outer.get<std::uint64_t>();
    if (len != outer.remaining()) throw IoError("stat packet: length prefix does not match record size");
    ByteReader r(outer.get_bytes(len), "stat packet");
    r.expect_magic("DDSP");
    if (r.get<std::uint16_t>() != kPacketVersion) throw IoError("stat packet: unsupported version");
    StatPacket p;
    p.client_id = r.get<std::uint32_t>();
    p.t = r.get<std::uint32_t>();
    p.rff_seed = r.get<std::uint64_t>();
    const auto n = r.get<std::uint64_t>();
    const std::size_t D = r.get<std::uint32_t>(), h = r.get<std::uint32_t>(), L = r.get<std::uint32_t>();
    p.moments = SliceMoments(D, h, L);
    p.moments.n = n;
    r.get_doubles(p.moments.m1);
    r.get_doubles(p.moments.m2);
    r.get_doubles(p.moments.lag_m1);
    r.get_doubles(p.moments.lag_m2);
    p.omega = r.get_doubles(D);
    if (r.remaining() != 0) throw IoError("stat packet: trailing bytes");
    return p;
}

}  // namespace fedtcd
