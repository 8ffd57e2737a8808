#include "fedtcd/dism.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "fedtcd/errors.hpp"
#include "fedtcd/parallel.hpp"

namespace fedtcd {

GlobalMoments aggregate_moments(std::span<const StatPacket> packets) {
    if (packets.empty()) throw ConfigError("aggregate_moments: no packets");
    const StatPacket& first = packets.front();
    GlobalMoments g;
    g.t = first.t;
    g.rff_seed = first.rff_seed;
    std::vector<const SliceMoments*> parts;
    parts.reserve(packets.size());
    for (const auto& p : packets) {
        if (p.t != first.t) throw ConfigError("aggregate_moments: packets from different slices");
        if (p.rff_seed != first.rff_seed) throw ConfigError("aggregate_moments: packets use different RFF seeds");
        if (!p.moments.same_layout(first.moments)) throw ConfigError("aggregate_moments: packet layout mismatch");
        parts.push_back(&p.moments);
        g.strata.push_back(p.moments);
    }
    g.pooled = pool_moments(parts);
    return g;
}

std::vector<std::size_t> conditioning_set(std::size_t D, std::size_t i, std::size_t j) {
    std::vector<std::size_t> Z;
    for (std::size_t d = 0; d < D; ++d)
        if (d != i && d != j) Z.push_back(d);
    return Z;
}

Eigen::MatrixXd conditional_cross_covariance(const CiBlocks& b, double ridge_scale) {
    if (b.zz.size() == 0) return b.xy;
    const auto dim = b.zz.rows();
    const double trace = b.zz.trace();
    // Z with no variance carries no information; the floor keeps the solve defined.
    const double ridge = ridge_scale * std::max(trace / static_cast<double>(dim), 1e-12);
    Eigen::MatrixXd reg = b.zz;
    reg.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(reg);
    if (llt.info() != Eigen::Success || !std::isfinite(trace))
        throw NumericError("fcit: regularized conditioning covariance is not positive definite");
    Eigen::MatrixXd R = b.xy - b.xz * llt.solve(b.zy);
    if (!R.allFinite()) throw NumericError("fcit: non-finite conditional cross-covariance");
    return R;
}

namespace {

template <class XBlock>
CiBlocks assemble(const SliceMoments& m, XBlock&& x_with, std::size_t j, std::span<const std::size_t> Z) {
    const auto h = static_cast<Eigen::Index>(m.h);
    const auto nz = static_cast<Eigen::Index>(Z.size());
    CiBlocks b;
    b.xy = x_with(j);
    if (Z.empty()) return b;
    b.xz.resize(h, nz * h);
    b.zz.resize(nz * h, nz * h);
    b.zy.resize(nz * h, h);
    for (Eigen::Index a = 0; a < nz; ++a) {
        const std::size_t za = Z[static_cast<std::size_t>(a)];
        b.xz.middleCols(a * h, h) = x_with(za);
        b.zy.middleRows(a * h, h) = m.centered_cross(za, j);
        for (Eigen::Index c = a; c < nz; ++c) {
            const Eigen::MatrixXd blk = m.centered_cross(za, Z[static_cast<std::size_t>(c)]);
            b.zz.block(a * h, c * h, h, h) = blk;
            if (c != a) b.zz.block(c * h, a * h, h, h) = blk.transpose();
        }
    }
    return b;
}

template <class BlockFn>
double statistic(const GlobalMoments& C, BlockFn&& blocks_of, const CiOptions& opts) {
    const double N = static_cast<double>(C.n());
    if (!opts.surrogate || C.strata.size() <= 1) {
        const Eigen::MatrixXd R = conditional_cross_covariance(blocks_of(C.pooled), opts.ridge_scale);
        return N * R.squaredNorm();
    }
    Eigen::MatrixXd R;
    for (const auto& s : C.strata) {
        const double w = static_cast<double>(s.n) / N;
        Eigen::MatrixXd Rk = conditional_cross_covariance(blocks_of(s), opts.ridge_scale);
        if (R.size() == 0)
            R = w * Rk;
        else
            R += w * Rk;
    }
    return N * R.squaredNorm();
}

}  // namespace

CiBlocks contemporaneous_blocks(const SliceMoments& m, std::size_t i, std::size_t j, std::span<const std::size_t> Z) {
    return assemble(m, [&](std::size_t y) { return m.centered_cross(i, y); }, j, Z);
}

CiBlocks lagged_blocks(const SliceMoments& m, std::size_t tau, std::size_t i, std::size_t j,
                       std::span<const std::size_t> Z) {
    return assemble(m, [&](std::size_t y) { return m.centered_lag_cross(tau, i, y); }, j, Z);
}

double fcit_statistic(const GlobalMoments& C, std::size_t i, std::size_t j, std::span<const std::size_t> Z,
                      const CiOptions& opts) {
    const std::size_t D = C.pooled.D;
    if (i == j || i >= D || j >= D) throw ConfigError("fcit_statistic: need distinct valid variables");
    for (auto z : Z)
        if (z == i || z == j || z >= D) throw ConfigError("fcit_statistic: conditioning set overlaps the tested pair");
    return statistic(C, [&](const SliceMoments& m) { return contemporaneous_blocks(m, i, j, Z); }, opts);
}

double lag_fcit_statistic(const GlobalMoments& C, std::size_t tau, std::size_t i, std::size_t j,
                          std::span<const std::size_t> Z, const CiOptions& opts) {
    if (tau >= C.pooled.L) throw ConfigError("lag_fcit_statistic: lag out of range");
    return statistic(C, [&](const SliceMoments& m) { return lagged_blocks(m, tau, i, j, Z); }, opts);
}

double local_statistic(const SliceMoments& m, std::size_t i, std::size_t j, std::span<const std::size_t> Z,
                       double ridge_scale) {
    const Eigen::MatrixXd R = conditional_cross_covariance(contemporaneous_blocks(m, i, j, Z), ridge_scale);
    return static_cast<double>(m.n) * R.squaredNorm();
}

Eigen::MatrixXd pair_statistics(const GlobalMoments& C, const CiOptions& opts) {
    const std::size_t D = C.pooled.D;
    Eigen::MatrixXd stats = Eigen::MatrixXd::Zero(D, D);
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = i + 1; j < D; ++j)
            stats(i, j) = stats(j, i) = fcit_statistic(C, i, j, conditioning_set(D, i, j), opts);
    return stats;
}

Eigen::MatrixXd local_pair_statistics(const SliceMoments& m, double ridge_scale) {
    const std::size_t D = m.D;
    Eigen::MatrixXd stats = Eigen::MatrixXd::Zero(D, D);
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = i + 1; j < D; ++j)
            stats(i, j) = stats(j, i) = local_statistic(m, i, j, conditioning_set(D, i, j), ridge_scale);
    return stats;
}

BinaryMatrix threshold_statistics(const Eigen::MatrixXd& stats, double delta) {
    const auto D = static_cast<std::size_t>(stats.rows());
    BinaryMatrix S(D, D, 0);
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j)
            if (i != j) S(i, j) = stats(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) >= delta ? 1 : 0;
    return S;
}

BinaryMatrix compute_hard_mask(const GlobalMoments& C, double delta_hard, const CiOptions& opts) {
    return threshold_statistics(pair_statistics(C, opts), delta_hard);
}

std::uint8_t local_kci_indicator(const StatPacket& packet, std::size_t i, std::size_t j, double delta_local,
                                 double ridge_scale) {
    const double stat = local_statistic(packet.moments, i, j, conditioning_set(packet.moments.D, i, j), ridge_scale);
    return stat >= delta_local ? 1 : 0;
}

StaticPriors static_lag_priors(std::span<const StatPacket> packets, double delta_hard, double delta_local,
                               const CiOptions& opts) {
    if (packets.empty()) throw ConfigError("static_lag_priors: no sampled slices");
    const SliceMoments& first = packets.front().moments;
    const std::size_t D = first.D, L = first.L;
    StaticPriors out{Mask3(L, D, D), Mask3(L, D, D)};
    if (L == 0) return out;

    std::map<std::size_t, std::vector<const SliceMoments*>> by_client;
    std::vector<const SliceMoments*> all;
    for (const auto& p : packets) {
        if (p.rff_seed != packets.front().rff_seed) throw ConfigError("static_lag_priors: mixed RFF seeds");
        by_client[p.client_id].push_back(&p.moments);
        all.push_back(&p.moments);
    }
    GlobalMoments pooled;
    pooled.rff_seed = packets.front().rff_seed;
    pooled.pooled = pool_moments(all);
    for (auto& [k, parts] : by_client) pooled.strata.push_back(pool_moments(parts));

    for (std::size_t tau = 0; tau < L; ++tau) {
        for (std::size_t i = 0; i < D; ++i) {
            for (std::size_t j = 0; j < D; ++j) {
                const auto Z = conditioning_set(D, j, j);
                const double stat = lag_fcit_statistic(pooled, tau, i, j, Z, opts);
                const std::uint8_t s = stat >= delta_hard ? 1 : 0;
                std::uint8_t min_k = 1;
                for (const auto& m : pooled.strata) {
                    const Eigen::MatrixXd R =
                        conditional_cross_covariance(lagged_blocks(m, tau, i, j, Z), opts.ridge_scale);
                    const double local = static_cast<double>(m.n) * R.squaredNorm();
                    min_k = std::min<std::uint8_t>(min_k, local >= delta_local ? 1 : 0);
                }
                out.S_A(tau, i, j) = s;
                out.L_A(tau, i, j) = static_cast<std::uint8_t>(s * (1 - min_k));
            }
        }
    }
    return out;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw ConfigError("calibration produced no null statistics");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = seed ^ (a * 0x9E3779B97F4A7C15ULL) ^ (b * 0xC2B2AE3D27D4EB4FULL);
    x ^= x >> 31;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    return x;
}

void check_panels(std::span<const TimeSeriesPanel> panels, std::size_t L) {
    if (panels.empty()) throw ConfigError("dism: no client panels");
    const std::size_t T = panels.front().T(), D = panels.front().D();
    for (const auto& p : panels) {
        if (p.T() != T || p.D() != D) throw ConfigError("dism: panels disagree on T or D");
        if (p.n() < 2) throw ConfigError("dism: every client needs n >= 2");
        for (double v : p.values.data)
            if (!std::isfinite(v)) throw ConfigError("dism: panel contains non-finite values");
    }
    if (T <= L) throw ConfigError("dism: T must exceed L");
}

}  // namespace

Thresholds calibrate_thresholds(std::span<const TimeSeriesPanel> panels, std::size_t t_cal, const RFFParams& params,
                                const Standardizer& standardizer, const DismConfig& config, std::size_t* bytes_up) {
    const std::size_t K = panels.size(), B = config.null_permutations;
    if (B == 0) throw ConfigError("calibration needs null_permutations >= 1");
    const CiOptions opts{config.ridge_scale, config.use_surrogate};
    std::vector<std::vector<double>> pooled_stats(B), local_stats(B);
    std::vector<std::size_t> sent(B, 0);
    parallel_for(B, [&](std::size_t b) {
        std::vector<StatPacket> null_packets;
        for (std::size_t k = 0; k < K; ++k) {
            auto bytes = serialize(permuted_slice_stats(panels[k], t_cal, params, standardizer,
                                                        mix_seed(config.seed, b + 1, k + 1)));
            sent[b] += bytes.size();
            null_packets.push_back(deserialize_packet(bytes));
        }
        const GlobalMoments g = aggregate_moments(null_packets);
        const Eigen::MatrixXd S = pair_statistics(g, opts);
        const std::size_t D = g.pooled.D;
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = i + 1; j < D; ++j) pooled_stats[b].push_back(S(i, j));
        for (const auto& p : null_packets) {
            const Eigen::MatrixXd Sl = local_pair_statistics(p.moments, config.ridge_scale);
            for (std::size_t i = 0; i < D; ++i)
                for (std::size_t j = i + 1; j < D; ++j) local_stats[b].push_back(Sl(i, j));
        }
    });
    std::vector<double> pooled, local;
    for (std::size_t b = 0; b < B; ++b) {
        pooled.insert(pooled.end(), pooled_stats[b].begin(), pooled_stats[b].end());
        local.insert(local.end(), local_stats[b].begin(), local_stats[b].end());
        if (bytes_up) *bytes_up += sent[b];
    }
    if (pooled.empty()) return {0.0, 0.0};  // D == 1: no pairs to test
    return {quantile(pooled, config.null_quantile), quantile(local, config.null_quantile)};
}

DismResult run_dism(std::span<const TimeSeriesPanel> panels, std::size_t L, const DismConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    check_panels(panels, L);
    if (config.null_quantile <= 0.0 || config.null_quantile >= 1.0)
        throw ConfigError("dism: null_quantile must lie in (0, 1)");
    const std::size_t K = panels.size(), T = panels.front().T(), D = panels.front().D();
    const CiOptions opts{config.ridge_scale, config.use_surrogate};
    DismResult result;
    DismLog& log = result.log;

    // Preliminary exchange: per-variable sums up, standardizer down.
    std::vector<VariableSums> sums;
    for (const auto& p : panels) {
        sums.push_back(variable_sums(p, L));
        log.bytes_up += sizeof(std::uint64_t) + 2 * D * sizeof(double);
    }
    const Standardizer standardizer = combine_variable_sums(sums, config.use_surrogate);
    log.bytes_down += K * 2 * D * sizeof(double);

    const RFFParams params = make_rff(config.h, config.sigma, config.seed);
    const std::vector<std::size_t> times = sampled_times(T, L, config.T_S);
    const std::size_t S = times.size();

    // Client uploads, serialized across the client/server boundary.
    std::vector<std::vector<std::uint8_t>> wire(K * S);
    parallel_for(K * S, [&](std::size_t idx) {
        const std::size_t k = idx / S, s = idx % S;
        wire[idx] = serialize(time_slice_stats(panels[k], times[s], L, params, standardizer));
    });
    result.packets.reserve(K * S);
    for (auto& bytes : wire) {
        log.bytes_up += bytes.size();
        result.packets.push_back(deserialize_packet(bytes));
        bytes.clear();
        bytes.shrink_to_fit();
    }

    Thresholds th;
    if (config.delta_hard && config.delta_local) {
        th = {*config.delta_hard, *config.delta_local};
    } else {
        th = calibrate_thresholds(panels, T - 1, params, standardizer, config, &log.bytes_up);
        if (config.delta_hard) th.delta_hard = *config.delta_hard;
        if (config.delta_local) th.delta_local = *config.delta_local;
    }
    log.thresholds = th;

    // Per sampled slice: pooled hard mask and client indicators.
    std::vector<BinaryMatrix> hard(S);
    IndicatorSeries raw(S, K, D);
    Tensor3 omegas(S, K, D);
    parallel_for(S, [&](std::size_t s) {
        std::vector<StatPacket> slice;
        for (std::size_t k = 0; k < K; ++k) slice.push_back(result.packets[k * S + s]);
        const GlobalMoments g = aggregate_moments(slice);
        hard[s] = compute_hard_mask(g, th.delta_hard, opts);
        for (std::size_t k = 0; k < K; ++k) {
            const Eigen::MatrixXd local = local_pair_statistics(slice[k].moments, config.ridge_scale);
            for (std::size_t i = 0; i < D; ++i) {
                for (std::size_t j = 0; j < D; ++j)
                    if (i != j) raw(s, k, i, j) = local(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) >= th.delta_local ? 1 : 0;
                omegas(s, k, i) = slice[k].omega[i];
            }
        }
    });
    IndicatorSeries corrected = temporal_filter(raw, omegas);

    // Zero-order hold onto every t, then the soft mask from the held indicators.
    PriorSet& priors = result.priors;
    priors.S = Mask3(T, D, D);
    priors.L_soft = Mask3(T, D, D);
    const auto held = hold_index(times, T);
    std::vector<BinaryMatrix> soft(S);
    for (std::size_t s = 0; s < S; ++s) {
        std::vector<BinaryMatrix> ind(K, BinaryMatrix(D, D, 0));
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t i = 0; i < D; ++i)
                for (std::size_t j = 0; j < D; ++j) ind[k](i, j) = corrected(s, k, i, j);
        soft[s] = compute_soft_mask(hard[s], ind);
    }
    for (std::size_t t = 0; t < T; ++t) {
        std::copy(hard[held[t]].data.begin(), hard[held[t]].data.end(), priors.S.slice(t));
        std::copy(soft[held[t]].data.begin(), soft[held[t]].data.end(), priors.L_soft.slice(t));
    }

    StaticPriors statics = static_lag_priors(result.packets, th.delta_hard, th.delta_local, opts);
    priors.S_A = std::move(statics.S_A);
    priors.L_soft_A = std::move(statics.L_A);
    priors.sampled_times = times;
    priors.meta = {th.delta_hard, th.delta_local, config.T_S, config.h, config.sigma, config.ridge_scale,
                   config.use_surrogate};

    result.raw_indicators = std::move(raw);
    result.corrected_indicators = std::move(corrected);
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

bool priors_consistent(const PriorSet& p) {
    const std::size_t T = p.T(), D = p.D();
    if (!p.L_soft.same_shape(p.S) || !p.L_soft_A.same_shape(p.S_A)) return false;
    for (std::size_t a = 0; a < p.S.size(); ++a)
        if (p.L_soft.data[a] > p.S.data[a]) return false;
    for (std::size_t a = 0; a < p.S_A.size(); ++a)
        if (p.L_soft_A.data[a] > p.S_A.data[a]) return false;
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t d = 0; d < D; ++d)
            if (p.S(t, d, d) != 0) return false;
    if (p.sampled_times.empty()) return true;
    const auto held = hold_index(p.sampled_times, T);
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t src = p.sampled_times[held[t]];
        if (!std::equal(p.S.slice(t), p.S.slice(t) + D * D, p.S.slice(src))) return false;
        if (!std::equal(p.L_soft.slice(t), p.L_soft.slice(t) + D * D, p.L_soft.slice(src))) return false;
    }
    return true;
}

}  // namespace fedtcd
