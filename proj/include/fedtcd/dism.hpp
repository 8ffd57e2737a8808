#pragma once

// Server-side skeleton mining: pooled kernel statistics, federated and
// client-local conditional independence tests, temporal correction, and the
// hard/soft prior masks consumed by trajectory training.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedtcd/features.hpp"
#include "fedtcd/synth.hpp"
#include "fedtcd/tensor.hpp"

namespace fedtcd {

// Pooled moments of one sampled slice.  `pooled` is the n-weighted average of
// the client moments; `strata` keeps each client's moments, which is the same
// information as the pooled moments of client-indicator-crossed features.
struct GlobalMoments {
    std::size_t t = 0;
    std::uint64_t rff_seed = 0;
    SliceMoments pooled;
    std::vector<SliceMoments> strata;

    std::size_t n() const { return pooled.n; }
    // Centered pooled covariance block cov(phi(V_i), phi(V_j)).
    Eigen::MatrixXd covariance(std::size_t i, std::size_t j) const { return pooled.centered_cross(i, j); }
};

// Throws ConfigError on an empty list or mismatched t / RFF seed / layout.
GlobalMoments aggregate_moments(std::span<const StatPacket> packets);

// Every variable except i and j.
std::vector<std::size_t> conditioning_set(std::size_t D, std::size_t i, std::size_t j);

struct CiOptions {
    double ridge_scale = 1e-3;  // ridge = ridge_scale * trace(C_ZZ) / dim
    bool surrogate = true;      // condition on the client index
};

// Conditional cross-covariance C_xy - C_xZ (C_ZZ + ridge I)^-1 C_Zy from
// centered blocks.  Empty zz means no conditioning.
struct CiBlocks {
    Eigen::MatrixXd xy, xz, zz, zy;
};
Eigen::MatrixXd conditional_cross_covariance(const CiBlocks& blocks, double ridge_scale);

CiBlocks contemporaneous_blocks(const SliceMoments& m, std::size_t i, std::size_t j, std::span<const std::size_t> Z);
// x = V_i^{t-tau-1}, y = V_j^t, Z at slice t.
CiBlocks lagged_blocks(const SliceMoments& m, std::size_t tau, std::size_t i, std::size_t j,
                       std::span<const std::size_t> Z);

// n * ||C_{XY|Z}||_F^2.  With the surrogate the residual is formed per client
// and averaged with weights n_k / N.
double fcit_statistic(const GlobalMoments& C, std::size_t i, std::size_t j, std::span<const std::size_t> Z,
                      const CiOptions& opts = {});
double lag_fcit_statistic(const GlobalMoments& C, std::size_t tau, std::size_t i, std::size_t j,
                          std::span<const std::size_t> Z, const CiOptions& opts = {});
// Client-local statistic: same formula on one client's moments and its own n.
double local_statistic(const SliceMoments& m, std::size_t i, std::size_t j, std::span<const std::size_t> Z,
                       double ridge_scale);

// Statistic for every pair i < j under full conditioning (symmetric, zero diagonal).
Eigen::MatrixXd pair_statistics(const GlobalMoments& C, const CiOptions& opts = {});
Eigen::MatrixXd local_pair_statistics(const SliceMoments& m, double ridge_scale);

// S_ij = 0 iff statistic < delta_hard; diagonal forced 0.
BinaryMatrix compute_hard_mask(const GlobalMoments& C, double delta_hard, const CiOptions& opts = {});
BinaryMatrix threshold_statistics(const Eigen::MatrixXd& stats, double delta);

// 1 iff the client-local statistic reaches delta_local (dependence).
std::uint8_t local_kci_indicator(const StatPacket& packet, std::size_t i, std::size_t j, double delta_local,
                                 double ridge_scale = 1e-3);

// values(s, k, i, j): 1 = dependence detected at client k, sampled slice s.
struct IndicatorSeries {
    std::size_t n_sampled = 0, K = 0, D = 0;
    std::vector<std::uint8_t> values;

    IndicatorSeries() = default;
    IndicatorSeries(std::size_t s, std::size_t k, std::size_t d)
        : n_sampled(s), K(k), D(d), values(s * k * d * d, 0) {}
    std::uint8_t& operator()(std::size_t s, std::size_t k, std::size_t i, std::size_t j) {
        return values[((s * K + k) * D + i) * D + j];
    }
    std::uint8_t operator()(std::size_t s, std::size_t k, std::size_t i, std::size_t j) const {
        return values[((s * K + k) * D + i) * D + j];
    }
    friend bool operator==(const IndicatorSeries&, const IndicatorSeries&) = default;
};

// Robust per-series alarm: value > median + 3 * MAD.
std::vector<std::uint8_t> omega_alarm(std::span<const double> omega);

// Median filter on a binary series.  Window 3, or 5 where `wide` is set;
// windows shrink symmetrically at the boundaries.  Length < 3 is returned as is.
std::vector<std::uint8_t> median_filter(std::span<const std::uint8_t> series, std::span<const std::uint8_t> wide);

// omegas(s, k, d): per-slice variance reported by client k.
IndicatorSeries temporal_filter(const IndicatorSeries& series, const Tensor3& omegas);

// Value at t is the value of the latest sampled time <= t; times before the
// first sample take the first sample.
template <class V>
std::vector<V> zero_order_hold(std::span<const std::size_t> times, std::span<const V> values, std::size_t T) {
    std::vector<V> out;
    out.reserve(T);
    std::size_t s = 0;
    for (std::size_t t = 0; t < T; ++t) {
        while (s + 1 < times.size() && times[s + 1] <= t) ++s;
        out.push_back(values[s]);
    }
    return out;
}
// Index of the sample held at each t.
std::vector<std::size_t> hold_index(std::span<const std::size_t> times, std::size_t T);

// L_ij = S_ij * (1 - min_k I_ij,k).  indicators[k] is client k's corrected matrix.
BinaryMatrix compute_soft_mask(const BinaryMatrix& S, std::span<const BinaryMatrix> indicators);

struct StaticPriors {
    Mask3 S_A;  // [L, D, D]
    Mask3 L_A;
};

// Lag moments pooled over clients and sampled slices; one indicator per
// (client, tau, i, j) from each client's time-pooled moments.
StaticPriors static_lag_priors(std::span<const StatPacket> packets, double delta_hard, double delta_local,
                               const CiOptions& opts = {});

struct PriorMeta {
    double delta_hard = 0.0;
    double delta_local = 0.0;
    std::size_t T_S = 1;
    std::size_t h = 0;
    double sigma = 1.0;
    double ridge_scale = 1e-3;
    bool surrogate = true;
    friend bool operator==(const PriorMeta&, const PriorMeta&) = default;
};

struct PriorSet {
    Mask3 S;       // [T, D, D]
    Mask3 L_soft;  // [T, D, D]
    Mask3 S_A;     // [L, D, D]
    Mask3 L_soft_A;
    std::vector<std::size_t> sampled_times;
    PriorMeta meta;

    std::size_t T() const { return S.d0; }
    std::size_t D() const { return S.d1; }
    std::size_t L() const { return S_A.d0; }
    friend bool operator==(const PriorSet&, const PriorSet&) = default;
};

struct DismConfig {
    std::size_t T_S = 1;
    std::size_t h = 32;
    double sigma = 1.0;
    std::optional<double> delta_hard;   // unset: permutation calibrated
    std::optional<double> delta_local;  // unset: permutation calibrated
    double ridge_scale = 1e-3;
    std::size_t null_permutations = 20;
    double null_quantile = 0.95;
    bool use_surrogate = true;
    std::uint64_t seed = 1;
};

// Linear-interpolation sample quantile (R type 7).
double quantile(std::vector<double> values, double q);

struct Thresholds {
    double delta_hard = 0.0;
    double delta_local = 0.0;
};

// Clients shuffle every variable of one slice independently; the server takes
// the null_quantile of the pooled and of the client-local statistics.
Thresholds calibrate_thresholds(std::span<const TimeSeriesPanel> panels, std::size_t t_cal, const RFFParams& params,
                                const Standardizer& standardizer, const DismConfig& config,
                                std::size_t* bytes_up = nullptr);

struct DismLog {
    std::size_t bytes_up = 0;
    std::size_t bytes_down = 0;
    double wall_seconds = 0.0;
    Thresholds thresholds;
};

struct DismResult {
    PriorSet priors;
    IndicatorSeries raw_indicators;
    IndicatorSeries corrected_indicators;
    std::vector<StatPacket> packets;  // server-side copies, client-major
    DismLog log;
};

DismResult run_dism(std::span<const TimeSeriesPanel> panels, std::size_t L, const DismConfig& config);

// Checks the nesting invariants: L <= S, zero diagonals, hold between samples.
bool priors_consistent(const PriorSet& priors);

}  // namespace fedtcd
