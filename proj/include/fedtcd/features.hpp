#pragma once

// Client-side random Fourier feature statistics.  A StatPacket is the only
// thing derived from raw samples that a client ever sends to the server.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedtcd/synth.hpp"

namespace fedtcd {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstBlock = Eigen::Map<const RowMatrix>;

// Per-scalar feature map x -> sqrt(2/h) [cos(w_1 x + b_1), ..., cos(w_h x + b_h)],
// w ~ Normal(0, 1/sigma^2), b ~ Uniform[0, 2pi).  Shared by every client
// through the seed.
struct RFFParams {
    std::size_t h = 0;
    std::vector<double> frequencies;
    std::vector<double> phases;
    double sigma = 1.0;
    std::uint64_t seed = 0;

    friend bool operator==(const RFFParams&, const RFFParams&) = default;
};

RFFParams make_rff(std::size_t h, double sigma, std::uint64_t seed);
std::vector<double> rff_map(double x, const RFFParams& params);
// Features of a column of samples, one row per sample.
Eigen::MatrixXd feature_matrix(const Eigen::Ref<const Eigen::VectorXd>& x, const RFFParams& params);

// Per-variable affine standardization broadcast by the server.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer identity(std::size_t D);
};

// Per-client sufficient statistics for the standardizer (t >= L only).
struct VariableSums {
    std::size_t count = 0;
    std::vector<double> sum;
    std::vector<double> sum_sq;
};

VariableSums variable_sums(const TimeSeriesPanel& panel, std::size_t L);
// Global mean; the scale is the total standard deviation, or with
// within_client the pooled within-client one (client mean shifts removed).
Standardizer combine_variable_sums(std::span<const VariableSums> parts, bool within_client = false);

// Uncentered RFF moments of one slice (or a pool of slices).
//   m1[d]            E[phi(V_d^t)]                       [D, h]
//   m2[i, j]         E[phi(V_i^t) phi(V_j^t)^T]          [D, D, h, h]
//   lag_m1[tau, d]   E[phi(V_d^{t-tau-1})]               [L, D, h]
//   lag_m2[tau,i,j]  E[phi(V_i^{t-tau-1}) phi(V_j^t)^T]  [L, D, D, h, h]
struct SliceMoments {
    std::size_t n = 0;
    std::size_t D = 0, h = 0, L = 0;
    std::vector<double> m1, m2, lag_m1, lag_m2;

    SliceMoments() = default;
    SliceMoments(std::size_t D_, std::size_t h_, std::size_t L_);

    ConstBlock cross(std::size_t i, std::size_t j) const {
        return ConstBlock(m2.data() + (i * D + j) * h * h, h, h);
    }
    ConstBlock lag_cross(std::size_t tau, std::size_t i, std::size_t j) const {
        return ConstBlock(lag_m2.data() + ((tau * D + i) * D + j) * h * h, h, h);
    }
    Eigen::Map<const Eigen::VectorXd> mean(std::size_t d) const {
        return Eigen::Map<const Eigen::VectorXd>(m1.data() + d * h, h);
    }
    Eigen::Map<const Eigen::VectorXd> lag_mean(std::size_t tau, std::size_t d) const {
        return Eigen::Map<const Eigen::VectorXd>(lag_m1.data() + (tau * D + d) * h, h);
    }

    // Centered blocks: cov(phi(V_i), phi(V_j)) and cov(phi(V_i^{t-tau-1}), phi(V_j^t)).
    Eigen::MatrixXd centered_cross(std::size_t i, std::size_t j) const;
    Eigen::MatrixXd centered_lag_cross(std::size_t tau, std::size_t i, std::size_t j) const;

    bool same_layout(const SliceMoments& o) const { return D == o.D && h == o.h && L == o.L; }
    friend bool operator==(const SliceMoments&, const SliceMoments&) = default;
};

// n-weighted average of moment sets with identical layout.
SliceMoments pool_moments(std::span<const SliceMoments* const> parts);

struct StatPacket {
    std::size_t client_id = 0;
    std::size_t t = 0;
    std::uint64_t rff_seed = 0;
    SliceMoments moments;
    std::vector<double> omega;  // unbiased variance of each raw V_d^t across samples

    std::size_t n() const { return moments.n; }
    friend bool operator==(const StatPacket&, const StatPacket&) = default;
};

// Moments of slice t (standardized values) with lags 1..L.
// Throws ConfigError when t < L, t >= T or n < 2.
StatPacket time_slice_stats(const TimeSeriesPanel& panel, std::size_t t, std::size_t L, const RFFParams& params,
                            const Standardizer& standardizer);
StatPacket time_slice_stats(const TimeSeriesPanel& panel, std::size_t t, std::size_t L, const RFFParams& params);

// Moments of slice t after independently shuffling every variable across
// samples; lag moments are omitted.  Used for permutation calibration.
StatPacket permuted_slice_stats(const TimeSeriesPanel& panel, std::size_t t, const RFFParams& params,
                                const Standardizer& standardizer, std::uint64_t perm_seed);

// Sampled slices: L, L + T_S, L + 2 T_S, ... < T.
std::vector<std::size_t> sampled_times(std::size_t T, std::size_t L, std::size_t T_S);

// Length-prefixed binary record (u64 payload length, then payload).
std::vector<std::uint8_t> serialize(const StatPacket& packet);
StatPacket deserialize_packet(std::span<const std::uint8_t> bytes);

}  // namespace fedtcd
