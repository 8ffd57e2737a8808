#pragma once

// Synthetic time-varying linear SCM scenarios spread across simulated clients.
//
// Variables are generated in index order (index order is the topological
// order), so every contemporaneous edge points from a lower to a higher
// index and W_true[t] is strictly upper triangular.  Time indices are
// 0-based throughout the library: slices t < L are warm-up noise, and every
// statistic or loss uses t >= L only.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedtcd/tensor.hpp"

namespace fedtcd {

struct Window {
    std::size_t begin = 0;
    std::size_t end = std::numeric_limits<std::size_t>::max();  // exclusive

    bool contains(std::size_t t) const { return t >= begin && t < end; }
    friend bool operator==(const Window&, const Window&) = default;
};

enum class Dynamics { Constant, Sinusoid, Piecewise };

std::string to_string(Dynamics d);
Dynamics dynamics_from_string(const std::string& s);

struct Edge {
    std::size_t from = 0, to = 0;
    double coef = 0.0;  // amplitude; the dynamics family shapes it over time
    friend bool operator==(const Edge&, const Edge&) = default;
};

struct LagEdge {
    std::size_t lag = 1;  // 1..L
    std::size_t from = 0, to = 0;
    double coef = 0.0;
    friend bool operator==(const LagEdge&, const LagEdge&) = default;
};

// A client-level latent shared by two variables.  Client k adds
// load_from * strength[k] + offset_from[k] to the structural equation of
// `from` (likewise for `to`) at every t inside `window`.  strength[k] plays the
// role of the client's latent value; offsets are environment-specific causes.
struct ConfoundedEdge {
    std::size_t from = 0, to = 0;
    std::vector<double> strength;  // one per client
    double load_from = 1.0;
    double load_to = 1.0;
    std::vector<double> offset_from;  // empty or one per client
    std::vector<double> offset_to;
    Window window;
    friend bool operator==(const ConfoundedEdge&, const ConfoundedEdge&) = default;
};

// A true edge whose coefficient is zero on `zero_clients` inside `window`.
// lag == 0 is contemporaneous.  The edge is added to the graph if the random
// draw did not produce it.
struct InconsistentEdge {
    std::size_t lag = 0;
    std::size_t from = 0, to = 0;
    std::vector<std::size_t> zero_clients;
    Window window;
    friend bool operator==(const InconsistentEdge&, const InconsistentEdge&) = default;
};

// Shared shock of scale `amplitude` added to every variable of one client
// inside `window`.
struct NoiseBurst {
    std::size_t client = 0;
    Window window;
    double amplitude = 0.0;
    friend bool operator==(const NoiseBurst&, const NoiseBurst&) = default;
};

struct ScenarioSpec {
    std::size_t D = 5;
    std::size_t T = 60;
    std::size_t L = 1;
    std::size_t K = 3;
    std::vector<std::size_t> n_k{300, 300, 300};
    double sparsity = 0.3;
    std::optional<double> lag_sparsity;  // defaults to sparsity
    Dynamics dynamics = Dynamics::Sinusoid;
    double noise_sigma = 0.1;
    std::vector<Edge> edges;
    std::vector<LagEdge> lag_edges;
    std::vector<ConfoundedEdge> confounded_edges;
    std::vector<InconsistentEdge> inconsistent_edges;
    std::optional<NoiseBurst> noise_burst;
    std::uint64_t seed = 1;

    friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

// Throws ConfigError on any violated invariant (indices, n_k >= 2, T > L, ...).
void validate(const ScenarioSpec& spec);

struct TimeSeriesPanel {
    std::size_t client_id = 0;
    Tensor3 values;  // [n, T, D]

    std::size_t n() const { return values.d0; }
    std::size_t T() const { return values.d1; }
    std::size_t D() const { return values.d2; }
    double operator()(std::size_t s, std::size_t t, std::size_t d) const { return values(s, t, d); }

    friend bool operator==(const TimeSeriesPanel&, const TimeSeriesPanel&) = default;
};

struct GroundTruth {
    Tensor3 W_true;  // [T, D, D]
    Tensor3 A_true;  // [L, D, D], index 0 is lag 1
    Mask3 oracle_S;  // [T, D, D]
    Mask3 oracle_L;
    Mask3 oracle_S_A;  // [L, D, D]
    Mask3 oracle_L_A;

    friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

// Shared graph: trajectories of contemporaneous weights and static lags.
struct Structure {
    Tensor3 W;  // [T, D, D]
    Tensor3 A;  // [L, D, D]
};

// Deterministic function of (spec minus sample noise).  Throws NumericError
// when the lag recursion is divergent (spectral radius of sum |A_tau| >= 1)
// or the contemporaneous pathway (I - W_t)^-1 amplifies by more than 5.
Structure build_structure(const ScenarioSpec& spec);

// Confounder contribution of one endpoint: load * strength + offset.
double confounder_term(double load, double strength, double offset);

// Samples every client panel.  The graph comes from spec.seed; the noise comes
// from sample_seed, so a held-out panel set shares the graph but not the noise.
std::pair<std::vector<TimeSeriesPanel>, GroundTruth> generate(const ScenarioSpec& spec);
std::pair<std::vector<TimeSeriesPanel>, GroundTruth> generate(const ScenarioSpec& spec,
                                                              std::uint64_t sample_seed);

// Seed used for the held-out evaluation panels of a scenario.
std::uint64_t held_out_seed(const ScenarioSpec& spec);

struct OracleMasks {
    Mask3 S, L, S_A, L_A;
};

// Expected DISM output under the full-conditioning policy: a pair is kept
// when it carries a true edge or stays d-connected given the other
// contemporaneous variables in the time-unrolled graph.  Client-level
// confounders are explained by the client surrogate and never keep a pair.
OracleMasks oracle_masks(const ScenarioSpec& spec);
OracleMasks oracle_masks(const ScenarioSpec& spec, const Structure& structure);

}  // namespace fedtcd
