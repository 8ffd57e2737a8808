#include "fedtcd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include <Eigen/Dense>

#include "fedtcd/errors.hpp"

namespace fedtcd {

namespace {

constexpr double kContempMin = 0.3;
constexpr double kContempMax = 0.8;
constexpr double kLagMin = 0.2;
constexpr double kLagMax = 0.5;
constexpr double kMaxPathwayGain = 5.0;

double signed_uniform(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> mag(lo, hi);
    std::bernoulli_distribution sign(0.5);
    const double m = mag(rng);
    return sign(rng) ? m : -m;
}

struct Trajectory {
    double c = 0.0;
    double c2 = 0.0;
    double phase = 0.0;
    std::size_t switch_t = 0;
};

double eval_trajectory(const Trajectory& tr, Dynamics dyn, std::size_t t, std::size_t T) {
    switch (dyn) {
    case Dynamics::Constant:
        return tr.c;
    case Dynamics::Sinusoid:
        return tr.c * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                                                static_cast<double>(T) +
                                            tr.phase));
    case Dynamics::Piecewise:
        return t < tr.switch_t ? tr.c : tr.c2;
    }
    return tr.c;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("scenario: " + msg);
}

}  // namespace

std::string to_string(Dynamics d) {
    switch (d) {
    case Dynamics::Constant: return "constant";
    case Dynamics::Sinusoid: return "sinusoid";
    case Dynamics::Piecewise: return "piecewise";
    }
    return "constant";
}

Dynamics dynamics_from_string(const std::string& s) {
    if (s == "constant") return Dynamics::Constant;
    if (s == "sinusoid") return Dynamics::Sinusoid;
    if (s == "piecewise") return Dynamics::Piecewise;
    throw ConfigError("unknown dynamics family '" + s + "'");
}

void validate(const ScenarioSpec& spec) {
    require(spec.D >= 1, "D must be >= 1");
    require(spec.T > spec.L, "T must exceed the lag order L");
    require(spec.K >= 1, "K must be >= 1");
    require(spec.n_k.size() == spec.K, "n_k must list one sample count per client");
    for (auto n : spec.n_k) require(n >= 2, "every client needs n_k >= 2");
    require(spec.sparsity >= 0.0 && spec.sparsity <= 1.0, "sparsity must lie in [0, 1]");
    if (spec.lag_sparsity)
        require(*spec.lag_sparsity >= 0.0 && *spec.lag_sparsity <= 1.0,
                "lag_sparsity must lie in [0, 1]");
    require(spec.noise_sigma > 0.0, "noise_sigma must be positive");

    auto pair_ok = [&](std::size_t i, std::size_t j) { return i != j && i < spec.D && j < spec.D; };
    auto window_ok = [](const Window& w) { return w.begin < w.end; };
    for (const auto& e : spec.edges) {
        require(pair_ok(e.from, e.to), "edge indices invalid");
        require(e.from < e.to, "contemporaneous edges must follow index order (from < to)");
    }
    for (const auto& e : spec.lag_edges) {
        require(e.from < spec.D && e.to < spec.D, "lag edge indices invalid");
        require(e.lag >= 1 && e.lag <= spec.L, "lag edge lag out of range");
    }
    for (const auto& c : spec.confounded_edges) {
        require(pair_ok(c.from, c.to), "confounded edge indices invalid");
        require(c.strength.size() == spec.K, "confounded edge needs one strength per client");
        require(c.offset_from.empty() || c.offset_from.size() == spec.K, "offset_from size");
        require(c.offset_to.empty() || c.offset_to.size() == spec.K, "offset_to size");
        require(window_ok(c.window), "confounded edge window empty");
    }
    for (const auto& e : spec.inconsistent_edges) {
        if (e.lag == 0) {
            require(pair_ok(e.from, e.to), "inconsistent edge indices invalid");
            require(e.from < e.to, "contemporaneous inconsistent edges need from < to");
        } else {
            require(e.from < spec.D && e.to < spec.D, "inconsistent lag edge indices invalid");
            require(e.lag <= spec.L, "inconsistent lag edge lag out of range");
        }
        for (auto k : e.zero_clients) require(k < spec.K, "inconsistent edge client out of range");
        require(window_ok(e.window), "inconsistent edge window empty");
    }
    if (spec.noise_burst) {
        require(spec.noise_burst->client < spec.K, "noise burst client out of range");
        require(window_ok(spec.noise_burst->window), "noise burst window empty");
        require(spec.noise_burst->amplitude >= 0.0, "noise burst amplitude must be >= 0");
    }
}

double confounder_term(double load, double strength, double offset) { return load * strength + offset; }

Structure build_structure(const ScenarioSpec& spec) {
    validate(spec);
    const std::size_t D = spec.D, T = spec.T, L = spec.L;
    std::mt19937_64 rng(spec.seed);

    // Contemporaneous support: a random subset of the upper-triangular pairs.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = i + 1; j < D; ++j) pairs.emplace_back(i, j);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const auto n_edges = static_cast<std::size_t>(std::lround(spec.sparsity * static_cast<double>(pairs.size())));
    std::vector<std::vector<std::optional<double>>> amp(D, std::vector<std::optional<double>>(D));
    for (std::size_t e = 0; e < n_edges; ++e)
        amp[pairs[e].first][pairs[e].second] = signed_uniform(rng, kContempMin, kContempMax);
    for (const auto& e : spec.edges) amp[e.from][e.to] = e.coef;
    for (const auto& e : spec.inconsistent_edges)
        if (e.lag == 0 && !amp[e.from][e.to]) amp[e.from][e.to] = signed_uniform(rng, kContempMin, kContempMax);

    // Lagged support.
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> lag_slots;
    for (std::size_t tau = 0; tau < L; ++tau)
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j) lag_slots.emplace_back(tau, i, j);
    std::shuffle(lag_slots.begin(), lag_slots.end(), rng);
    const double lag_frac = spec.lag_sparsity.value_or(spec.sparsity);
    const auto n_lag = static_cast<std::size_t>(std::lround(lag_frac * static_cast<double>(lag_slots.size())));
    Structure s{Tensor3(T, D, D), Tensor3(L, D, D)};
    for (std::size_t e = 0; e < n_lag; ++e) {
        auto [tau, i, j] = lag_slots[e];
        s.A(tau, i, j) = signed_uniform(rng, kLagMin, kLagMax);
    }
    for (const auto& e : spec.lag_edges) s.A(e.lag - 1, e.from, e.to) = e.coef;
    for (const auto& e : spec.inconsistent_edges)
        if (e.lag > 0 && s.A(e.lag - 1, e.from, e.to) == 0.0)
            s.A(e.lag - 1, e.from, e.to) = signed_uniform(rng, kLagMin, kLagMax);

    // Trajectory shape parameters, drawn for every pair in a fixed order.
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_int_distribution<std::size_t> switch_at(T / 4, std::max(T / 4, 3 * T / 4));
    for (std::size_t i = 0; i < D; ++i) {
        for (std::size_t j = i + 1; j < D; ++j) {
            Trajectory tr;
            tr.phase = phase(rng);
            tr.switch_t = switch_at(rng);
            const double second = signed_uniform(rng, kContempMin, kContempMax);
            if (!amp[i][j]) continue;
            tr.c = *amp[i][j];
            tr.c2 = std::copysign(std::abs(second), tr.c);
            for (std::size_t t = 0; t < T; ++t) s.W(t, i, j) = eval_trajectory(tr, spec.dynamics, t, T);
        }
    }

    if (L > 0) {
        Eigen::MatrixXd abs_sum = Eigen::MatrixXd::Zero(D, D);
        for (std::size_t tau = 0; tau < L; ++tau)
            for (std::size_t i = 0; i < D; ++i)
                for (std::size_t j = 0; j < D; ++j) abs_sum(i, j) += std::abs(s.A(tau, i, j));
        const double rho = abs_sum.eigenvalues().cwiseAbs().maxCoeff();
        if (rho >= 1.0) {
            std::ostringstream msg;
            msg << "divergent lag recursion: spectral radius of sum |A| = " << rho << " >= 1";
            throw NumericError(msg.str());
        }
    }
    for (std::size_t t = 0; t < T; ++t) {
        Eigen::MatrixXd W = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            s.W.slice(t), static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(D));
        Eigen::MatrixXd pathway = (Eigen::MatrixXd::Identity(D, D) - W).inverse();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(pathway);
        const double gain = svd.singularValues()(0);
        if (!(gain <= kMaxPathwayGain)) {
            std::ostringstream msg;
            msg << "contemporaneous pathway gain " << gain << " exceeds " << kMaxPathwayGain << " at t=" << t;
            throw NumericError(msg.str());
        }
    }
    return s;
}

std::uint64_t held_out_seed(const ScenarioSpec& spec) { return spec.seed ^ 0x9E3779B97F4A7C15ULL; }

std::pair<std::vector<TimeSeriesPanel>, GroundTruth> generate(const ScenarioSpec& spec) {
    return generate(spec, spec.seed);
}

std::pair<std::vector<TimeSeriesPanel>, GroundTruth> generate(const ScenarioSpec& spec,
                                                              std::uint64_t sample_seed) {
    const Structure structure = build_structure(spec);
    const std::size_t D = spec.D, T = spec.T, L = spec.L;

    std::vector<TimeSeriesPanel> panels;
    panels.reserve(spec.K);
    for (std::size_t k = 0; k < spec.K; ++k) {
        // Client-specific mechanisms.
        Tensor3 W = structure.W;
        std::vector<Tensor3> A_at(T);  // per target time; only built where a lag edge is switched off
        for (const auto& e : spec.inconsistent_edges) {
            if (std::find(e.zero_clients.begin(), e.zero_clients.end(), k) == e.zero_clients.end()) continue;
            for (std::size_t t = 0; t < T; ++t) {
                if (!e.window.contains(t)) continue;
                if (e.lag == 0) {
                    W(t, e.from, e.to) = 0.0;
                } else {
                    if (A_at[t].size() == 0) A_at[t] = structure.A;
                    A_at[t](e.lag - 1, e.from, e.to) = 0.0;
                }
            }
        }
        Tensor3 U(T, D, 1);
        for (const auto& c : spec.confounded_edges) {
            const double u_from = confounder_term(c.load_from, c.strength[k], c.offset_from.empty() ? 0.0 : c.offset_from[k]);
            const double u_to = confounder_term(c.load_to, c.strength[k], c.offset_to.empty() ? 0.0 : c.offset_to[k]);
            for (std::size_t t = 0; t < T; ++t) {
                if (!c.window.contains(t)) continue;
                U(t, c.from, 0) += u_from;
                U(t, c.to, 0) += u_to;
            }
        }
        const bool bursty = spec.noise_burst && spec.noise_burst->client == k;

        std::seed_seq seq{static_cast<std::uint32_t>(sample_seed), static_cast<std::uint32_t>(sample_seed >> 32),
                          static_cast<std::uint32_t>(k), 0x5CA1AB1Eu};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> normal(0.0, 1.0);

        const std::size_t n = spec.n_k[k];
        TimeSeriesPanel panel{k, Tensor3(n, T, D)};
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t t = 0; t < T; ++t) {
                if (t < L) {
                    for (std::size_t d = 0; d < D; ++d) panel.values(s, t, d) = normal(rng);
                    continue;
                }
                const Tensor3& A = A_at[t].size() ? A_at[t] : structure.A;
                double shock = 0.0;
                if (bursty && spec.noise_burst->window.contains(t)) shock = spec.noise_burst->amplitude * normal(rng);
                for (std::size_t d = 0; d < D; ++d) {
                    double v = U(t, d, 0) + shock + spec.noise_sigma * normal(rng);
                    for (std::size_t i = 0; i < d; ++i) v += panel.values(s, t, i) * W(t, i, d);
                    for (std::size_t tau = 0; tau < L; ++tau)
                        for (std::size_t i = 0; i < D; ++i) v += panel.values(s, t - tau - 1, i) * A(tau, i, d);
                    panel.values(s, t, d) = v;
                }
            }
        }
        panels.push_back(std::move(panel));
    }

    OracleMasks oracle = oracle_masks(spec, structure);
    GroundTruth truth{structure.W, structure.A, std::move(oracle.S), std::move(oracle.L), std::move(oracle.S_A),
                      std::move(oracle.L_A)};
    return {std::move(panels), std::move(truth)};
}

}  // namespace fedtcd
