#pragma once

// In-process federation: clients and server exchange serialized messages, so
// the byte counts below are the sizes a real transport would carry.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fedtcd/dism.hpp"
#include "fedtcd/node.hpp"

namespace fedtcd {

// theta = sum_k (n_k / N) theta_k.  Throws ConfigError on layout mismatch.
std::vector<double> fedavg(std::span<const std::vector<double>> client_params, std::span<const std::size_t> weights);

// Wire format of a parameter vector: "DDPM", u32 round, u64 count, doubles.
std::vector<std::uint8_t> serialize_params(std::span<const double> flat, std::uint32_t round);
std::vector<double> deserialize_params(std::span<const std::uint8_t> bytes, std::uint32_t* round = nullptr);

struct DctoConfig {
    std::size_t R = 50;
    std::size_t E = 10;
    double eta = 1e-2;
    Lambdas lambdas;
    std::size_t m = 16;
    std::size_t w_enc = 0;  // 0: L + 1
    std::uint64_t seed = 1;
};

struct RoundLog {
    std::size_t round = 0;
    std::vector<LossComponents> client_losses;  // after local training
    std::size_t bytes_up = 0;
    std::size_t bytes_down = 0;
    double wall_seconds = 0.0;
    LossComponents global_loss;  // n-weighted over clients, evaluated at the aggregate
};

// One row of the loss-curve CSV.
struct StepLog {
    std::size_t round = 0, client = 0, step = 0;
    LossComponents loss;
};

struct GraphEstimate {
    Tensor3 W;  // W_eff [T, D, D]
    Tensor3 A;  // A_eff [L, D, D]
    Mask3 S, S_A;
};

// Training state that can be persisted after any round.
struct DctoState {
    ThetaParams theta;
    std::size_t next_round = 0;
};

struct DctoResult {
    GraphEstimate estimate;
    DctoState state;
    std::vector<RoundLog> rounds;
    std::vector<StepLog> steps;
    std::size_t setup_bytes_up = 0;    // warm-up sums for the encoder input
    std::size_t setup_bytes_down = 0;
};

std::size_t resolved_w_enc(const DctoConfig& config, std::size_t L);

// Decodes the final trajectory from theta on the server.
GraphEstimate decode_estimate(const ThetaParams& theta, const PriorSet& priors, const Eigen::VectorXd& enc_input);

// R rounds of broadcast, local training on every client and FedAvg.  With
// `resume`, training continues from the stored round.  `on_round` runs on the
// server after every aggregation.
DctoResult run_dcto(const PriorSet& priors, std::span<const TimeSeriesPanel> panels, const DctoConfig& config,
                    const std::optional<DctoState>& resume = std::nullopt,
                    const std::function<void(const DctoState&)>& on_round = {});

struct PipelineConfig {
    DismConfig dism;
    DctoConfig dcto;
};

struct PipelineResult {
    DismResult dism;
    DctoResult dcto;
};

PipelineResult run_pipeline(std::span<const TimeSeriesPanel> panels, std::size_t L, const PipelineConfig& config);

}  // namespace fedtcd
