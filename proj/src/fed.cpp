#include "fedtcd/fed.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <string>
#include <thread>

#include "fedtcd/bytes.hpp"
#include "fedtcd/errors.hpp"
#include "fedtcd/parallel.hpp"

namespace fedtcd {

namespace {
std::atomic<unsigned> g_max_threads{0};
}

void set_max_threads(unsigned n) { g_max_threads = n; }

unsigned max_threads() {
    const unsigned cap = g_max_threads.load();
    if (cap != 0) return cap;
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<double> fedavg(std::span<const std::vector<double>> client_params, std::span<const std::size_t> weights) {
    if (client_params.empty()) throw ConfigError("fedavg: no client parameters");
    if (client_params.size() != weights.size()) throw ConfigError("fedavg: one weight per client required");
    const std::size_t P = client_params.front().size();
    std::size_t N = 0;
    for (std::size_t k = 0; k < client_params.size(); ++k) {
        if (client_params[k].size() != P) throw ConfigError("fedavg: parameter layout mismatch");
        N += weights[k];
    }
    if (N == 0) throw ConfigError("fedavg: total weight is zero");
    std::vector<double> out(P, 0.0);
    for (std::size_t k = 0; k < client_params.size(); ++k) {
        const double w = static_cast<double>(weights[k]) / static_cast<double>(N);
        for (std::size_t a = 0; a < P; ++a) out[a] += w * client_params[k][a];
    }
    return out;
}

std::vector<std::uint8_t> serialize_params(std::span<const double> flat, std::uint32_t round) {
    ByteWriter w;
    w.put_magic("DDPM");
    w.put<std::uint32_t>(round);
    w.put<std::uint64_t>(flat.size());
    w.put_doubles(flat);
    return w.take();
}

std::vector<double> deserialize_params(std::span<const std::uint8_t> bytes, std::uint32_t* round) {
    ByteReader r(bytes, "parameter message");
    r.expect_magic("DDPM");
    const auto rd = r.get<std::uint32_t>();
    if (round) *round = rd;
    const auto n = r.get<std::uint64_t>();
    if (n * sizeof(double) != r.remaining()) throw IoError("parameter message: length mismatch");
    return r.get_doubles(n);
}

std::size_t resolved_w_enc(const DctoConfig& config, std::size_t L) { return config.w_enc ? config.w_enc : L + 1; }

GraphEstimate decode_estimate(const ThetaParams& theta, const PriorSet& priors, const Eigen::VectorXd& enc_input) {
    TrajectoryOutput out = forward(theta, priors, enc_input);
    return {std::move(out.W_eff), std::move(out.A_eff), priors.S, priors.S_A};
}

namespace {

// Client -> server: warm-up sums for the shared encoder input.
std::vector<std::uint8_t> warmup_message(const TimeSeriesPanel& panel, std::size_t w_enc) {
    const Eigen::VectorXd s = warmup_sum(panel, w_enc);
    ByteWriter w;
    w.put_magic("DDWU");
    w.put<std::uint64_t>(panel.n());
    w.put<std::uint64_t>(static_cast<std::uint64_t>(s.size()));
    w.put_doubles({s.data(), static_cast<std::size_t>(s.size())});
    return w.take();
}

LossComponents weighted(const std::vector<LossComponents>& parts, std::span<const std::size_t> n) {
    std::size_t N = 0;
    for (auto v : n) N += v;
    LossComponents out;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const double w = static_cast<double>(n[k]) / static_cast<double>(N);
        out.total += w * parts[k].total;
        out.mse += w * parts[k].mse;
        out.dag += w * parts[k].dag;
        out.soft_w += w * parts[k].soft_w;
        out.soft_a += w * parts[k].soft_a;
    }
    return out;
}

}  // namespace

DctoResult run_dcto(const PriorSet& priors, std::span<const TimeSeriesPanel> panels, const DctoConfig& config,
                    const std::optional<DctoState>& resume, const std::function<void(const DctoState&)>& on_round) {
    if (panels.empty()) throw ConfigError("dcto: no client panels");
    if (config.R == 0 || config.E == 0) throw ConfigError("dcto: R and E must be >= 1");
    const std::size_t K = panels.size(), L = priors.L(), D = priors.D();
    for (const auto& p : panels)
        if (p.T() != priors.T() || p.D() != D) throw ConfigError("dcto: panel dimensions do not match the priors");
    const ModelShape shape{D, L, config.m, resolved_w_enc(config, L)};

    DctoResult result;
    // Preliminary exchange for the encoder input.
    Eigen::VectorXd enc_sum;
    std::size_t n_total = 0;
    for (const auto& p : panels) {
        const auto msg = warmup_message(p, shape.w_enc);
        result.setup_bytes_up += msg.size();
        ByteReader r(msg, "warm-up message");
        r.expect_magic("DDWU");
        n_total += r.get<std::uint64_t>();
        const auto v = r.get_doubles(r.get<std::uint64_t>());
        const Eigen::Map<const Eigen::VectorXd> part(v.data(), static_cast<Eigen::Index>(v.size()));
        if (enc_sum.size() == 0)
            enc_sum = part;
        else
            enc_sum += part;
    }
    const Eigen::VectorXd enc = enc_sum / static_cast<double>(n_total);
    result.setup_bytes_down = K * (8 + enc.size() * sizeof(double));

    std::vector<LossData> data;
    std::vector<std::size_t> n;
    for (const auto& p : panels) {
        data.push_back(make_loss_data(p, L, enc));
        n.push_back(p.n());
    }

    DctoState state;
    if (resume) {
        state = *resume;
        if (state.theta.shape != shape) throw ConfigError("dcto: checkpoint shape does not match the configuration");
        if (state.next_round > config.R) throw ConfigError("dcto: checkpoint is past the configured round count");
    } else {
        state.theta = init_theta(shape, config.seed);
    }

    for (std::size_t r = state.next_round; r < config.R; ++r) {
        const auto start = std::chrono::steady_clock::now();
        RoundLog log;
        log.round = r;
        const auto down = serialize_params(state.theta.flat, static_cast<std::uint32_t>(r));
        log.bytes_down = K * down.size();

        std::vector<std::vector<std::uint8_t>> up(K);
        std::vector<std::vector<LossComponents>> traces(K);
        std::vector<LossComponents> after(K);
        parallel_for(K, [&](std::size_t k) {
            ThetaParams local(shape);
            local.flat = deserialize_params(down);
            try {
                local = local_train(local, priors, data[k], config.E, config.eta, config.lambdas, &traces[k]);
            } catch (const NumericError& e) {
                throw NumericError("round " + std::to_string(r) + ", client " + std::to_string(k) + ": " + e.what());
            }
            after[k] = loss(local, priors, data[k], config.lambdas);
            if (!std::isfinite(after[k].total))
                throw NumericError("round " + std::to_string(r) + ", client " + std::to_string(k) +
                                   ": loss became non-finite after local training");
            up[k] = serialize_params(local.flat, static_cast<std::uint32_t>(r));
        });

        std::vector<std::vector<double>> received;
        for (std::size_t k = 0; k < K; ++k) {
            log.bytes_up += up[k].size();
            received.push_back(deserialize_params(up[k]));
            for (std::size_t s = 0; s < traces[k].size(); ++s) result.steps.push_back({r, k, s, traces[k][s]});
        }
        state.theta.flat = fedavg(received, n);
        state.next_round = r + 1;

        std::vector<LossComponents> global(K);
        parallel_for(K, [&](std::size_t k) { global[k] = loss(state.theta, priors, data[k], config.lambdas); });
        log.client_losses = std::move(after);
        log.global_loss = weighted(global, n);
        log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.rounds.push_back(std::move(log));
        if (on_round) on_round(state);
    }

    result.estimate = decode_estimate(state.theta, priors, enc);
    result.state = std::move(state);
    return result;
}

PipelineResult run_pipeline(std::span<const TimeSeriesPanel> panels, std::size_t L, const PipelineConfig& config) {
    PipelineResult out;
    out.dism = run_dism(panels, L, config.dism);
    out.dcto = run_dcto(out.dism.priors, panels, config.dcto);
    return out;
}

}  // namespace fedtcd
