#pragma once

// Latent ODE that decodes a contemporaneous adjacency trajectory W(t), plus a
// static lag tensor A.  Everything a client trains lives in one flat vector.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedtcd/dism.hpp"
#include "fedtcd/synth.hpp"
#include "fedtcd/tensor.hpp"

namespace fedtcd {

struct ModelShape {
    std::size_t D = 0, L = 0, m = 16, w_enc = 1;

    std::size_t encoder_in() const { return w_enc * D; }
    std::size_t size() const;
    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Flat layout, each matrix column-major:
//   We1 [m, w_enc*D], be1 [m], We2 [m, m], be2 [m],
//   Wp1 [m, m+1], bp1 [m], Wp2 [m, m], bp2 [m],
//   Wd [D*D, m], bd [D*D], A [L, D, D] row-major.
struct ThetaParams {
    ModelShape shape;
    std::vector<double> flat;

    ThetaParams() = default;
    explicit ThetaParams(const ModelShape& s) : shape(s), flat(s.size(), 0.0) {}

    friend bool operator==(const ThetaParams&, const ThetaParams&) = default;
};

// Offsets into ThetaParams::flat.
struct Layout {
    std::size_t We1, be1, We2, be2, Wp1, bp1, Wp2, bp2, Wd, bd, A, end;
    explicit Layout(const ModelShape& s);
};

// Glorot-uniform weights scaled by 0.5, zero biases, A = 0.
ThetaParams init_theta(const ModelShape& shape, std::uint64_t seed);

// Sum over samples of the first w_enc slices, flattened t-major.
Eigen::VectorXd warmup_sum(const TimeSeriesPanel& panel, std::size_t w_enc);
// Warm-up mean: the first w_enc slices averaged over all samples of
// all panels, flattened t-major.  Every client encodes the same vector.
Eigen::VectorXd encoder_input(std::span<const TimeSeriesPanel> panels, std::size_t w_enc);

struct TrajectoryOutput {
    Eigen::MatrixXd latents;  // [T, m]; rows t < w_enc - 1 copy the initial state
    Tensor3 W_raw;            // [T, D, D]
    Tensor3 W_eff;
    Tensor3 A_eff;            // [L, D, D]
};

// Masked lag tensor A * S_A.
Tensor3 masked_lags(const ThetaParams& theta, const PriorSet& priors);

// One classical RK4 step of size 1 from (h, t).  f(point, time, stage) with
// stage 0..3.
template <class F>
Eigen::VectorXd rk4_step(const F& f, const Eigen::VectorXd& h, double t) {
    const Eigen::VectorXd k1 = f(h, t, 0);
    const Eigen::VectorXd k2 = f(h + 0.5 * k1, t + 0.5, 1);
    const Eigen::VectorXd k3 = f(h + 0.5 * k2, t + 0.5, 2);
    const Eigen::VectorXd k4 = f(h + k3, t + 1.0, 3);
    return h + (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
}

TrajectoryOutput forward(const ThetaParams& theta, const PriorSet& priors, const Eigen::VectorXd& enc_input);

// Truncated series sum_{k=1}^{D} tr((W*W)^k) / k! and its gradient in W.
double h_acyc(const Eigen::MatrixXd& W);
Eigen::MatrixXd h_acyc_grad(const Eigen::MatrixXd& W);

// Per-client sufficient data for the reconstruction loss: for every t >= L
// the Gram matrix of x = [V^t, V^{t-1}, ..., V^{t-L}] summed over samples.
struct LossData {
    std::size_t n = 0, T = 0, D = 0, L = 0;
    std::vector<Eigen::MatrixXd> grams;  // index t - L
    Eigen::VectorXd enc_input;
    double sum_sq = 0.0;  // sum of (V_d^t)^2 over samples, t >= L, d
};

LossData make_loss_data(const TimeSeriesPanel& panel, std::size_t L, const Eigen::VectorXd& enc_input);

struct Lambdas {
    double W = 1e-2, A = 1e-2, DAG = 1.0;
};

struct LossComponents {
    double total = 0.0, mse = 0.0, dag = 0.0, soft_w = 0.0, soft_a = 0.0;
};

LossComponents loss(const ThetaParams& theta, const PriorSet& priors, const LossData& data, const Lambdas& lambdas);

// Reverse-mode gradient through the unrolled RK4 steps, same layout as
// theta.flat.  Optionally reports the loss of the same forward pass.
std::vector<double> gradient(const ThetaParams& theta, const PriorSet& priors, const LossData& data,
                             const Lambdas& lambdas, LossComponents* value = nullptr);

// E full-batch gradient steps.  trace, when given, receives the loss before
// each step.
ThetaParams local_train(const ThetaParams& theta, const PriorSet& priors, const LossData& data, std::size_t E,
                        double eta, const Lambdas& lambdas, std::vector<LossComponents>* trace = nullptr);

}  // namespace fedtcd
