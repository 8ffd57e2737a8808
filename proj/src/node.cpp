#include "fedtcd/node.hpp"

#include <array>
#include <cmath>
#include <random>
#include <string>

#include "fedtcd/errors.hpp"

namespace fedtcd {

std::size_t ModelShape::size() const { return Layout(*this).end; }

Layout::Layout(const ModelShape& s) {
    const std::size_t m = s.m, DD = s.D * s.D;
    std::size_t at = 0;
    auto take = [&at](std::size_t n) {
        const std::size_t here = at;
        at += n;
        return here;
    };
    We1 = take(m * s.encoder_in());
    be1 = take(m);
    We2 = take(m * m);
    be2 = take(m);
    Wp1 = take(m * (m + 1));
    bp1 = take(m);
    Wp2 = take(m * m);
    bp2 = take(m);
    Wd = take(DD * m);
    bd = take(DD);
    A = take(s.L * DD);
    end = at;
}

ThetaParams init_theta(const ModelShape& shape, std::uint64_t seed) {
    if (shape.D == 0 || shape.m == 0 || shape.w_enc == 0) throw ConfigError("init_theta: D, m and w_enc must be >= 1");
    ThetaParams theta(shape);
    const Layout lay(shape);
    std::mt19937_64 rng(seed);
    auto glorot = [&](std::size_t offset, std::size_t rows, std::size_t cols) {
        const double limit = 0.5 * std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (std::size_t a = 0; a < rows * cols; ++a) theta.flat[offset + a] = u(rng);
    };
    const std::size_t m = shape.m;
    glorot(lay.We1, m, shape.encoder_in());
    glorot(lay.We2, m, m);
    glorot(lay.Wp1, m, m + 1);
    glorot(lay.Wp2, m, m);
    glorot(lay.Wd, shape.D * shape.D, m);
    return theta;
}

Eigen::VectorXd warmup_sum(const TimeSeriesPanel& panel, std::size_t w_enc) {
    const std::size_t D = panel.D();
    if (w_enc == 0 || w_enc > panel.T()) throw ConfigError("encoder input: w_enc must lie in [1, T]");
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w_enc * D));
    for (std::size_t s = 0; s < panel.n(); ++s)
        for (std::size_t t = 0; t < w_enc; ++t)
            for (std::size_t d = 0; d < D; ++d) x(static_cast<Eigen::Index>(t * D + d)) += panel(s, t, d);
    return x;
}

Eigen::VectorXd encoder_input(std::span<const TimeSeriesPanel> panels, std::size_t w_enc) {
    if (panels.empty()) throw ConfigError("encoder_input: no panels");
    Eigen::VectorXd x = warmup_sum(panels.front(), w_enc);
    std::size_t n = panels.front().n();
    for (std::size_t k = 1; k < panels.size(); ++k) {
        x += warmup_sum(panels[k], w_enc);
        n += panels[k].n();
    }
    return x / static_cast<double>(n);
}

namespace {

using Map = Eigen::Map<const Eigen::MatrixXd>;
using VMap = Eigen::Map<const Eigen::VectorXd>;
using Idx = Eigen::Index;

struct Net {
    Map We1, We2, Wp1, Wp2, Wd;
    VMap be1, be2, bp1, bp2, bd;

    Net(const ThetaParams& th, const Layout& l)
        : We1(th.flat.data() + l.We1, Idx(th.shape.m), Idx(th.shape.encoder_in())),
          We2(th.flat.data() + l.We2, Idx(th.shape.m), Idx(th.shape.m)),
          Wp1(th.flat.data() + l.Wp1, Idx(th.shape.m), Idx(th.shape.m + 1)),
          Wp2(th.flat.data() + l.Wp2, Idx(th.shape.m), Idx(th.shape.m)),
          Wd(th.flat.data() + l.Wd, Idx(th.shape.D * th.shape.D), Idx(th.shape.m)),
          be1(th.flat.data() + l.be1, Idx(th.shape.m)),
          be2(th.flat.data() + l.be2, Idx(th.shape.m)),
          bp1(th.flat.data() + l.bp1, Idx(th.shape.m)),
          bp2(th.flat.data() + l.bp2, Idx(th.shape.m)),
          bd(th.flat.data() + l.bd, Idx(th.shape.D * th.shape.D)) {}
};

struct Stage {
    Eigen::VectorXd u;  // [point; time / T]
    Eigen::VectorXd a;  // tanh activations
};

struct Tape {
    std::size_t t0 = 0, T = 0;
    Eigen::VectorXd x, a1, h0;
    std::vector<Eigen::VectorXd> h;      // index t - t0
    std::vector<std::array<Stage, 4>> steps;  // step from t0 + s to t0 + s + 1
};

Eigen::VectorXd processor(const Net& net, const Eigen::VectorXd& p, double time, double T, Stage& st) {
    const Idx m = p.size();
    st.u.resize(m + 1);
    st.u.head(m) = p;
    st.u(m) = time / T;
    st.a = (net.Wp1 * st.u + net.bp1).array().tanh();
    return (net.Wp2 * st.a + net.bp2) / T;
}

void check_shapes(const ThetaParams& theta, const PriorSet& priors) {
    const ModelShape& s = theta.shape;
    if (theta.flat.size() != s.size()) throw ConfigError("theta: flat vector does not match its shape");
    if (priors.D() != s.D || priors.L() != s.L) throw ConfigError("theta and priors disagree on D or L");
    if (priors.S_A.d1 != s.D && s.L > 0) throw ConfigError("priors: lag mask shape mismatch");
    if (s.w_enc == 0 || s.w_enc > priors.T()) throw ConfigError("w_enc must lie in [1, T]");
}

Tape run_forward(const ThetaParams& theta, const Net& net, std::size_t T, const Eigen::VectorXd& enc_input) {
    const ModelShape& s = theta.shape;
    if (static_cast<std::size_t>(enc_input.size()) != s.encoder_in())
        throw ConfigError("encoder input has the wrong length");
    Tape tape;
    tape.T = T;
    tape.t0 = s.w_enc - 1;
    tape.x = enc_input;
    tape.a1 = (net.We1 * enc_input + net.be1).array().tanh();
    tape.h0 = (net.We2 * tape.a1 + net.be2).array().tanh();
    tape.h.push_back(tape.h0);
    if (!tape.h0.allFinite()) throw NumericError("forward: non-finite latent at t = " + std::to_string(tape.t0));
    const double Td = static_cast<double>(T);
    for (std::size_t t = tape.t0; t + 1 < T; ++t) {
        const Eigen::VectorXd& h = tape.h.back();
        auto& st = tape.steps.emplace_back();
        const double tt = static_cast<double>(t);
        Eigen::VectorXd next = rk4_step(
            [&](const Eigen::VectorXd& p, double time, int stage) { return processor(net, p, time, Td, st[stage]); },
            h, tt);
        if (!next.allFinite()) throw NumericError("forward: non-finite latent at t = " + std::to_string(t + 1));
        tape.h.push_back(std::move(next));
    }
    return tape;
}

const Eigen::VectorXd& latent_at(const Tape& tape, std::size_t t) {
    return tape.h[t < tape.t0 ? 0 : t - tape.t0];
}

// W_raw(t) as a row-major D x D matrix.
Eigen::MatrixXd decode(const Net& net, const Eigen::VectorXd& h, std::size_t D) {
    const Eigen::VectorXd out = net.Wd * h + net.bd;
    Eigen::MatrixXd W(D, D);
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) W(Idx(i), Idx(j)) = out(Idx(i * D + j));
    return W;
}

Eigen::MatrixXd apply_mask(const Eigen::MatrixXd& W, const std::uint8_t* mask) {
    const auto D = static_cast<std::size_t>(W.rows());
    Eigen::MatrixXd out(W.rows(), W.cols());
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) out(Idx(i), Idx(j)) = mask[i * D + j] ? W(Idx(i), Idx(j)) : 0.0;
    return out;
}

Eigen::MatrixXd lag_block(const Tensor3& A, std::size_t tau) {
    const std::size_t D = A.d1;
    Eigen::MatrixXd out(D, D);
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) out(Idx(i), Idx(j)) = A(tau, i, j);
    return out;
}

double sign(double x) { return (x > 0.0) - (x < 0.0); }

void check_data(const ThetaParams& theta, const PriorSet& priors, const LossData& data) {
    check_shapes(theta, priors);
    if (data.T != priors.T() || data.D != priors.D() || data.L != priors.L())
        throw ConfigError("loss data does not match the priors' dimensions");
    if (data.n == 0 || data.grams.size() != data.T - data.L) throw ConfigError("loss data is empty");
}

// Shared body of loss() and gradient(); grad == nullptr skips the reverse pass.
LossComponents evaluate(const ThetaParams& theta, const PriorSet& priors, const LossData& data,
                        const Lambdas& lam, std::vector<double>* grad) {
    check_data(theta, priors, data);
    const ModelShape& s = theta.shape;
    const Layout lay(s);
    const Net net(theta, lay);
    const std::size_t T = data.T, D = data.D, L = data.L, m = s.m;
    const Tape tape = run_forward(theta, net, T, data.enc_input);

    const Tensor3 A_eff = masked_lags(theta, priors);
    std::vector<Eigen::MatrixXd> A_blocks;
    for (std::size_t tau = 0; tau < L; ++tau) A_blocks.push_back(lag_block(A_eff, tau));

    LossComponents out;
    const double c = 1.0 / (static_cast<double>(data.n) * static_cast<double>(T - L) * static_cast<double>(D));
    const double Td = static_cast<double>(T);
    std::vector<Eigen::MatrixXd> gW(T, Eigen::MatrixXd::Zero(D, D));  // d loss / d W_eff(t)
    Eigen::MatrixXd gA = Eigen::MatrixXd::Zero(Idx(L * D), Idx(D));  // stacked lag blocks
    const Idx DL = Idx((L + 1) * D);

    for (std::size_t t = 0; t < T; ++t) {
        const Eigen::MatrixXd W = apply_mask(decode(net, latent_at(tape, t), D), priors.S.slice(t));
        const std::uint8_t* soft = priors.L_soft.slice(t);
        for (std::size_t a = 0; a < D * D; ++a) {
            if (!soft[a]) continue;
            const double w = W(Idx(a / D), Idx(a % D));
            out.soft_w += std::abs(w);
            if (grad) gW[t](Idx(a / D), Idx(a % D)) += lam.W / Td * sign(w);
        }
        out.dag += h_acyc(W);
        if (grad && lam.DAG != 0.0) gW[t] += lam.DAG / Td * h_acyc_grad(W);
        if (t < L) continue;

        Eigen::MatrixXd R(DL, Idx(D));  // E - M_t
        R.topRows(Idx(D)) = Eigen::MatrixXd::Identity(Idx(D), Idx(D)) - W;
        for (std::size_t tau = 0; tau < L; ++tau) R.middleRows(Idx((tau + 1) * D), Idx(D)) = -A_blocks[tau];
        const Eigen::MatrixXd GR = data.grams[t - L] * R;
        out.mse += c * (R.transpose() * GR).trace();
        if (grad) {
            gW[t] -= 2.0 * c * GR.topRows(Idx(D));
            gA -= 2.0 * c * GR.bottomRows(Idx(L * D));
        }
    }
    out.soft_w *= lam.W / Td;
    out.dag *= lam.DAG / Td;
    for (std::size_t tau = 0; tau < L; ++tau)
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j) {
                if (!priors.L_soft_A(tau, i, j)) continue;
                const double a = A_eff(tau, i, j);
                out.soft_a += std::abs(a);
                if (grad) gA(Idx(tau * D + i), Idx(j)) += lam.A * sign(a);
            }
    out.soft_a *= lam.A;
    out.total = out.mse + out.dag + out.soft_w + out.soft_a;
    if (!grad) return out;

    std::vector<double>& g = *grad;
    g.assign(theta.flat.size(), 0.0);
    Eigen::Map<Eigen::MatrixXd> gWe1(g.data() + lay.We1, Idx(m), Idx(s.encoder_in()));
    Eigen::Map<Eigen::MatrixXd> gWe2(g.data() + lay.We2, Idx(m), Idx(m));
    Eigen::Map<Eigen::MatrixXd> gWp1(g.data() + lay.Wp1, Idx(m), Idx(m + 1));
    Eigen::Map<Eigen::MatrixXd> gWp2(g.data() + lay.Wp2, Idx(m), Idx(m));
    Eigen::Map<Eigen::MatrixXd> gWd(g.data() + lay.Wd, Idx(D * D), Idx(m));
    Eigen::Map<Eigen::VectorXd> gbe1(g.data() + lay.be1, Idx(m)), gbe2(g.data() + lay.be2, Idx(m));
    Eigen::Map<Eigen::VectorXd> gbp1(g.data() + lay.bp1, Idx(m)), gbp2(g.data() + lay.bp2, Idx(m));
    Eigen::Map<Eigen::VectorXd> gbd(g.data() + lay.bd, Idx(D * D));

    for (std::size_t tau = 0; tau < L; ++tau)
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j)
                if (priors.S_A(tau, i, j)) g[lay.A + (tau * D + i) * D + j] = gA(Idx(tau * D + i), Idx(j));

    // Decoder, then adjoints of the latents.
    std::vector<Eigen::VectorXd> gh(tape.h.size(), Eigen::VectorXd::Zero(Idx(m)));
    Eigen::VectorXd gout(Idx(D * D));
    for (std::size_t t = 0; t < T; ++t) {
        const std::uint8_t* mask = priors.S.slice(t);
        for (std::size_t a = 0; a < D * D; ++a) gout(Idx(a)) = mask[a] ? gW[t](Idx(a / D), Idx(a % D)) : 0.0;
        const std::size_t k = t < tape.t0 ? 0 : t - tape.t0;
        gWd += gout * tape.h[k].transpose();
        gbd += gout;
        gh[k] += net.Wd.transpose() * gout;
    }

    auto vjp = [&](const Stage& st, const Eigen::VectorXd& up) -> Eigen::VectorXd {
        const Eigen::VectorXd us = up / Td;
        gWp2 += us * st.a.transpose();
        gbp2 += us;
        const Eigen::VectorXd dz = (net.Wp2.transpose() * us).array() * (1.0 - st.a.array().square());
        gWp1 += dz * st.u.transpose();
        gbp1 += dz;
        return net.Wp1.leftCols(Idx(m)).transpose() * dz;
    };
    Eigen::VectorXd adj = gh.back();
    for (std::size_t k = tape.steps.size(); k-- > 0;) {
        const auto& st = tape.steps[k];
        Eigen::VectorXd hbar = adj;
        Eigen::VectorXd k4 = adj / 6.0, k3 = adj / 3.0, k2 = adj / 3.0, k1 = adj / 6.0;
        Eigen::VectorXd d = vjp(st[3], k4);
        hbar += d;
        k3 += d;
        d = vjp(st[2], k3);
        hbar += d;
        k2 += 0.5 * d;
        d = vjp(st[1], k2);
        hbar += d;
        k1 += 0.5 * d;
        hbar += vjp(st[0], k1);
        adj = hbar + gh[k];
    }

    const Eigen::VectorXd dz2 = adj.array() * (1.0 - tape.h0.array().square());
    gWe2 += dz2 * tape.a1.transpose();
    gbe2 += dz2;
    const Eigen::VectorXd dz1 = (net.We2.transpose() * dz2).array() * (1.0 - tape.a1.array().square());
    gWe1 += dz1 * tape.x.transpose();
    gbe1 += dz1;

    for (double v : g)
        if (!std::isfinite(v)) throw NumericError("gradient: non-finite entry");
    return out;
}

}  // namespace

Tensor3 masked_lags(const ThetaParams& theta, const PriorSet& priors) {
    const ModelShape& s = theta.shape;
    const std::size_t off = Layout(s).A;
    Tensor3 A(s.L, s.D, s.D);
    for (std::size_t a = 0; a < A.size(); ++a) A.data[a] = priors.S_A.data[a] ? theta.flat[off + a] : 0.0;
    return A;
}

TrajectoryOutput forward(const ThetaParams& theta, const PriorSet& priors, const Eigen::VectorXd& enc_input) {
    check_shapes(theta, priors);
    const ModelShape& s = theta.shape;
    const Layout lay(s);
    const Net net(theta, lay);
    const std::size_t T = priors.T(), D = s.D;
    const Tape tape = run_forward(theta, net, T, enc_input);
    TrajectoryOutput out{Eigen::MatrixXd(Idx(T), Idx(s.m)), Tensor3(T, D, D), Tensor3(T, D, D),
                         masked_lags(theta, priors)};
    for (std::size_t t = 0; t < T; ++t) {
        const Eigen::VectorXd& h = latent_at(tape, t);
        out.latents.row(Idx(t)) = h.transpose();
        const Eigen::MatrixXd W = decode(net, h, D);
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j) {
                out.W_raw(t, i, j) = W(Idx(i), Idx(j));
                out.W_eff(t, i, j) = priors.S(t, i, j) ? W(Idx(i), Idx(j)) : 0.0;
            }
    }
    return out;
}

double h_acyc(const Eigen::MatrixXd& W) {
    const Eigen::MatrixXd B = W.cwiseProduct(W);
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(B.rows(), B.cols());
    double value = 0.0, fact = 1.0;
    for (Idx k = 1; k <= B.rows(); ++k) {
        P = P * B;
        fact *= static_cast<double>(k);
        value += P.trace() / fact;
    }
    return value;
}

Eigen::MatrixXd h_acyc_grad(const Eigen::MatrixXd& W) {
    const Eigen::MatrixXd B = W.cwiseProduct(W);
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(B.rows(), B.cols());
    Eigen::MatrixXd sum = P;
    double fact = 1.0;
    for (Idx k = 2; k <= B.rows(); ++k) {
        P = P * B;
        fact *= static_cast<double>(k - 1);
        sum += P / fact;
    }
    return 2.0 * W.cwiseProduct(sum.transpose());
}

LossData make_loss_data(const TimeSeriesPanel& panel, std::size_t L, const Eigen::VectorXd& enc_input) {
    const std::size_t n = panel.n(), T = panel.T(), D = panel.D();
    if (T <= L) throw ConfigError("loss data: T must exceed L");
    LossData data;
    data.n = n;
    data.T = T;
    data.D = D;
    data.L = L;
    data.enc_input = enc_input;
    Eigen::MatrixXd X(Idx(n), Idx((L + 1) * D));
    for (std::size_t t = L; t < T; ++t) {
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t q = 0; q <= L; ++q)
                for (std::size_t d = 0; d < D; ++d) X(Idx(s), Idx(q * D + d)) = panel(s, t - q, d);
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(X.cols(), X.cols());
        G.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
        data.grams.push_back(G.selfadjointView<Eigen::Lower>());
        data.sum_sq += X.leftCols(Idx(D)).squaredNorm();
    }
    return data;
}

LossComponents loss(const ThetaParams& theta, const PriorSet& priors, const LossData& data, const Lambdas& lambdas) {
    return evaluate(theta, priors, data, lambdas, nullptr);
}

std::vector<double> gradient(const ThetaParams& theta, const PriorSet& priors, const LossData& data,
                             const Lambdas& lambdas, LossComponents* value) {
    std::vector<double> g;
    const LossComponents v = evaluate(theta, priors, data, lambdas, &g);
    if (value) *value = v;
    return g;
}

ThetaParams local_train(const ThetaParams& theta, const PriorSet& priors, const LossData& data, std::size_t E,
                        double eta, const Lambdas& lambdas, std::vector<LossComponents>* trace) {
    if (E == 0) throw ConfigError("local_train: E must be >= 1");
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("local_train: learning rate must be finite and >= 0");
    ThetaParams out = theta;
    for (std::size_t step = 0; step < E; ++step) {
        LossComponents value;
        const std::vector<double> g = gradient(out, priors, data, lambdas, &value);
        if (!std::isfinite(value.total)) throw NumericError("local_train: loss became non-finite at step " + std::to_string(step));
        if (trace) trace->push_back(value);
        for (std::size_t a = 0; a < g.size(); ++a) out.flat[a] -= eta * g[a];
    }
    return out;
}

}  // namespace fedtcd
