#pragma once

// Monte-Carlo estimators: KL, Fisher, cross-entropy, entropy, the
// importance-sampled log-partition, score matching, and NCE. Every estimator
// reports a standard error so tests can be phrased in SE units.

#include "ebm/core.hpp"
#include "ebm/densities.hpp"
#include "ebm/mlp.hpp"

namespace ebm {

struct DivergenceEstimate {
    double value = 0.0;
    double std_error = 0.0;
    long n_samples = 0;
};

// Mean and standard error of the mean (sample sd / sqrt(n)).
inline DivergenceEstimate mc_mean(std::span<const double> vals) {
    if (vals.size() < 2) fail_config("mc_mean: need n >= 2");
    DivergenceEstimate est;
    est.n_samples = long(vals.size());
    est.value = pairwise_mean(vals);
    Vec dev(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
        double r = vals[i] - est.value;
        dev[i] = r * r;
    }
    double var = pairwise_sum(dev) / double(vals.size() - 1);
    est.std_error = std::sqrt(var / double(vals.size()));
    return est;
}

// E_{rho1}[log rho1 - log rho2]
inline DivergenceEstimate kl_mc(const AnalyticDensity& rho1, const AnalyticDensity& rho2,
                                std::size_t n, RngStream& stream) {
    if (rho1.dim() != rho2.dim()) fail_config("kl_mc: dimension mismatch");
    if (n < 2) fail_config("kl_mc: need n >= 2");
    Vec x(rho1.dim()), vals(n);
    for (std::size_t i = 0; i < n; ++i) {
        rho1.sample(stream, x);
        double l1 = rho1.log_pdf(x), l2 = rho2.log_pdf(x);
        if (!std::isfinite(l1) || !std::isfinite(l2))
            fail_numeric("kl_mc: non-finite log density at a sample");
        vals[i] = l1 - l2;
    }
    return mc_mean(vals);
}

// E_{rho1}[ |score1 - score2|^2 ]
inline DivergenceEstimate fisher_mc(const AnalyticDensity& rho1,
                                    const AnalyticDensity& rho2, std::size_t n,
                                    RngStream& stream) {
    if (rho1.dim() != rho2.dim()) fail_config("fisher_mc: dimension mismatch");
    if (n < 2) fail_config("fisher_mc: need n >= 2");
    int d = rho1.dim();
    Vec x(d), s1(d), s2(d), vals(n);
    for (std::size_t i = 0; i < n; ++i) {
        rho1.sample(stream, x);
        rho1.score(x, s1);
        rho2.score(x, s2);
        double q = 0.0;
        for (int j = 0; j < d; ++j) {
            double r = s1[j] - s2[j];
            q += r * r;
        }
        if (!std::isfinite(q)) fail_numeric("fisher_mc: non-finite score at a sample");
        vals[i] = q;
    }
    return mc_mean(vals);
}

// H(rho*, rho_theta) = log Z + E_*[U]; the std error covers the MC piece only.
inline DivergenceEstimate cross_entropy(const EnergyModel& U, double log_Z,
                                        const SampleBatch& data) {
    std::size_t n = data.rows();
    if (n < 1) fail_config("cross_entropy: empty data");
    Vec vals(n);
    for (std::size_t i = 0; i < n; ++i) vals[i] = U.energy(data.row(i));
    if (n == 1) return {log_Z + vals[0], 0.0, 1};
    DivergenceEstimate est = mc_mean(vals);
    est.value += log_Z;
    return est;
}

// -E_rho[log rho], by MC over the density's own samples.
inline DivergenceEstimate entropy_mc(const AnalyticDensity& rho, std::size_t n,
                                     RngStream& stream) {
    if (n < 2) fail_config("entropy_mc: need n >= 2");
    Vec x(rho.dim()), vals(n);
    for (std::size_t i = 0; i < n; ++i) {
        rho.sample(stream, x);
        vals[i] = -rho.log_pdf(x);
    }
    return mc_mean(vals);
}

// log Z = log E_proposal[exp(-U - log_pdf_proposal)], log-sum-exp form.
// Std error by the delta method: sd(w) / (mean(w) sqrt(n)) on the shifted
// weights, which is exact-to-first-order and exactly 0 for constant weights.
inline DivergenceEstimate log_z_importance(const EnergyModel& U,
                                           const AnalyticDensity& proposal,
                                           std::size_t n, RngStream& stream) {
    if (proposal.dim() != U.dim()) fail_config("log_z_importance: dimension mismatch");
    if (n < 2) fail_config("log_z_importance: need n >= 2");
    Vec x(U.dim()), lw(n);
    for (std::size_t i = 0; i < n; ++i) {
        proposal.sample(stream, x);
        lw[i] = -U.energy(x) - proposal.log_pdf(x);
        if (std::isnan(lw[i])) fail_numeric("log_z_importance: NaN log weight");
    }
    double m = *std::max_element(lw.begin(), lw.end());
    if (!std::isfinite(m)) fail_numeric("log_z_importance: all weights vanished");
    Vec w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(lw[i] - m);
    double mean_w = pairwise_mean(w);
    Vec dev(n);
    for (std::size_t i = 0; i < n; ++i) {
        double r = w[i] - mean_w;
        dev[i] = r * r;
    }
    double sd = std::sqrt(pairwise_sum(dev) / double(n - 1));
    DivergenceEstimate est;
    est.value = m + std::log(mean_w);
    est.std_error = sd / (mean_w * std::sqrt(double(n)));
    est.n_samples = long(n);
    return est;
}

// ---------------------------------------------------------------------------
// Score matching: J(theta) = E_*[ (1/2)|s_theta|^2 + tr d_x s_theta ].
// A model exposes the value, the exact Jacobian trace, and theta-gradients of
// both pieces.

class ScoreModel {
public:
    virtual ~ScoreModel() = default;
    virtual int dim() const = 0;
    virtual int param_count() const = 0;
    virtual void value(std::span<const double> x, std::span<double> out) const = 0;
    virtual double jacobian_trace(std::span<const double> x) const = 0;
    // acc += w * d/dtheta [ (1/2)|s(x)|^2 ]
    virtual void grad_theta_half_sq(std::span<const double> x, double w,
                                    std::span<double> acc) const = 0;
    // acc += w * d/dtheta [ tr d_x s(x) ]
    virtual void grad_theta_trace(std::span<const double> x, double w,
                                  std::span<double> acc) const = 0;
    virtual Vec params() const = 0;
    virtual void set_params(std::span<const double> theta) = 0;
};

// s_theta(x) = -theta x in 1D: the family whose loss is (1/2) theta^2 E[x^2]
// - theta with minimizer theta* = 1 on unit-variance data.
class LinearScore1D final : public ScoreModel {
public:
    explicit LinearScore1D(double theta) : theta_(theta) {}
    int dim() const override { return 1; }
    int param_count() const override { return 1; }
    void value(std::span<const double> x, std::span<double> out) const override {
        out[0] = -theta_ * x[0];
    }
    double jacobian_trace(std::span<const double>) const override { return -theta_; }
    void grad_theta_half_sq(std::span<const double> x, double w,
                            std::span<double> acc) const override {
        acc[0] += w * theta_ * x[0] * x[0];
    }
    void grad_theta_trace(std::span<const double>, double w,
                          std::span<double> acc) const override {
        acc[0] += w * -1.0;
    }
    Vec params() const override { return {theta_}; }
    void set_params(std::span<const double> th) override { theta_ = th[0]; }

private:
    double theta_;
};

class MlpScore final : public ScoreModel {
public:
    explicit MlpScore(Mlp net) : net_(std::move(net)) {
        if (net_.in() != net_.out()) fail_config("MlpScore: needs out == in");
    }
    int dim() const override { return net_.in(); }
    int param_count() const override { return net_.param_count(); }
    void value(std::span<const double> x, std::span<double> out) const override {
        net_.forward(x, out);
    }
    double jacobian_trace(std::span<const double> x) const override {
        Mlp::Cache c;
        net_.forward(x, c);
        return net_.jacobian_trace(c);
    }
    void grad_theta_half_sq(std::span<const double> x, double w,
                            std::span<double> acc) const override {
        Mlp::Cache c;
        net_.forward(x, c);
        net_.backward(c, c.y, w, acc, {});  // cotangent s itself: d(1/2|s|^2)
    }
    void grad_theta_trace(std::span<const double> x, double w,
                          std::span<double> acc) const override {
        Mlp::Cache c;
        net_.forward(x, c);
        net_.trace_grad_theta(c, w, acc);
    }
    Vec params() const override { return net_.params(); }
    void set_params(std::span<const double> th) override { net_.set_params(th); }

private:
    Mlp net_;
};

struct LossWithGrad {
    double loss = 0.0;
    Vec grad_theta;
};

inline LossWithGrad score_matching_loss(const ScoreModel& s, const SampleBatch& data) {
    std::size_t n = data.rows();
    if (n < 1) fail_config("score_matching_loss: empty data");
    if (data.dim != s.dim()) fail_config("score_matching_loss: dimension mismatch");
    LossWithGrad out;
    out.grad_theta.assign(s.param_count(), 0.0);
    Vec sv(s.dim()), terms(n);
    double w = 1.0 / double(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto x = data.row(i);
        s.value(x, sv);
        terms[i] = 0.5 * norm2_sq(sv) + s.jacobian_trace(x);
        s.grad_theta_half_sq(x, w, out.grad_theta);
        s.grad_theta_trace(x, w, out.grad_theta);
    }
    out.loss = pairwise_mean(terms);
    return out;
}

// ---------------------------------------------------------------------------
// Noise-contrastive estimation with an explicit trainable log Z.
// f(x) = -U(x) - log_Z_param - log rho_noise(x); minimize
//   -[ mean_data log sigma(f) + mean_noise log(1 - sigma(f)) ].

inline double softplus(double t) {
    return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

struct NceResult {
    double loss = 0.0;
    Vec grad_theta;
    double grad_log_z = 0.0;
};

inline NceResult nce_loss(const EnergyModel& U, double log_z_param,
                          const AnalyticDensity& noise, const SampleBatch& data,
                          const SampleBatch& noise_samples) {
    std::size_t n = data.rows(), m = noise_samples.rows();
    if (n < 1 || m < 1) fail_config("nce_loss: empty batch");
    NceResult out;
    out.grad_theta.assign(U.param_count(), 0.0);
    auto f_of = [&](std::span<const double> x) {
        double lpn = noise.log_pdf(x);
        if (!std::isfinite(lpn)) fail_numeric("nce_loss: noise log_pdf non-finite");
        return -U.energy(x) - log_z_param - lpn;
    };
    Vec terms_d(n), terms_n(m);
    double wn = 1.0 / double(n), wm = 1.0 / double(m);
    double gz = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto x = data.row(i);
        double f = f_of(x);
        terms_d[i] = softplus(-f);  // -log sigma(f)
        double r = 1.0 - sigmoid(f);
        U.grad_theta_accum(x, wn * r, out.grad_theta);
        gz += wn * r;
    }
    for (std::size_t j = 0; j < m; ++j) {
        auto x = noise_samples.row(j);
        double f = f_of(x);
        terms_n[j] = softplus(f);  // -log(1 - sigma(f))
        double r = sigmoid(f);
        U.grad_theta_accum(x, -wm * r, out.grad_theta);
        gz -= wm * r;
    }
    out.loss = pairwise_mean(terms_d) + pairwise_mean(terms_n);
    out.grad_log_z = gz;
    return out;
}

}  // namespace ebm
