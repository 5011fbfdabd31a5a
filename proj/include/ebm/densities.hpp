#pragma once

// Closed-form reference densities and the exact oracles the test suites
// compare against: diagonal Gaussians, 1D Gaussian mixtures, the
// Ornstein-Uhlenbeck time law, the ULA stationary covariance, and 1D
// trapezoid quadrature for KL / entropy / normalization.

#include <cmath>
#include <memory>
#include <optional>

#include "ebm/core.hpp"

namespace ebm {

inline constexpr double kLog2Pi = 1.8378770664093455;  // log(2*pi)

inline double gauss_log_pdf_1d(double x, double mean, double var) {
    double r = x - mean;
    return -0.5 * (kLog2Pi + std::log(var)) - r * r / (2.0 * var);
}

// log_Z() reports the normalization of the density's canonical unnormalized
// form exp(-U): for Gaussians U is the quadratic energy (log Z = sum of
// (1/2)log(2*pi*sigma^2)), for normalized mixtures U = -log(pdf) (log Z = 0).
class AnalyticDensity {
public:
    virtual ~AnalyticDensity() = default;
    virtual int dim() const = 0;
    virtual double log_pdf(std::span<const double> x) const = 0;
    virtual void score(std::span<const double> x, std::span<double> out) const = 0;
    virtual void sample(RngStream& stream, std::span<double> out) const = 0;
    virtual double log_Z() const = 0;
    virtual std::optional<double> entropy() const = 0;

    Vec score(std::span<const double> x) const {
        Vec s(dim());
        score(x, s);
        return s;
    }
    Vec sample(RngStream& stream) const {
        Vec x(dim());
        sample(stream, x);
        return x;
    }
};

class GaussianDiag final : public AnalyticDensity {
public:
    GaussianDiag(Vec mu, Vec sigma2) : mu_(std::move(mu)), sigma2_(std::move(sigma2)) {
        if (mu_.empty() || mu_.size() != sigma2_.size())
            fail_config("GaussianDiag: mu/sigma2 size mismatch");
        for (double v : sigma2_)
            if (!(v > 0)) fail_config("GaussianDiag: sigma2 entries must be positive");
    }
    static GaussianDiag standard(int d) { return GaussianDiag(Vec(d, 0.0), Vec(d, 1.0)); }

    int dim() const override { return int(mu_.size()); }
    const Vec& mu() const { return mu_; }
    const Vec& sigma2() const { return sigma2_; }

    double log_pdf(std::span<const double> x) const override {
        double lp = 0.0;
        for (std::size_t i = 0; i < mu_.size(); ++i)
            lp += gauss_log_pdf_1d(x[i], mu_[i], sigma2_[i]);
        return lp;
    }
    void score(std::span<const double> x, std::span<double> out) const override {
        for (std::size_t i = 0; i < mu_.size(); ++i)
            out[i] = -(x[i] - mu_[i]) / sigma2_[i];
    }
    void sample(RngStream& stream, std::span<double> out) const override {
        for (std::size_t i = 0; i < mu_.size(); ++i)
            out[i] = mu_[i] + std::sqrt(sigma2_[i]) * stream.normal();
    }
    double log_Z() const override {
        double lz = 0.0;
        for (double v : sigma2_) lz += 0.5 * (kLog2Pi + std::log(v));
        return lz;
    }
    std::optional<double> entropy() const override {
        double h = 0.0;
        for (double v : sigma2_) h += 0.5 * (kLog2Pi + 1.0 + std::log(v));
        return h;
    }

private:
    Vec mu_, sigma2_;
};

class GaussianMixture1D final : public AnalyticDensity {
public:
    GaussianMixture1D(Vec weights, Vec means, Vec stds)
        : w_(std::move(weights)), mu_(std::move(means)), s_(std::move(stds)) {
        if (w_.empty() || w_.size() != mu_.size() || w_.size() != s_.size())
            fail_config("GaussianMixture1D: component size mismatch");
        double tot = 0.0;
        for (std::size_t k = 0; k < w_.size(); ++k) {
            if (!(w_[k] > 0)) fail_config("GaussianMixture1D: weights must be positive");
            if (!(s_[k] > 0)) fail_config("GaussianMixture1D: stds must be positive");
            tot += w_[k];
        }
        if (std::abs(tot - 1.0) > 1e-12)
            fail_config("GaussianMixture1D: weights must sum to 1");
    }

    int dim() const override { return 1; }
    std::size_t components() const { return w_.size(); }
    const Vec& weights() const { return w_; }
    const Vec& means() const { return mu_; }
    const Vec& stds() const { return s_; }

    double log_pdf(std::span<const double> x) const override {
        Vec lp(w_.size());
        for (std::size_t k = 0; k < w_.size(); ++k)
            lp[k] = std::log(w_[k]) + gauss_log_pdf_1d(x[0], mu_[k], s_[k] * s_[k]);
        return log_sum_exp(lp);
    }

    // d/dx log rho = sum_k r_k(x) * (-(x - mu_k)/sigma_k^2) with
    // responsibilities r_k = w_k N_k / sum_j w_j N_j.
    void score(std::span<const double> x, std::span<double> out) const override {
        Vec lp(w_.size());
        for (std::size_t k = 0; k < w_.size(); ++k)
            lp[k] = std::log(w_[k]) + gauss_log_pdf_1d(x[0], mu_[k], s_[k] * s_[k]);
        double m = *std::max_element(lp.begin(), lp.end());
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < w_.size(); ++k) {
            double rk = std::exp(lp[k] - m);
            den += rk;
            num += rk * (-(x[0] - mu_[k]) / (s_[k] * s_[k]));
        }
        out[0] = num / den;
    }

    // Inverse-CDF on the component index (one uniform), then the component's
    // Gaussian draw: exactly three uniform draws per sample.
    void sample(RngStream& stream, std::span<double> out) const override {
        double u = stream.uniform();
        std::size_t k = 0;
        double c = w_[0];
        while (k + 1 < w_.size() && u >= c) c += w_[++k];
        out[0] = mu_[k] + s_[k] * stream.normal();
    }

    double log_Z() const override { return 0.0; }  // canonical U = -log(pdf)
    std::optional<double> entropy() const override { return std::nullopt; }

private:
    Vec w_, mu_, s_;
};

// The bimodal family rho_z = sigmoid(z) N(-5,1) + (1-sigmoid(z)) N(5,1).
inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

inline GaussianMixture1D mixture_from_z(double z) {
    if (!std::isfinite(z)) fail_config("mixture_from_z: z must be finite");
    // sigmoid(-z) rather than 1 - sigmoid(z): the complementary weight would
    // cancel to exactly zero for z beyond ~37.  The floor covers |z| past the
    // exp overflow point, so every finite z yields a valid mixture.
    double wl = std::max(sigmoid(z), 1e-300);
    double wr = std::max(sigmoid(-z), 1e-300);
    return GaussianMixture1D({wl, wr}, {-5.0, 5.0}, {1.0, 1.0});
}

// ---------------------------------------------------------------------------
// Ornstein-Uhlenbeck oracle for the quadratic energy U = sum (x-mu)^2/(2s2):
// the law at time t and the ULA stationary covariance at step h.

struct OuOracle {
    Vec mu;
    Vec sigma2;
    double h = 0.0;  // ULA step the oracle is quoted at (0 = continuous time)
    double t = 0.0;
};

struct OuLaw {
    Vec mean;
    Vec cov_diag;
};

inline OuLaw ou_law_at_time(const OuOracle& o, std::span<const double> x0, double t) {
    if (t < 0) fail_config("ou_law_at_time: t must be >= 0");
    if (o.mu.size() != o.sigma2.size() || x0.size() != o.mu.size())
        fail_config("ou_law_at_time: dimension mismatch");
    OuLaw law;
    law.mean.resize(o.mu.size());
    law.cov_diag.resize(o.mu.size());
    for (std::size_t i = 0; i < o.mu.size(); ++i) {
        double rate = 1.0 / o.sigma2[i];
        law.mean[i] = o.mu[i] + std::exp(-t * rate) * (x0[i] - o.mu[i]);
        law.cov_diag[i] = o.sigma2[i] * (1.0 - std::exp(-2.0 * t * rate));
    }
    return law;
}

// Stationary covariance of ULA on the Gaussian target: sigma^2/(1 - h/(2 sigma^2)),
// valid on the convergence window 0 < h < min(sigma2).
inline Vec ula_limit_covariance(std::span<const double> sigma2, double h) {
    if (sigma2.empty()) fail_config("ula_limit_covariance: empty sigma2");
    double lam_min = *std::min_element(sigma2.begin(), sigma2.end());
    if (!(h > 0) || !(h < lam_min))
        fail_numeric("ULA divergent/invalid step: h must lie in (0, " +
                     std::to_string(lam_min) + ")");
    Vec out(sigma2.size());
    for (std::size_t i = 0; i < sigma2.size(); ++i)
        out[i] = sigma2[i] / (1.0 - h / (2.0 * sigma2[i]));
    return out;
}

// ---------------------------------------------------------------------------
// 1D trapezoid quadrature oracles. Default window [-15, 15] with 20001 nodes
// leaves less than 1e-16 of mass outside for every density used here; the
// boundary check below catches anything wider.

struct QuadGrid {
    double lo = -15.0;
    double hi = 15.0;
    std::size_t n = 20001;
};

namespace detail {
inline double trapezoid(const std::function<double(double)>& f, const QuadGrid& g) {
    if (g.n < 1000) fail_config("quadrature: need n >= 1000");
    if (!(g.hi > g.lo)) fail_config("quadrature: need hi > lo");
    double dx = (g.hi - g.lo) / double(g.n - 1);
    std::vector<double> vals(g.n);
    for (std::size_t i = 0; i < g.n; ++i) vals[i] = f(g.lo + double(i) * dx);
    vals[0] *= 0.5;
    vals[g.n - 1] *= 0.5;
    return pairwise_sum(vals) * dx;
}

inline void check_coverage(const AnalyticDensity& rho, const QuadGrid& g) {
    if (rho.dim() != 1) fail_config("quadrature: densities must be 1D");
    double lo[1] = {g.lo}, hi[1] = {g.hi};
    if (std::exp(rho.log_pdf(lo)) > 1e-10 || std::exp(rho.log_pdf(hi)) > 1e-10)
        fail_numeric("quadrature: insufficient grid coverage (boundary density > 1e-10)");
}
}  // namespace detail

inline double quadrature_normalization(const AnalyticDensity& rho,
                                       const QuadGrid& g = {}) {
    detail::check_coverage(rho, g);
    return detail::trapezoid(
        [&](double x) {
            double v[1] = {x};
            return std::exp(rho.log_pdf(v));
        },
        g);
}

inline double quadrature_kl(const AnalyticDensity& rho1, const AnalyticDensity& rho2,
                            const QuadGrid& g = {}) {
    detail::check_coverage(rho1, g);
    return detail::trapezoid(
        [&](double x) {
            double v[1] = {x};
            double lp1 = rho1.log_pdf(v);
            double p1 = std::exp(lp1);
            if (p1 == 0.0) return 0.0;
            return p1 * (lp1 - rho2.log_pdf(v));
        },
        g);
}

inline double quadrature_entropy(const AnalyticDensity& rho, const QuadGrid& g = {}) {
    detail::check_coverage(rho, g);
    return -detail::trapezoid(
        [&](double x) {
            double v[1] = {x};
            double lp = rho.log_pdf(v);
            double p = std::exp(lp);
            return p == 0.0 ? 0.0 : p * lp;
        },
        g);
}

// Fill an ensemble (or batch) with i.i.d. draws: per-walker streams so the
// result is independent of any parallel schedule.
inline WalkerEnsemble ensemble_from_density(const AnalyticDensity& rho, std::size_t n,
                                            std::uint64_t seed) {
    WalkerEnsemble e = WalkerEnsemble::zeros(n, rho.dim(), seed);
    for (std::size_t i = 0; i < n; ++i) rho.sample(e.streams[i], e.walker(i));
    return e;
}

inline SampleBatch sample_batch(const AnalyticDensity& rho, std::size_t n,
                                RngStream& stream) {
    SampleBatch b(rho.dim(), n);
    for (std::size_t i = 0; i < n; ++i) rho.sample(stream, b.row(i));
    return b;
}

}  // namespace ebm
