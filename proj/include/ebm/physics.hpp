#pragma once

// Thermodynamic identities at equilibrium, reduced to assertable numbers:
// the free-energy relation log Z + beta*E[U] - H = 0 for Boltzmann pairs
// (U, rho), and the maximum-entropy status of the uniform density on an
// interval.

#include "ebm/core.hpp"
#include "ebm/densities.hpp"

namespace ebm {

struct ThermoReport {
    double log_z = 0.0;
    double mean_energy = 0.0;  // plain MC mean of U; beta enters the residual
    double entropy = 0.0;
    double residual = 0.0;
};

// oracle must be the normalized Boltzmann density exp(-beta U)/Z. Verified at
// 10 oracle draws: c(x) = -log rho(x) - beta U(x) must be constant; the
// constant is log Z and feeds the report.
inline ThermoReport free_energy_residual(const EnergyModel& U, double beta,
                                         const AnalyticDensity& rho,
                                         std::size_t n_samples, std::uint64_t seed,
                                         int n_threads = 1) {
    if (!(beta > 0)) fail_config("free_energy_residual: beta must be positive");
    if (U.dim() != rho.dim()) fail_config("free_energy_residual: dimension mismatch");
    if (n_samples < 2) fail_config("free_energy_residual: need n_samples >= 2");
    int d = U.dim();

    RngStream check_stream(seed, kModelInitStreamId);
    Vec x(d);
    double c0 = 0.0;
    for (int i = 0; i < 10; ++i) {
        rho.sample(check_stream, x);
        double c = -rho.log_pdf(x) - beta * U.energy(x);
        if (i == 0) c0 = c;
        else if (std::abs(c - c0) > 1e-6) fail_config("oracle/energy mismatch");
    }

    ThermoReport rep;
    rep.log_z = c0;

    // one stream per sample keeps the estimate independent of n_threads
    Vec u_terms(n_samples), h_terms(n_samples);
    parallel_for(n_samples, n_threads, [&](std::size_t lo, std::size_t hi) {
        Vec xi(d);
        for (std::size_t i = lo; i < hi; ++i) {
            RngStream st(seed, i);
            rho.sample(st, xi);
            u_terms[i] = U.energy(xi);
            h_terms[i] = -rho.log_pdf(xi);
        }
    });
    rep.mean_energy = pairwise_mean(u_terms);
    rep.entropy = pairwise_mean(h_terms);
    rep.residual = rep.log_z + beta * rep.mean_energy - rep.entropy;
    require_finite(std::span<const double>(&rep.residual, 1),
                   "free_energy_residual: non-finite report");
    return rep;
}

// ---------------------------------------------------------------------------
// Piecewise-constant densities on an interval, equal-width bins.

class StepDensity1D final : public AnalyticDensity {
public:
    // masses: per-bin probability, must sum to 1; all bins strictly positive
    StepDensity1D(double lo, double hi, Vec masses)
        : lo_(lo), hi_(hi), m_(std::move(masses)) {
        if (!(hi_ > lo_)) fail_config("StepDensity1D: need hi > lo");
        if (m_.empty()) fail_config("StepDensity1D: no bins");
        double s = pairwise_sum(m_);
        if (std::abs(s - 1.0) > 1e-12) fail_config("StepDensity1D: masses must sum to 1");
        for (double v : m_)
            if (!(v > 0)) fail_config("StepDensity1D: bin masses must be positive");
    }

    int dim() const override { return 1; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    std::size_t bins() const { return m_.size(); }
    double bin_width() const { return (hi_ - lo_) / double(m_.size()); }

    double log_pdf(std::span<const double> x) const override {
        double v = x[0];
        if (v < lo_ || v > hi_) return -std::numeric_limits<double>::infinity();
        auto k = std::min<std::size_t>(m_.size() - 1,
                                       std::size_t((v - lo_) / bin_width()));
        return std::log(m_[k] / bin_width());
    }
    // zero almost everywhere (density is flat within bins)
    void score(std::span<const double>, std::span<double> out) const override {
        out[0] = 0.0;
    }
    void sample(RngStream& stream, std::span<double> out) const override {
        double u = stream.uniform();
        double acc = 0.0;
        std::size_t k = m_.size() - 1;
        for (std::size_t i = 0; i < m_.size(); ++i) {
            acc += m_[i];
            if (u < acc) { k = i; break; }
        }
        out[0] = lo_ + (double(k) + stream.uniform()) * bin_width();
    }
    double log_Z() const override { return 0.0; }

    // H = -sum m_k log(m_k / w), closed form
    std::optional<double> entropy() const override {
        double w = bin_width();
        Vec terms(m_.size());
        for (std::size_t k = 0; k < m_.size(); ++k)
            terms[k] = -m_[k] * std::log(m_[k] / w);
        return pairwise_sum(terms);
    }

private:
    double lo_, hi_;
    Vec m_;
};

// The maximum-entropy density on [lo, hi]: uniform, entropy log(hi - lo).
inline StepDensity1D maxent_uniform(double lo, double hi) {
    if (!(hi > lo)) fail_config("maxent_uniform: need hi > lo");
    return StepDensity1D(lo, hi, Vec{1.0});
}

// Random normalized step density (positive levels), for perturbation checks.
inline StepDensity1D random_step_density(double lo, double hi, std::size_t bins,
                                         RngStream& stream) {
    if (bins == 0) fail_config("random_step_density: need bins >= 1");
    Vec m(bins);
    for (double& v : m) v = 0.1 + stream.uniform();
    double s = pairwise_sum(m);
    for (double& v : m) v /= s;
    return StepDensity1D(lo, hi, std::move(m));
}

}  // namespace ebm
