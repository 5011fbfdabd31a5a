#pragma once

// Markov kernels targeting exp(-U)/Z: random-walk Metropolis-Hastings,
// Unadjusted Langevin (ULA), Metropolis-Adjusted Langevin (MALA), and the
// ensemble chain driver with moment / acceptance / autocorrelation stats.
//
// Every kernel consumes a fixed number of stream draws per step (d normals,
// plus one uniform for the accept test where there is one), so trajectories
// are a pure function of (seed, stream id) regardless of accept history.

#include "ebm/core.hpp"

namespace ebm {

struct SamplerConfig {
    double step_h = 0.1;  // ULA/MALA time step; proposal std for MH
    long n_steps = 0;
    long burn_in = -1;  // negative: default to n_steps/10

    long effective_burn_in() const { return burn_in < 0 ? n_steps / 10 : burn_in; }
    void validate() const {
        if (!(step_h > 0)) fail_config("SamplerConfig: step_h must be positive");
        if (n_steps < 0) fail_config("SamplerConfig: n_steps must be >= 0");
        if (effective_burn_in() > n_steps)
            fail_config("SamplerConfig: burn_in exceeds n_steps");
    }
};

enum class Kernel { mh, ula, mala };

inline Kernel kernel_from_name(const std::string& name) {
    if (name == "mh") return Kernel::mh;
    if (name == "ula") return Kernel::ula;
    if (name == "mala") return Kernel::mala;
    fail_config("unknown kernel '" + name + "' (expected mh|ula|mala)");
}

// min{1, exp(-U(x') + U(x) + log g_bwd - log g_fwd)}; only energy differences
// enter, never Z.
inline double mh_accept_ratio(const EnergyModel& U, std::span<const double> x,
                              std::span<const double> x_prop, double log_g_fwd,
                              double log_g_bwd) {
    double a = -U.energy(x_prop) + U.energy(x) + log_g_bwd - log_g_fwd;
    require_finite(a, "mh_accept_ratio");
    return std::min(1.0, std::exp(a));
}

// In-place random-walk MH step. prop is caller scratch of size d.
inline bool mh_step_inplace(const EnergyModel& U, std::span<double> x, double step_h,
                            RngStream& stream, std::span<double> prop) {
    for (std::size_t i = 0; i < x.size(); ++i) prop[i] = x[i] + step_h * stream.normal();
    double u_cur = U.energy(x);
    double u_prop = U.energy(prop);
    if (!std::isfinite(u_prop) || !std::isfinite(u_cur))
        fail_numeric("mh_step: non-finite proposal energy");
    double u = stream.uniform();  // drawn unconditionally: fixed draw count
    if (u < std::min(1.0, std::exp(u_cur - u_prop))) {
        std::copy(prop.begin(), prop.end(), x.begin());
        return true;
    }
    return false;
}

struct StepResult {
    Vec x;
    bool accepted = false;
};

inline StepResult mh_step(const EnergyModel& U, std::span<const double> x,
                          const SamplerConfig& cfg, RngStream& stream) {
    StepResult r;
    r.x.assign(x.begin(), x.end());
    Vec prop(x.size());
    r.accepted = mh_step_inplace(U, r.x, cfg.step_h, stream, prop);
    return r;
}

// X <- X - h grad U(X) + sqrt(2h) xi. grad is caller scratch of size d.
// step_index only labels the error message.
inline void ula_step_inplace(const EnergyModel& U, std::span<double> x, double h,
                             RngStream& stream, std::span<double> grad,
                             long step_index = -1) {
    if (!(h > 0)) fail_config("ula_step: h must be positive");
    U.grad_x(x, grad);
    double amp = std::sqrt(2.0 * h);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] += -h * grad[i] + amp * stream.normal();
    if (!all_finite(x)) {
        std::string msg = "ULA diverged";
        if (step_index >= 0) msg += " at step " + std::to_string(step_index);
        fail_numeric(msg);
    }
}

inline Vec ula_step(const EnergyModel& U, std::span<const double> x, double h,
                    RngStream& stream) {
    Vec out(x.begin(), x.end());
    Vec grad(x.size());
    ula_step_inplace(U, out, h, stream, grad);
    return out;
}

// Log density of the MALA (= one-step ULA) proposal:
// log g(y|x) = -|y - x + h grad U(x)|^2 / (4h) - (d/2) log(4 pi h)
inline double mala_log_q(std::span<const double> from_grad, std::span<const double> from,
                         std::span<const double> to, double h) {
    double q = 0.0;
    for (std::size_t i = 0; i < from.size(); ++i) {
        double r = to[i] - from[i] + h * from_grad[i];
        q += r * r;
    }
    return -q / (4.0 * h) -
           0.5 * double(from.size()) * std::log(4.0 * std::numbers::pi * h);
}

struct MalaScratch {
    Vec prop, grad_cur, grad_prop;
    void resize(std::size_t d) {
        prop.resize(d);
        grad_cur.resize(d);
        grad_prop.resize(d);
    }
};

inline bool mala_step_inplace(const EnergyModel& U, std::span<double> x, double h,
                              RngStream& stream, MalaScratch& s, long step_index = -1) {
    if (!(h > 0)) fail_config("mala_step: h must be positive");
    double u_cur = U.energy_grad_x(x, s.grad_cur);
    double amp = std::sqrt(2.0 * h);
    for (std::size_t i = 0; i < x.size(); ++i)
        s.prop[i] = x[i] - h * s.grad_cur[i] + amp * stream.normal();
    if (!all_finite(s.prop)) {
        std::string msg = "MALA proposal diverged";
        if (step_index >= 0) msg += " at step " + std::to_string(step_index);
        fail_numeric(msg);
    }
    double u_prop = U.energy_grad_x(s.prop, s.grad_prop);
    if (!std::isfinite(u_prop) || !std::isfinite(u_cur))
        fail_numeric("mala_step: non-finite proposal energy");
    double log_fwd = mala_log_q(s.grad_cur, x, s.prop, h);
    double log_bwd = mala_log_q(s.grad_prop, s.prop, x, h);
    double a = -u_prop + u_cur + log_bwd - log_fwd;
    double u = stream.uniform();
    if (u < std::min(1.0, std::exp(a))) {
        std::copy(s.prop.begin(), s.prop.end(), x.begin());
        return true;
    }
    return false;
}

inline StepResult mala_step(const EnergyModel& U, std::span<const double> x, double h,
                            RngStream& stream) {
    StepResult r;
    r.x.assign(x.begin(), x.end());
    MalaScratch s;
    s.resize(x.size());
    r.accepted = mala_step_inplace(U, r.x, h, stream, s);
    return r;
}

struct ChainStats {
    double acceptance_rate = 1.0;  // 1.0 when no proposals were made (ULA, n=0)
    Vec mean;
    Vec covariance_diag;
    double autocorrelation_time = 1.0;
};

// Integrated autocorrelation time with Geyer initial-positive-sequence
// truncation on a scalar trace.
inline double integrated_autocorr_time(std::span<const double> trace) {
    std::size_t n = trace.size();
    if (n < 4) return 1.0;
    double mean = pairwise_mean(trace);
    Vec c(trace.size());
    for (std::size_t i = 0; i < n; ++i) c[i] = trace[i] - mean;
    double var = 0.0;
    for (double v : c) var += v * v;
    var /= double(n);
    if (!(var > 0)) return 1.0;
    auto gamma = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) s += c[i] * c[i + lag];
        return s / double(n);
    };
    double tau = 1.0;
    for (std::size_t m = 1; 2 * m < n; ++m) {
        double pair = gamma(2 * m - 1) + gamma(2 * m);
        if (pair <= 0.0) break;
        tau += 2.0 * pair / var;
    }
    return std::max(1.0, tau);
}

// Applies the kernel cfg.n_steps times to every walker (in place, per-walker
// streams). Moments are pooled over walkers and post-burn-in steps; the
// autocorrelation time comes from walker 0's first coordinate. log_weights
// are untouched.
inline ChainStats run_chain(const EnergyModel& U, Kernel kernel,
                            const SamplerConfig& cfg, WalkerEnsemble& e,
                            int n_threads = 1) {
    cfg.validate();
    if (e.dim != U.dim()) fail_config("run_chain: ensemble/model dimension mismatch");
    std::size_t n = e.size();
    int d = e.dim;
    long burn = cfg.effective_burn_in();

    std::vector<double> sum1(n * d, 0.0), sum2(n * d, 0.0);
    std::vector<double> acc_count(n, 0.0), sample_count(n, 0.0);
    Vec trace0(cfg.n_steps > 0 ? std::size_t(cfg.n_steps - burn) : 0, 0.0);

    parallel_for(n, n_threads, [&](std::size_t lo, std::size_t hi) {
        Vec grad(d);
        Vec prop(d);
        MalaScratch ms;
        ms.resize(d);
        for (std::size_t i = lo; i < hi; ++i) {
            auto x = e.walker(i);
            RngStream& st = e.streams[i];
            double acc = 0.0;
            for (long k = 0; k < cfg.n_steps; ++k) {
                bool a = true;
                switch (kernel) {
                    case Kernel::mh:
                        a = mh_step_inplace(U, x, cfg.step_h, st, prop);
                        break;
                    case Kernel::ula:
                        ula_step_inplace(U, x, cfg.step_h, st, grad, k);
                        break;
                    case Kernel::mala:
                        a = mala_step_inplace(U, x, cfg.step_h, st, ms, k);
                        break;
                }
                if (a) acc += 1.0;
                if (k >= burn) {
                    for (int j = 0; j < d; ++j) {
                        sum1[i * d + j] += x[j];
                        sum2[i * d + j] += x[j] * x[j];
                    }
                    sample_count[i] += 1.0;
                    if (i == 0) trace0[std::size_t(k - burn)] = x[0];
                }
            }
            acc_count[i] = acc;
        }
    });

    ChainStats stats;
    if (cfg.n_steps == 0) {
        // stats over the initial positions
        for (std::size_t i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                sum1[i * d + j] = e.walker(i)[j];
                sum2[i * d + j] = e.walker(i)[j] * e.walker(i)[j];
            }
        std::fill(sample_count.begin(), sample_count.end(), 1.0);
    }

    double total = pairwise_sum(sample_count);
    stats.mean.resize(d);
    stats.covariance_diag.resize(d);
    Vec col(n);
    for (int j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = sum1[i * d + j];
        double m1 = pairwise_sum(col) / total;
        for (std::size_t i = 0; i < n; ++i) col[i] = sum2[i * d + j];
        double m2 = pairwise_sum(col) / total;
        stats.mean[j] = m1;
        stats.covariance_diag[j] = std::max(0.0, m2 - m1 * m1);
    }
    double attempts = double(cfg.n_steps) * double(n);
    stats.acceptance_rate =
        (kernel == Kernel::ula || attempts == 0.0) ? 1.0
                                                   : pairwise_sum(acc_count) / attempts;
    stats.autocorrelation_time = integrated_autocorr_time(trace0);
    return stats;
}

}  // namespace ebm
