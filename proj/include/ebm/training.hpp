#pragma once

// The three EBM trainers. All gradients follow the ascent convention of the
// parameter update theta_{k+1} = theta_k + gamma D_k, where D_k estimates
// -dH/dtheta = E_theta[dU/dtheta] - E_*[dU/dtheta].
//
//   cd_gradient   walkers re-drawn from data every call, P ULA steps
//   PcdTrainer    persistent ensemble, gradient before the ULA sweep
//   JarzTrainer   persistent weighted ensemble; the alpha-increments keep
//                 log E[e^A] = log(Z_theta / Z_theta0) along the protocol, so
//                 the gradient stays unbiased and log Z and the cross-entropy
//                 come for free.

#include "ebm/core.hpp"
#include "ebm/densities.hpp"
#include "ebm/divergences.hpp"
#include "ebm/samplers.hpp"

namespace ebm {

enum class OptKind { sgd, adam };

struct AdamState {
    Vec m, v;
    long t = 0;
};

struct TrainConfig {
    double learning_rate = 0.01;  // 0 freezes theta (used by self-consistency runs)
    std::size_t n_walkers = 1000;
    double ula_h = 0.05;
    int cd_inner_steps = 1;  // P
    OptKind optimizer = OptKind::sgd;
    double resample_threshold = 0.5;  // ESS/N below this triggers resampling
    long total_steps = 1000;
    std::size_t batch_size = 0;  // 0: full batch
    // alpha_{k+1} evaluated at theta_{k+1} (the subscripts read literally);
    // false evaluates both increments at theta_k.
    bool alpha_updated_theta = true;

    void validate() const {
        if (learning_rate < 0) fail_config("TrainConfig: learning_rate must be >= 0");
        if (n_walkers < 1) fail_config("TrainConfig: n_walkers must be >= 1");
        if (ula_h < 0) fail_config("TrainConfig: ula_h must be >= 0");
        if (cd_inner_steps < 1) fail_config("TrainConfig: cd_inner_steps must be >= 1");
        if (!(resample_threshold > 0) || resample_threshold > 1)
            fail_config("TrainConfig: resample_threshold must be in (0,1]");
        if (total_steps < 0) fail_config("TrainConfig: total_steps must be >= 0");
    }
};

inline void optimizer_step(Vec& theta, std::span<const double> grad,
                           const TrainConfig& cfg, AdamState& st) {
    if (!all_finite(grad)) fail_numeric("optimizer_step: non-finite gradient");
    if (theta.size() != grad.size()) fail_config("optimizer_step: size mismatch");
    if (cfg.optimizer == OptKind::sgd) {
        for (std::size_t i = 0; i < theta.size(); ++i)
            theta[i] += cfg.learning_rate * grad[i];
        return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (st.m.size() != theta.size()) {
        st.m.assign(theta.size(), 0.0);
        st.v.assign(theta.size(), 0.0);
        st.t = 0;
    }
    st.t += 1;
    double c1 = 1.0 - std::pow(b1, double(st.t));
    double c2 = 1.0 - std::pow(b2, double(st.t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * grad[i];
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * grad[i] * grad[i];
        theta[i] += cfg.learning_rate * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps);
    }
}

// ---------------------------------------------------------------------------
// Shared pieces.

inline SampleBatch resample_rows(const SampleBatch& data, std::size_t n,
                                 RngStream& stream) {
    if (data.rows() == 0) fail_config("resample_rows: empty data");
    SampleBatch out(data.dim, n);
    for (std::size_t i = 0; i < n; ++i) {
        auto src = data.row(stream.uniform_index(data.rows()));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

// sum_i w_i dU/dtheta(x_i) / sum_i w_i over rows of a flat position array.
// Empty weights mean uniform; that path is bit-identical to passing all-ones.
inline Vec weighted_grad_mean(const EnergyModel& U, const double* positions,
                              std::size_t n, int dim, std::span<const double> w,
                              int n_threads) {
    if (n == 0) fail_config("weighted_grad_mean: empty input");
    Vec out(U.param_count(), 0.0);
    block_accumulate(
        n, out.size(), n_threads,
        [&](std::size_t i, std::span<double> acc) {
            double wi = w.empty() ? 1.0 : w[i];
            U.grad_theta_accum({positions + i * std::size_t(dim), std::size_t(dim)},
                               wi, acc);
        },
        out);
    double denom = w.empty() ? double(n) : pairwise_sum(w);
    if (!(denom > 0)) fail_numeric("weighted_grad_mean: weights sum to zero");
    for (double& v : out) v /= denom;
    return out;
}

// D = mean dU/dtheta over model samples - mean dU/dtheta over data.
inline Vec two_sample_gradient(const EnergyModel& U, const SampleBatch& model_samples,
                               const SampleBatch& data, int n_threads) {
    Vec pos = weighted_grad_mean(U, model_samples.values.data(), model_samples.rows(),
                                 model_samples.dim, {}, n_threads);
    Vec neg = weighted_grad_mean(U, data.values.data(), data.rows(), data.dim, {},
                                 n_threads);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] -= neg[i];
    return pos;
}

// ---------------------------------------------------------------------------
// Contrastive divergence.

// Evolve every row of x0 by P ULA steps under U. h == 0 is the documented
// degenerate case: positions are returned untouched.
inline SampleBatch cd_negative_phase(const EnergyModel& U, const SampleBatch& x0,
                                     int P, double h, std::uint64_t seed,
                                     int n_threads) {
    if (P < 1) fail_config("cd_negative_phase: P must be >= 1");
    SampleBatch out = x0;
    if (h == 0.0) return out;
    std::size_t n = out.rows();
    parallel_for(n, n_threads, [&](std::size_t lo, std::size_t hi) {
        Vec grad(out.dim);
        for (std::size_t i = lo; i < hi; ++i) {
            RngStream st(seed, i);
            auto x = out.row(i);
            for (int p = 0; p < P; ++p) ula_step_inplace(U, x, h, st, grad, p);
        }
    });
    return out;
}

inline Vec cd_gradient(const EnergyModel& U, const SampleBatch& data,
                       const TrainConfig& cfg, RngStream& trainer_stream,
                       int n_threads = 1) {
    cfg.validate();
    SampleBatch x0 = resample_rows(data, cfg.n_walkers, trainer_stream);
    SampleBatch xp = cd_negative_phase(U, x0, cfg.cd_inner_steps, cfg.ula_h,
                                       trainer_stream.next_u64(), n_threads);
    return two_sample_gradient(U, xp, data, n_threads);
}

class CdTrainer {
public:
    CdTrainer(EnergyModel& model, SampleBatch data, TrainConfig cfg,
              std::uint64_t seed, int n_threads = 1)
        : model_(model), data_(std::move(data)), cfg_(cfg),
          stream_(seed, kTrainerStreamId), threads_(n_threads) {
        cfg_.validate();
        theta_ = model_.params();
    }

    void step() {
        const SampleBatch& batch =
            cfg_.batch_size > 0 ? (scratch_ = resample_rows(data_, cfg_.batch_size, stream_))
                                : data_;
        Vec d = cd_gradient(model_, batch, cfg_, stream_, threads_);
        optimizer_step(theta_, d, cfg_, adam_);
        model_.set_params(theta_);
        ++k_;
    }

    long k() const { return k_; }
    const Vec& theta() const { return theta_; }

private:
    EnergyModel& model_;
    SampleBatch data_, scratch_;
    TrainConfig cfg_;
    RngStream stream_;
    int threads_;
    Vec theta_;
    AdamState adam_;
    long k_ = 0;
};

// ---------------------------------------------------------------------------
// Persistent contrastive divergence.

class PcdTrainer {
public:
    PcdTrainer(EnergyModel& model, SampleBatch data, TrainConfig cfg,
               std::uint64_t seed, int n_threads = 1)
        : PcdTrainer(model, std::move(data), cfg, seed, n_threads, {}) {}

    // init_positions overrides the standard init (walkers resampled from
    // data); used to start the ensemble in a chosen region.
    PcdTrainer(EnergyModel& model, SampleBatch data, TrainConfig cfg,
               std::uint64_t seed, int n_threads, const SampleBatch& init_positions)
        : model_(model), data_(std::move(data)), cfg_(cfg),
          stream_(seed, kTrainerStreamId), threads_(n_threads) {
        cfg_.validate();
        if (!(cfg_.ula_h > 0)) fail_config("PcdTrainer: ula_h must be positive");
        theta_ = model_.params();
        ens_ = WalkerEnsemble::zeros(cfg_.n_walkers, model_.dim(), seed);
        const SampleBatch* src = &init_positions;
        SampleBatch from_data;
        if (init_positions.rows() == 0) {
            from_data = resample_rows(data_, cfg_.n_walkers, stream_);
            src = &from_data;
        } else if (init_positions.rows() != cfg_.n_walkers ||
                   init_positions.dim != model_.dim()) {
            fail_config("PcdTrainer: init_positions shape mismatch");
        }
        std::copy(src->values.begin(), src->values.end(), ens_.positions.begin());
    }

    // Gradient from the current ensemble, one ULA sweep under theta_k, then
    // the parameter update.
    void step() {
        const SampleBatch& batch =
            cfg_.batch_size > 0 ? (scratch_ = resample_rows(data_, cfg_.batch_size, stream_))
                                : data_;
        Vec pos = weighted_grad_mean(model_, ens_.positions.data(), ens_.size(),
                                     ens_.dim, {}, threads_);
        Vec neg = weighted_grad_mean(model_, batch.values.data(), batch.rows(),
                                     batch.dim, {}, threads_);
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] -= neg[i];

        parallel_for(ens_.size(), threads_, [&](std::size_t lo, std::size_t hi) {
            Vec grad(ens_.dim);
            for (std::size_t i = lo; i < hi; ++i)
                ula_step_inplace(model_, ens_.walker(i), cfg_.ula_h, ens_.streams[i],
                                 grad, k_);
        });

        optimizer_step(theta_, pos, cfg_, adam_);
        model_.set_params(theta_);
        ++k_;
    }

    long k() const { return k_; }
    const Vec& theta() const { return theta_; }
    const WalkerEnsemble& ensemble() const { return ens_; }

private:
    EnergyModel& model_;
    SampleBatch data_, scratch_;
    TrainConfig cfg_;
    RngStream stream_;
    int threads_;
    Vec theta_;
    AdamState adam_;
    WalkerEnsemble ens_;
    long k_ = 0;
};

// ---------------------------------------------------------------------------
// Jarzynski-reweighted trainer.

// alpha(x, y) = U(x) + (1/2)(y - x) . grad U(x) + (h/4) |grad U(x)|^2
inline double jarz_alpha(const EnergyModel& U, std::span<const double> x,
                         std::span<const double> y, double h) {
    if (!(h > 0)) fail_config("jarz_alpha: h must be positive");
    Vec g(x.size());
    double u = U.energy_grad_x(x, g);
    double dotp = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) dotp += (y[i] - x[i]) * g[i];
    return u + 0.5 * dotp + 0.25 * h * norm2_sq(g);
}

class JarzTrainer {
public:
    // The ensemble must start as exact draws from rho_theta0; log_z0 is that
    // model's log partition (analytic for the families with direct samplers,
    // otherwise estimated by log_z_importance).
    JarzTrainer(EnergyModel& model, const AnalyticDensity& rho0, double log_z0,
                SampleBatch data, TrainConfig cfg, std::uint64_t seed,
                int n_threads = 1)
        : model_(model), data_(std::move(data)), cfg_(cfg), log_z0_(log_z0),
          stream_(seed, kTrainerStreamId), threads_(n_threads) {
        cfg_.validate();
        if (!(cfg_.ula_h > 0)) fail_config("JarzTrainer: ula_h must be positive");
        if (rho0.dim() != model_.dim()) fail_config("JarzTrainer: dimension mismatch");
        theta_ = model_.params();
        ens_ = ensemble_from_density(rho0, cfg_.n_walkers, seed);
        log_z_running_ = log_z0_;
    }

    void step() {
        std::size_t n = ens_.size();
        const SampleBatch& batch =
            cfg_.batch_size > 0 ? (scratch_ = resample_rows(data_, cfg_.batch_size, stream_))
                                : data_;

        // cross-entropy at (theta_k, A_k): log E[e^A] + log Z_0 + E_*[U]
        DivergenceEstimate ce = cross_entropy(model_, current_log_z_offset(), batch);
        ce_trace_.push_back(ce.value);

        // self-normalized gradient at theta_k
        Vec w(n);
        double mx = *std::max_element(ens_.log_weights.begin(), ens_.log_weights.end());
        for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(ens_.log_weights[i] - mx);
        Vec d = weighted_grad_mean(model_, ens_.positions.data(), n, ens_.dim, w,
                                   threads_);
        Vec neg = weighted_grad_mean(model_, batch.values.data(), batch.rows(),
                                     batch.dim, {}, threads_);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= neg[i];

        // ULA sweep under theta_k, stashing alpha_k(X_k, X_{k+1}) and the old
        // positions for the second increment.
        old_pos_.assign(ens_.positions.begin(), ens_.positions.end());
        alpha_old_.resize(n);
        double h = cfg_.ula_h;
        parallel_for(n, threads_, [&](std::size_t lo, std::size_t hi) {
            Vec g(ens_.dim);
            double amp = std::sqrt(2.0 * h);
            for (std::size_t i = lo; i < hi; ++i) {
                auto x = ens_.walker(i);
                std::span<const double> xo{old_pos_.data() + i * ens_.dim,
                                           std::size_t(ens_.dim)};
                double u = model_.energy_grad_x(xo, g);
                double dotp = 0.0;
                for (int j = 0; j < ens_.dim; ++j) {
                    double xn = xo[j] - h * g[j] + amp * ens_.streams[i].normal();
                    dotp += (xn - xo[j]) * g[j];
                    x[j] = xn;
                }
                if (!all_finite(x)) fail_numeric("ULA diverged at step " + std::to_string(k_));
                alpha_old_[i] = u + 0.5 * dotp + 0.25 * h * norm2_sq(g);
            }
        });

        // parameter update: theta_k -> theta_{k+1}
        Vec theta_k = theta_;
        optimizer_step(theta_, d, cfg_, adam_);
        model_.set_params(theta_);

        // weight update A += alpha_k(X_k, X_{k+1}) - alpha_{k+1}(X_{k+1}, X_k),
        // the second increment under theta_{k+1} (or theta_k if configured).
        if (!cfg_.alpha_updated_theta) {
            model_.set_params(theta_k);
        }
        parallel_for(n, threads_, [&](std::size_t lo, std::size_t hi) {
            Vec g(ens_.dim);
            for (std::size_t i = lo; i < hi; ++i) {
                auto xn = ens_.walker(i);
                std::span<const double> xo{old_pos_.data() + i * ens_.dim,
                                           std::size_t(ens_.dim)};
                double u = model_.energy_grad_x(xn, g);
                double dotp = 0.0;
                for (int j = 0; j < ens_.dim; ++j) dotp += (xo[j] - xn[j]) * g[j];
                double alpha_new = u + 0.5 * dotp + 0.25 * h * norm2_sq(g);
                ens_.log_weights[i] += alpha_old_[i] - alpha_new;
            }
        });
        if (!cfg_.alpha_updated_theta) {
            model_.set_params(theta_);
        }

        log_z_running_ = log_z0_ + log_mean_exp(ens_.log_weights);

        double ess = effective_sample_size(ens_.log_weights);
        if (ess < 1.5) fail_numeric("weight degeneracy: ESS < 1.5");
        ess_fraction_ = ess / double(n);
        if (ess_fraction_ < cfg_.resample_threshold) resample();

        ++k_;
    }

    long k() const { return k_; }
    const Vec& theta() const { return theta_; }
    const Vec& ce_trace() const { return ce_trace_; }
    double log_z() const { return log_z_running_; }
    double ess_fraction() const { return ess_fraction_; }
    long resample_count() const { return resample_count_; }
    const WalkerEnsemble& ensemble() const { return ens_; }
    WalkerEnsemble& ensemble() { return ens_; }

private:
    double current_log_z_offset() const {
        return log_z0_ + log_mean_exp(ens_.log_weights);
    }

    // Systematic resampling; A is reset to its log-mean so that
    // log_mean_exp(A) is unchanged and the log Z recursion survives.
    void resample() {
        std::size_t n = ens_.size();
        Vec w(n);
        double mx = *std::max_element(ens_.log_weights.begin(), ens_.log_weights.end());
        for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(ens_.log_weights[i] - mx);
        double tot = pairwise_sum(w);
        double reset = log_mean_exp(ens_.log_weights);
        double u = stream_.uniform() / double(n);
        old_pos_.assign(ens_.positions.begin(), ens_.positions.end());
        std::size_t j = 0;
        double cum = w[0] / tot;
        for (std::size_t i = 0; i < n; ++i) {
            double target = u + double(i) / double(n);
            while (cum < target && j + 1 < n) cum += w[++j] / tot;
            std::copy(old_pos_.begin() + j * ens_.dim,
                      old_pos_.begin() + (j + 1) * ens_.dim,
                      ens_.positions.begin() + i * ens_.dim);
        }
        std::fill(ens_.log_weights.begin(), ens_.log_weights.end(), reset);
        ++resample_count_;
    }

    EnergyModel& model_;
    SampleBatch data_, scratch_;
    TrainConfig cfg_;
    double log_z0_;
    RngStream stream_;
    int threads_;
    Vec theta_;
    AdamState adam_;
    WalkerEnsemble ens_;
    Vec ce_trace_;
    Vec old_pos_, alpha_old_;
    double log_z_running_ = 0.0;
    double ess_fraction_ = 1.0;
    long resample_count_ = 0;
    long k_ = 0;
};

// Weighted fraction of walkers with first coordinate below the threshold;
// the mode-mass diagnostic for the bimodal targets.
inline double weighted_mass_below(const WalkerEnsemble& e, double threshold) {
    std::size_t n = e.size();
    Vec w(n), hit(n);
    double mx = *std::max_element(e.log_weights.begin(), e.log_weights.end());
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = std::exp(e.log_weights[i] - mx);
        hit[i] = e.walker(i)[0] < threshold ? w[i] : 0.0;
    }
    return pairwise_sum(hit) / pairwise_sum(w);
}

}  // namespace ebm
