#pragma once

// Generative dynamics. Two families:
//   stochastic interpolants  X_t = (1-t)x0 + t x1 + gamma(t) z with
//                            gamma = a sqrt(t(1-t)), velocity loss L_b and
//                            score loss L_s, ODE (RK4) and SDE generation
//   score-based diffusion    OU forward noising, denoising score matching
//                            with lambda(t) = var(t), reverse-SDE sampling

#include "ebm/core.hpp"
#include "ebm/densities.hpp"
#include "ebm/mlp.hpp"
#include "ebm/training.hpp"

namespace ebm {

struct InterpolantSpec {
    double a = 1.0;        // gamma amplitude; 0 switches the latent off
    double epsilon = 0.0;  // SDE noise level
    double t_min = 0.01;   // loss time-sampling window [t_min, 1-t_min]

    void validate() const {
        if (a < 0) fail_config("InterpolantSpec: a must be >= 0");
        if (epsilon < 0) fail_config("InterpolantSpec: epsilon must be >= 0");
        if (!(t_min > 0) || t_min >= 0.5)
            fail_config("InterpolantSpec: t_min must be in (0, 0.5)");
    }
};

inline double interp_gamma(const InterpolantSpec& s, double t) {
    return s.a * std::sqrt(t * (1.0 - t));
}
inline double interp_gamma_dot(const InterpolantSpec& s, double t) {
    return s.a * (1.0 - 2.0 * t) / (2.0 * std::sqrt(t * (1.0 - t)));
}

struct InterpolantDraw {
    Vec x_t, z, dI_dt;
    double gamma_dot = 0.0;
};

// X_t = (1-t)x0 + t x1 + gamma(t) z with fresh z. z is drawn at every t, the
// endpoints included, so the stream advance does not depend on t; gamma(0) =
// gamma(1) = 0 makes the endpoint values exact. gamma_dot is reported as 0 at
// the endpoints (its true limit is infinite; loss sampling never lands there).
inline InterpolantDraw interpolant_sample(const InterpolantSpec& spec,
                                          std::span<const double> x0,
                                          std::span<const double> x1, double t,
                                          RngStream& stream) {
    if (x0.size() != x1.size()) fail_config("interpolant_sample: size mismatch");
    if (!(t >= 0.0) || !(t <= 1.0))
        fail_config("interpolant_sample: t must lie in [0,1]");
    std::size_t d = x0.size();
    InterpolantDraw out;
    out.x_t.resize(d);
    out.z.resize(d);
    out.dI_dt.resize(d);
    stream.normal_fill(out.z);
    double g = interp_gamma(spec, t);
    for (std::size_t i = 0; i < d; ++i) {
        out.x_t[i] = (1.0 - t) * x0[i] + t * x1[i] + g * out.z[i];
        out.dI_dt[i] = x1[i] - x0[i];
    }
    out.gamma_dot = (t > 0.0 && t < 1.0) ? interp_gamma_dot(spec, t) : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Time-dependent parametric fields.

class TimeField {
public:
    virtual ~TimeField() = default;
    virtual int dim() const = 0;
    virtual int param_count() const = 0;
    virtual void eval(std::span<const double> x, double t,
                      std::span<double> out) const = 0;
    // acc += w * (dy . d(field)/dtheta)
    virtual void grad_theta_accum(std::span<const double> x, double t,
                                  std::span<const double> dy, double w,
                                  std::span<double> acc) const = 0;
    virtual Vec params() const = 0;
    virtual void set_params(std::span<const double> theta) = 0;

    Vec eval(std::span<const double> x, double t) const {
        Vec out(dim());
        eval(x, t, out);
        return out;
    }
};

enum class FieldRole { velocity, score };

// MLP over the concatenated input (x, t).
class MlpTimeField final : public TimeField {
public:
    MlpTimeField(Mlp net, FieldRole role) : net_(std::move(net)), role_(role) {
        if (net_.in() != net_.out() + 1)
            fail_config("MlpTimeField: network must map (x, t) -> field(x)");
    }
    static MlpTimeField random_init(int d, FieldRole role, RngStream& stream,
                                    int h1 = 16, int h2 = 16, double scale = 0.5) {
        return MlpTimeField(Mlp::random_init({d + 1, h1, h2, d}, stream, scale), role);
    }

    int dim() const override { return net_.out(); }
    int param_count() const override { return net_.param_count(); }
    FieldRole role() const { return role_; }

    void eval(std::span<const double> x, double t, std::span<double> out) const override {
        Vec in(net_.in());
        pack(x, t, in);
        net_.forward(in, out);
    }
    void grad_theta_accum(std::span<const double> x, double t,
                          std::span<const double> dy, double w,
                          std::span<double> acc) const override {
        Vec in(net_.in());
        pack(x, t, in);
        Mlp::Cache c;
        net_.forward(in, c);
        net_.backward(c, dy, w, acc, {});
    }

    // forward pass returning the cache, for callers that need value + grad
    void eval_cache(std::span<const double> x, double t, Mlp::Cache& c) const {
        Vec in(net_.in());
        pack(x, t, in);
        net_.forward(in, c);
    }
    void backward(const Mlp::Cache& c, std::span<const double> dy, double w,
                  std::span<double> acc) const {
        net_.backward(c, dy, w, acc, {});
    }

    Vec params() const override { return net_.params(); }
    void set_params(std::span<const double> th) override { net_.set_params(th); }

private:
    void pack(std::span<const double> x, double t, Vec& in) const {
        std::copy(x.begin(), x.end(), in.begin());
        in.back() = t;
    }
    Mlp net_;
    FieldRole role_;
};

// Closed-form field (oracles, zero fields); carries no parameters.
class FuncField final : public TimeField {
public:
    using Fn = std::function<void(std::span<const double>, double, std::span<double>)>;
    FuncField(int d, Fn fn) : d_(d), fn_(std::move(fn)) {}

    int dim() const override { return d_; }
    int param_count() const override { return 0; }
    void eval(std::span<const double> x, double t, std::span<double> out) const override {
        fn_(x, t, out);
    }
    void grad_theta_accum(std::span<const double>, double, std::span<const double>,
                          double, std::span<double>) const override {}
    Vec params() const override { return {}; }
    void set_params(std::span<const double>) override {
        fail_config("FuncField has no parameters");
    }

private:
    int d_;
    Fn fn_;
};

// ---------------------------------------------------------------------------
// Gaussian oracles for the linear interpolant between N(0,1)^d and N(m,1)^d
// under the product coupling: marginal mean t*m, variance (1-t)^2+t^2+gamma^2,
// and the exact velocity field
//   b*(x,t) = m + [(2t-1) + gamma gamma_dot] / [(1-t)^2 + t^2 + gamma^2] (x - t m).
inline double gauss_interp_var(const InterpolantSpec& s, double t) {
    double g = interp_gamma(s, t);
    return (1.0 - t) * (1.0 - t) + t * t + g * g;
}

inline FuncField gauss_interp_b_star(int d, double m, InterpolantSpec spec) {
    return FuncField(d, [d, m, spec](std::span<const double> x, double t,
                                     std::span<double> out) {
        double gg = spec.a * spec.a * (1.0 - 2.0 * t) / 2.0;  // gamma * gamma_dot
        double slope = ((2.0 * t - 1.0) + gg) / gauss_interp_var(spec, t);
        for (int i = 0; i < d; ++i) out[i] = m + slope * (x[i] - t * m);
    });
}

// ---------------------------------------------------------------------------
// Losses. Each call consumes one t and one z per pair from the stream, in row
// order, so fixed-seed invocations are exactly reproducible (common random
// numbers for finite-difference checks).

inline LossWithGrad loss_b(const TimeField& b, const InterpolantSpec& spec,
                           const SampleBatch& x0, const SampleBatch& x1,
                           RngStream& stream) {
    spec.validate();
    std::size_t n = x0.rows();
    if (n < 1 || n != x1.rows()) fail_config("loss_b: pair batches must match");
    if (x0.dim != b.dim() || x1.dim != b.dim()) fail_config("loss_b: dimension mismatch");
    int d = b.dim();
    LossWithGrad out;
    out.grad_theta.assign(b.param_count(), 0.0);
    Vec bt(d), w(d), dy(d), terms(n);
    double wn = 1.0 / double(n);
    for (std::size_t i = 0; i < n; ++i) {
        double t = spec.t_min + (1.0 - 2.0 * spec.t_min) * stream.uniform();
        InterpolantDraw dr = interpolant_sample(spec, x0.row(i), x1.row(i), t, stream);
        b.eval(dr.x_t, t, bt);
        for (int j = 0; j < d; ++j) w[j] = dr.dI_dt[j] + dr.gamma_dot * dr.z[j];
        terms[i] = 0.5 * norm2_sq(bt) - dot(w, bt);
        for (int j = 0; j < d; ++j) dy[j] = bt[j] - w[j];
        b.grad_theta_accum(dr.x_t, t, dy, wn, out.grad_theta);
    }
    out.loss = pairwise_mean(terms);
    return out;
}

inline LossWithGrad loss_s(const TimeField& s, const InterpolantSpec& spec,
                           const SampleBatch& x0, const SampleBatch& x1,
                           RngStream& stream) {
    spec.validate();
    std::size_t n = x0.rows();
    if (n < 1 || n != x1.rows()) fail_config("loss_s: pair batches must match");
    if (x0.dim != s.dim() || x1.dim != s.dim()) fail_config("loss_s: dimension mismatch");
    int d = s.dim();
    LossWithGrad out;
    out.grad_theta.assign(s.param_count(), 0.0);
    Vec sv(d), dy(d), terms(n);
    double wn = 1.0 / double(n);
    for (std::size_t i = 0; i < n; ++i) {
        double t = spec.t_min + (1.0 - 2.0 * spec.t_min) * stream.uniform();
        InterpolantDraw dr = interpolant_sample(spec, x0.row(i), x1.row(i), t, stream);
        double g = interp_gamma(spec, t);
        if (g < 1e-8) fail_numeric("loss_s: gamma(t) below 1e-8 at sampled t");
        s.eval(dr.x_t, t, sv);
        double zs = dot(dr.z, sv);
        terms[i] = 0.5 * norm2_sq(sv) + zs / g;
        for (int j = 0; j < d; ++j) dy[j] = sv[j] + dr.z[j] / g;
        s.grad_theta_accum(dr.x_t, t, dy, wn, out.grad_theta);
    }
    out.loss = pairwise_mean(terms);
    return out;
}

// ---------------------------------------------------------------------------
// Generation.

// RK4 integration of dX/dt = b(X, t) from t=0 to 1, with optional snapshots.
// Snapshot times must land on grid nodes.
inline std::vector<SampleBatch> generate_ode_path(const TimeField& b,
                                                  const SampleBatch& x0,
                                                  int n_time_steps,
                                                  std::span<const double> snap_times,
                                                  int n_threads = 1) {
    if (n_time_steps < 1) fail_config("generate_ode: n_time_steps must be >= 1");
    if (x0.dim != b.dim()) fail_config("generate_ode: dimension mismatch");
    std::vector<long> snap_idx(snap_times.size());
    for (std::size_t k = 0; k < snap_times.size(); ++k) {
        double raw = snap_times[k] * n_time_steps;
        snap_idx[k] = std::lround(raw);
        if (std::abs(raw - double(snap_idx[k])) > 1e-9)
            fail_config("generate_ode: snapshot time off the integration grid");
    }
    SampleBatch cur = x0;
    std::vector<SampleBatch> snaps(snap_times.size(), SampleBatch(x0.dim, 0));
    double h = 1.0 / double(n_time_steps);
    int d = x0.dim;
    for (std::size_t k = 0; k < snap_idx.size(); ++k)
        if (snap_idx[k] == 0) snaps[k] = cur;
    for (long step = 0; step < n_time_steps; ++step) {
        double t = double(step) * h;
        parallel_for(cur.rows(), n_threads, [&](std::size_t lo, std::size_t hi) {
            Vec k1(d), k2(d), k3(d), k4(d), tmp(d);
            for (std::size_t i = lo; i < hi; ++i) {
                auto x = cur.row(i);
                b.eval(x, t, k1);
                for (int j = 0; j < d; ++j) tmp[j] = x[j] + 0.5 * h * k1[j];
                b.eval(tmp, t + 0.5 * h, k2);
                for (int j = 0; j < d; ++j) tmp[j] = x[j] + 0.5 * h * k2[j];
                b.eval(tmp, t + 0.5 * h, k3);
                for (int j = 0; j < d; ++j) tmp[j] = x[j] + h * k3[j];
                b.eval(tmp, t + h, k4);
                for (int j = 0; j < d; ++j)
                    x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                if (!all_finite(x)) fail_numeric("generate_ode: non-finite state");
            }
        });
        for (std::size_t k = 0; k < snap_idx.size(); ++k)
            if (snap_idx[k] == step + 1) snaps[k] = cur;
    }
    return snaps;
}

inline SampleBatch generate_ode(const TimeField& b, const SampleBatch& x0,
                                int n_time_steps = 100, int n_threads = 1) {
    double one = 1.0;
    auto snaps = generate_ode_path(b, x0, n_time_steps, {&one, 1}, n_threads);
    return snaps[0];
}

// Euler-Maruyama on dX = (b + eps * s) dt + sqrt(2 eps) dW over [0,1].
// eps == 0 degenerates to plain Euler on b (no draws consumed).
inline SampleBatch generate_sde(const TimeField& b, const TimeField& s, double epsilon,
                                const SampleBatch& x0, int n_time_steps,
                                std::uint64_t seed, int n_threads = 1) {
    if (n_time_steps < 1) fail_config("generate_sde: n_time_steps must be >= 1");
    if (epsilon < 0) fail_config("generate_sde: epsilon must be >= 0");
    if (x0.dim != b.dim()) fail_config("generate_sde: dimension mismatch");
    SampleBatch cur = x0;
    int d = x0.dim;
    double h = 1.0 / double(n_time_steps);
    double amp = std::sqrt(2.0 * epsilon * h);
    parallel_for(cur.rows(), n_threads, [&](std::size_t lo, std::size_t hi) {
        Vec bv(d), sv(d);
        for (std::size_t i = lo; i < hi; ++i) {
            RngStream st(seed, i);
            auto x = cur.row(i);
            for (long step = 0; step < n_time_steps; ++step) {
                double t = double(step) * h;
                b.eval(x, t, bv);
                if (epsilon > 0) {
                    s.eval(x, t, sv);
                    for (int j = 0; j < d; ++j)
                        x[j] += h * (bv[j] + epsilon * sv[j]) + amp * st.normal();
                } else {
                    for (int j = 0; j < d; ++j) x[j] += h * bv[j];
                }
                if (!all_finite(x)) fail_numeric("generate_sde: non-finite state");
            }
        }
    });
    return cur;
}

// ---------------------------------------------------------------------------
// Score-based diffusion with the unit OU forward process
//   dX = -X dt + sqrt(2) dW,  X_t | x0 ~ N(e^{-t} x0, 1 - e^{-2t}).

inline double ou_var(double t) { return -std::expm1(-2.0 * t); }

struct DsmSchedule {
    Vec t_grid;  // times sampled uniformly during training

    static DsmSchedule uniform(double t_lo, double t_hi, int n) {
        if (!(t_lo > 0) || !(t_hi > t_lo) || n < 2)
            fail_config("DsmSchedule: need 0 < t_lo < t_hi and n >= 2");
        DsmSchedule s;
        s.t_grid.resize(n);
        for (int i = 0; i < n; ++i)
            s.t_grid[i] = t_lo + (t_hi - t_lo) * double(i) / double(n - 1);
        return s;
    }
};

// Denoising loss with lambda(t) = var(t):
//   lambda |s(x_t,t) + xi/sqrt(v)|^2 = |sqrt(v) s(x_t,t) + xi|^2,
// averaged over a minibatch; xi and t fresh per sample.
inline LossWithGrad dsm_loss(const TimeField& s, const SampleBatch& data,
                             const DsmSchedule& sched, std::size_t n_draws,
                             RngStream& stream) {
    if (data.rows() == 0) fail_config("dsm_loss: empty data");
    if (data.dim != s.dim()) fail_config("dsm_loss: dimension mismatch");
    int d = s.dim();
    LossWithGrad out;
    out.grad_theta.assign(s.param_count(), 0.0);
    Vec xt(d), xi(d), sv(d), dy(d), terms(n_draws);
    double wn = 1.0 / double(n_draws);
    for (std::size_t i = 0; i < n_draws; ++i) {
        auto x0 = data.row(stream.uniform_index(data.rows()));
        double t = sched.t_grid[stream.uniform_index(sched.t_grid.size())];
        double decay = std::exp(-t);
        double sv_t = std::sqrt(ou_var(t));
        stream.normal_fill(xi);
        for (int j = 0; j < d; ++j) xt[j] = decay * x0[j] + sv_t * xi[j];
        s.eval(xt, t, sv);
        double q = 0.0;
        for (int j = 0; j < d; ++j) {
            double r = sv_t * sv[j] + xi[j];
            q += r * r;
            dy[j] = 2.0 * sv_t * r * wn;
        }
        terms[i] = q;
        s.grad_theta_accum(xt, t, dy, 1.0, out.grad_theta);
    }
    out.loss = pairwise_mean(terms);
    return out;
}

// Reverse-time Euler-Maruyama for the unit OU forward process:
//   X <- X + dt (X + 2 s(X,t)) + sqrt(2 dt) xi, t stepping T down to t_min.
inline SampleBatch reverse_sde_generate(const TimeField& s, const SampleBatch& x_T,
                                        double T, double t_min, int n_steps,
                                        std::uint64_t seed, int n_threads = 1) {
    if (!(T > t_min) || !(t_min >= 0)) fail_config("reverse_sde: need T > t_min >= 0");
    if (n_steps < 1) fail_config("reverse_sde: n_steps must be >= 1");
    if (x_T.dim != s.dim()) fail_config("reverse_sde: dimension mismatch");
    SampleBatch cur = x_T;
    int d = cur.dim;
    double dt = (T - t_min) / double(n_steps);
    double amp = std::sqrt(2.0 * dt);
    parallel_for(cur.rows(), n_threads, [&](std::size_t lo, std::size_t hi) {
        Vec sv(d);
        for (std::size_t i = lo; i < hi; ++i) {
            RngStream st(seed, i);
            auto x = cur.row(i);
            for (int k = 0; k < n_steps; ++k) {
                double t = T - double(k) * dt;
                s.eval(x, t, sv);
                for (int j = 0; j < d; ++j)
                    x[j] += dt * (x[j] + 2.0 * sv[j]) + amp * st.normal();
                if (!all_finite(x)) fail_numeric("reverse_sde: non-finite state");
            }
        }
    });
    return cur;
}

// Exact forward OU marginal of a 1D Gaussian mixture at time t: means decay
// by e^{-t}, component variances relax toward 1.
inline GaussianMixture1D ou_t_marginal_of_mixture(const GaussianMixture1D& mix,
                                                  double t) {
    Vec means(mix.components()), stds(mix.components());
    double decay = std::exp(-t);
    for (std::size_t k = 0; k < mix.components(); ++k) {
        means[k] = decay * mix.means()[k];
        double s2 = 1.0 + decay * decay * (mix.stds()[k] * mix.stds()[k] - 1.0);
        stds[k] = std::sqrt(s2);
    }
    return GaussianMixture1D(mix.weights(), means, stds);
}

// ---------------------------------------------------------------------------
// Minibatch Adam drivers for the three field losses (descent: the optimizer
// convention is ascent, so gradients are negated).

struct FieldTrainConfig {
    long steps = 2000;
    double learning_rate = 1e-2;
    double final_lr_fraction = 0.1;  // linear decay endpoint; 1 = constant lr
    std::size_t batch = 256;
    OptKind optimizer = OptKind::adam;
};

namespace detail {
// The decay matters: mode balance of a trained score lives in a small tilt
// whose gradient signal sits below the minibatch noise at constant lr.
template <typename LossFn>
inline void train_field(TimeField& f, const FieldTrainConfig& cfg, LossFn&& loss_of) {
    Vec theta = f.params();
    AdamState adam;
    TrainConfig opt_cfg;
    opt_cfg.optimizer = cfg.optimizer;
    for (long k = 0; k < cfg.steps; ++k) {
        double frac = cfg.steps > 1 ? double(k) / double(cfg.steps - 1) : 0.0;
        opt_cfg.learning_rate =
            cfg.learning_rate * (1.0 - (1.0 - cfg.final_lr_fraction) * frac);
        LossWithGrad lg = loss_of(k);
        for (double& g : lg.grad_theta) g = -g;
        optimizer_step(theta, lg.grad_theta, opt_cfg, adam);
        f.set_params(theta);
    }
}
}  // namespace detail

inline void train_loss_b(TimeField& b, const InterpolantSpec& spec,
                         const SampleBatch& x0, const SampleBatch& x1,
                         const FieldTrainConfig& cfg, std::uint64_t seed) {
    RngStream pick(seed, kTrainerStreamId);
    RngStream noise(seed, kTrainerStreamId + 10);
    detail::train_field(b, cfg, [&](long) {
        SampleBatch b0 = resample_rows(x0, cfg.batch, pick);
        SampleBatch b1 = resample_rows(x1, cfg.batch, pick);
        return loss_b(b, spec, b0, b1, noise);
    });
}

inline void train_loss_s(TimeField& s, const InterpolantSpec& spec,
                         const SampleBatch& x0, const SampleBatch& x1,
                         const FieldTrainConfig& cfg, std::uint64_t seed) {
    RngStream pick(seed, kTrainerStreamId);
    RngStream noise(seed, kTrainerStreamId + 10);
    detail::train_field(s, cfg, [&](long) {
        SampleBatch b0 = resample_rows(x0, cfg.batch, pick);
        SampleBatch b1 = resample_rows(x1, cfg.batch, pick);
        return loss_s(s, spec, b0, b1, noise);
    });
}

inline void dsm_train(TimeField& s, const SampleBatch& data, const DsmSchedule& sched,
                      const FieldTrainConfig& cfg, std::uint64_t seed) {
    RngStream noise(seed, kTrainerStreamId);
    detail::train_field(s, cfg,
                        [&](long) { return dsm_loss(s, data, sched, cfg.batch, noise); });
}

}  // namespace ebm
