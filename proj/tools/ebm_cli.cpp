// Experiment driver. Each subcommand reproduces one figure or number as a
// CSV with a provenance comment line. Identical seed + config => identical
// bytes, independent of --threads.
//
// Exit codes: 0 success, 2 config error, 3 numerical failure.

#include <cstdio>
#include <map>

#include "CLI11.hpp"
#include "ebm/ebm.hpp"

using namespace ebm;

namespace {

// ---------------------------------------------------------------------------
// Option binding: every flag is also a config-JSON key (same name, no "--").
// CLI values win over config values; unknown config keys are fatal.

std::string val_str(double v) { return format_g17(v); }
std::string val_str(bool v) { return v ? "1" : "0"; }
std::string val_str(const std::string& v) { return v; }
template <typename T, typename = std::enable_if_t<std::is_integral_v<T>>>
std::string val_str(T v) {
    return std::to_string(v);
}
template <typename T>
std::string val_str(const std::vector<T>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ';';
        s += val_str(v[i]);
    }
    return s + "]";
}

struct Binding {
    CLI::Option* opt = nullptr;
    std::function<void(const nlohmann::json&)> from_json;
    std::function<std::string()> to_str;
    bool hashed = true;
};
using BindMap = std::map<std::string, Binding>;

template <typename T>
void bind_opt(CLI::App* cmd, BindMap& m, const std::string& key, T& var,
          const std::string& desc, bool hashed = true) {
    CLI::Option* o;
    if constexpr (std::is_same_v<T, bool>) {
        o = cmd->add_flag("--" + key, var, desc);
    } else {
        o = cmd->add_option("--" + key, var, desc)->capture_default_str();
    }
    m[key] = Binding{o, [&var](const nlohmann::json& j) { var = j.get<T>(); },
                     [&var] { return val_str(var); }, hashed};
}

void apply_config(const std::string& path, BindMap& globals, BindMap& sub) {
    std::ifstream f(path);
    if (!f) fail_config("cannot open config file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        fail_config(std::string("config parse error: ") + e.what());
    }
    if (!j.is_object()) fail_config("config must be a JSON object");
    for (auto& [key, val] : j.items()) {
        Binding* b = nullptr;
        if (auto it = sub.find(key); it != sub.end()) b = &it->second;
        else if (auto it2 = globals.find(key); it2 != globals.end()) b = &it2->second;
        if (!b) fail_config("unknown config key: " + key);
        try {
            if (b->opt->count() == 0) b->from_json(val);
        } catch (const nlohmann::json::exception& e) {
            fail_config("config key '" + key + "': " + e.what());
        }
    }
}

// Hash of the effective run parameters. Excludes seed (recorded separately in
// the CSV comment) and anything execution-related (threads, paths), so the
// hash is stable across thread counts and output locations.
std::uint64_t config_hash(const std::string& cmd_name, const BindMap& globals,
                          const BindMap& sub) {
    std::string s = "cmd=" + cmd_name + "\n";
    for (const auto* m : {&globals, &sub})
        for (const auto& [key, b] : *m)
            if (b.hashed) s += key + "=" + b.to_str() + "\n";
    return fnv1a(s);
}

struct Globals {
    std::uint64_t seed = 1;
    std::string out;
    std::string config;
    int threads = 1;
    std::uint64_t hash = 0;  // filled after parse

    std::string out_path(const std::string& cmd_name) const {
        return out.empty() ? cmd_name + ".csv" : out;
    }
};

// mean, sample variance, and the mean's std error of one batch column
struct ColMoments {
    double mean = 0.0, var = 0.0, se_mean = 0.0;
};
ColMoments column_moments(const SampleBatch& b, int col) {
    std::size_t n = b.rows();
    if (n < 2) fail_config("column_moments: need at least 2 rows");
    Vec v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = b.row(i)[col];
    ColMoments m;
    m.mean = pairwise_mean(v);
    Vec dev(n);
    for (std::size_t i = 0; i < n; ++i) {
        double r = v[i] - m.mean;
        dev[i] = r * r;
    }
    m.var = pairwise_sum(dev) / double(n - 1);
    m.se_mean = std::sqrt(m.var / double(n));
    return m;
}

double fraction_below(const SampleBatch& b, double threshold) {
    Vec hit(b.rows());
    for (std::size_t i = 0; i < b.rows(); ++i)
        hit[i] = b.row(i)[0] < threshold ? 1.0 : 0.0;
    return pairwise_mean(hit);
}

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// fig-gauss: the bimodal example density, its energy, and a histogram of its
// own samples on a common x-grid.

struct FigGaussParams {
    double p = 0.7, mu1 = 0.0, mu2 = 5.0, sigma1 = 1.0, sigma2 = 0.5;
    double lo = -6.0, hi = 10.0;
    long grid = 1001, draws = 100000, bins = 100;
};

void run_fig_gauss(const Globals& g, const FigGaussParams& p) {
    if (p.grid < 2 || p.bins < 1 || p.draws < 1 || !(p.hi > p.lo))
        fail_config("fig-gauss: bad grid/bins/draws/range");
    GaussianMixture1D mix({p.p, 1.0 - p.p}, {p.mu1, p.mu2}, {p.sigma1, p.sigma2});

    Vec hist(p.bins, 0.0);
    double bw = (p.hi - p.lo) / double(p.bins);
    RngStream stream(g.seed, kDataStreamId);
    Vec x(1);
    for (long i = 0; i < p.draws; ++i) {
        mix.sample(stream, x);
        auto k = std::clamp<long>(long((x[0] - p.lo) / bw), 0, p.bins - 1);
        hist[std::size_t(k)] += 1.0;
    }
    for (double& v : hist) v /= double(p.draws) * bw;

    CsvWriter csv({"x", "pdf", "energy", "hist"}, g.seed, g.hash);
    for (long i = 0; i < p.grid; ++i) {
        double xi = p.lo + (p.hi - p.lo) * double(i) / double(p.grid - 1);
        double lp = mix.log_pdf(std::span<const double>(&xi, 1));
        auto k = std::clamp<long>(long((xi - p.lo) / bw), 0, p.bins - 1);
        csv.row(Vec{xi, std::exp(lp), -lp, hist[std::size_t(k)]});
    }
    csv.save(g.out_path("fig-gauss"));
}

// ---------------------------------------------------------------------------
// fig-divergence: KL and Fisher between the balanced mixture and rho_z over a
// z-grid, at several sample counts.

struct FigDivergenceParams {
    std::vector<long> n_list = {100, 1000, 10000};
    long z_points = 21;
    double z_max = 5.0;
};

void run_fig_divergence(const Globals& g, const FigDivergenceParams& p) {
    if (p.z_points < 2) fail_config("fig-divergence: z_points must be >= 2");
    GaussianMixture1D ref = mixture_from_z(0.0);
    CsvWriter csv({"z", "n", "kl", "kl_se", "fisher", "fisher_se"}, g.seed, g.hash);
    for (long i = 0; i < p.z_points; ++i) {
        double z = p.z_max * double(i) / double(p.z_points - 1);
        GaussianMixture1D model = mixture_from_z(z);
        for (std::size_t j = 0; j < p.n_list.size(); ++j) {
            long n = p.n_list[j];
            if (n < 2) fail_config("fig-divergence: each n must be >= 2");
            std::uint64_t row = std::uint64_t(i) * p.n_list.size() + j;
            RngStream skl(g.seed, kDataStreamId + 2 * row);
            RngStream sf(g.seed, kDataStreamId + 2 * row + 1);
            DivergenceEstimate kl = kl_mc(ref, model, std::size_t(n), skl);
            DivergenceEstimate fi = fisher_mc(ref, model, std::size_t(n), sf);
            csv.row(Vec{z, double(n), kl.value, kl.std_error, fi.value, fi.std_error});
        }
    }
    csv.save(g.out_path("fig-divergence"));
}

// ---------------------------------------------------------------------------
// ula-bias: empirical ULA stationary variance against the analytic
// sigma^2/(1 - h/(2 sigma^2)) on N(0,1), with the MALA variance alongside.
// Steps outside the formula's validity window produce a "divergent" row.

struct UlaBiasParams {
    std::vector<double> h_list = {0.05, 0.1, 0.25, 0.5, 2.5};
    long walkers = 10000, steps = 1000;
};

void run_ula_bias(const Globals& g, const UlaBiasParams& p) {
    if (p.walkers < 2 || p.steps < 1) fail_config("ula-bias: bad walkers/steps");
    QuadraticEnergy target = QuadraticEnergy::standard(1);
    GaussianDiag rho = GaussianDiag::standard(1);
    CsvWriter csv({"h", "ula_var", "analytic_var", "ratio", "mala_var", "mala_acc",
                   "status"},
                  g.seed, g.hash);
    Vec s2{1.0};
    for (std::size_t r = 0; r < p.h_list.size(); ++r) {
        double h = p.h_list[r];
        Vec analytic;
        try {
            analytic = ula_limit_covariance(s2, h);
        } catch (const std::exception&) {
            std::vector<std::string> cells{format_g17(h), "nan", "nan", "nan",
                                           "nan",         "nan", "divergent"};
            csv.row(cells);
            continue;
        }
        SamplerConfig cfg;
        cfg.step_h = h;
        cfg.n_steps = p.steps;

        WalkerEnsemble eu =
            ensemble_from_density(rho, std::size_t(p.walkers), g.seed + 2 * r);
        ChainStats su = run_chain(target, Kernel::ula, cfg, eu, g.threads);
        WalkerEnsemble em =
            ensemble_from_density(rho, std::size_t(p.walkers), g.seed + 2 * r + 1);
        ChainStats sm = run_chain(target, Kernel::mala, cfg, em, g.threads);

        std::vector<std::string> cells{
            format_g17(h),
            format_g17(su.covariance_diag[0]),
            format_g17(analytic[0]),
            format_g17(su.covariance_diag[0] / analytic[0]),
            format_g17(sm.covariance_diag[0]),
            format_g17(sm.acceptance_rate),
            "ok"};
        csv.row(cells);
    }
    csv.save(g.out_path("ula-bias"));
}

// ---------------------------------------------------------------------------
// train: one trainer end to end. Columns not tracked by the chosen algorithm
// hold nan; requesting them explicitly is a config error naming the gap.

struct TrainParams {
    std::string algo = "jarz";
    std::string family;  // quadratic | mixture | linear; default depends on algo
    double target_z = 1.0, target_mean = 0.0, target_var = 1.0;
    double init_z = 0.0, init_mean = 0.0, init_logvar = 0.0;
    long steps = 500, n_data = 10000, batch = 0, log_every = 0;
    double gamma = 0.01, ula_h = 0.05, resample = 0.5, noise_var = 4.0;
    long walkers = 1000, cd_steps = 1;
    std::string optimizer = "sgd";
    bool track_ce = false, track_logz = false, alpha_theta_k = false;
    std::string checkpoint;
};

void run_train(const Globals& g, const TrainParams& p) {
    std::string family = p.family;
    if (family.empty())
        family = p.algo == "jarz" ? "mixture" : p.algo == "sm" ? "linear" : "quadratic";

    if (p.algo == "sm") {
        if (family != "linear")
            fail_config("algo 'sm' drives the linear score family only; family '" +
                        family + "' has no score-matching objective here");
    } else if (family == "linear") {
        fail_config("family 'linear' is a score model: only algo 'sm' can train it");
    }
    if (p.algo == "nce" && family != "quadratic")
        fail_config("algo 'nce' requires the quadratic family: family '" + family +
                    "' has no trainable normalization parameter");
    if (p.track_ce && p.algo != "jarz")
        fail_config("algo '" + p.algo +
                    "' cannot track cross-entropy: no running log Z estimate (use jarz)");
    if (p.track_logz && p.algo != "jarz" && p.algo != "nce")
        fail_config("algo '" + p.algo +
                    "' cannot track log Z: no partition-function estimate (use jarz or nce)");

    TrainConfig cfg;
    cfg.learning_rate = p.gamma;
    cfg.n_walkers = std::size_t(p.walkers);
    cfg.ula_h = p.ula_h;
    cfg.cd_inner_steps = p.cd_steps;
    if (p.optimizer == "adam") cfg.optimizer = OptKind::adam;
    else if (p.optimizer == "sgd") cfg.optimizer = OptKind::sgd;
    else fail_config("unknown optimizer: " + p.optimizer);
    cfg.resample_threshold = p.resample;
    cfg.total_steps = p.steps;
    cfg.batch_size = std::size_t(p.batch);
    cfg.alpha_updated_theta = !p.alpha_theta_k;

    std::unique_ptr<AnalyticDensity> target;
    if (family == "mixture")
        target = std::make_unique<GaussianMixture1D>(mixture_from_z(p.target_z));
    else
        target = std::make_unique<GaussianDiag>(Vec{p.target_mean}, Vec{p.target_var});
    RngStream data_stream(g.seed, kDataStreamId);
    SampleBatch data = sample_batch(*target, std::size_t(p.n_data), data_stream);

    long le = p.log_every > 0 ? p.log_every : std::max<long>(1, p.steps / 50);
    CsvWriter csv({"step", "theta0", "theta1", "log_z", "ce", "loss", "mode_mass"},
                  g.seed, g.hash);
    auto log_row = [&](long k, const Vec& th, double lz, double ce, double loss,
                       double mm) {
        csv.row(Vec{double(k), th.empty() ? kNan : th[0], th.size() > 1 ? th[1] : kNan,
                    lz, ce, loss, mm});
    };

    Checkpoint ck;
    ck.family = family;
    ck.dim = 1;
    ck.metadata["seed"] = double(g.seed);
    ck.metadata["steps"] = double(p.steps);

    if (p.algo == "cd" || p.algo == "pcd") {
        std::unique_ptr<EnergyModel> model;
        if (family == "mixture")
            model = std::make_unique<MixtureEnergy1D>(p.init_z);
        else
            model = std::make_unique<QuadraticEnergy>(Vec{p.init_mean}, Vec{p.init_logvar});
        std::unique_ptr<CdTrainer> cd;
        std::unique_ptr<PcdTrainer> pcd;
        if (p.algo == "cd")
            cd = std::make_unique<CdTrainer>(*model, data, cfg, g.seed, g.threads);
        else
            pcd = std::make_unique<PcdTrainer>(*model, data, cfg, g.seed, g.threads);
        auto mass = [&]() {
            return family == "mixture" && pcd ? weighted_mass_below(pcd->ensemble(), 0.0)
                                              : kNan;
        };
        log_row(0, model->params(), kNan, kNan, kNan, mass());
        for (long k = 1; k <= p.steps; ++k) {
            if (cd) cd->step();
            else pcd->step();
            if (k % le == 0 || k == p.steps)
                log_row(k, model->params(), kNan, kNan, kNan, mass());
        }
        ck.theta = model->params();
        ck.metadata["final_mode_mass"] = mass();
    } else if (p.algo == "jarz") {
        std::unique_ptr<EnergyModel> model;
        std::unique_ptr<AnalyticDensity> rho0;
        double log_z0 = 0.0;
        if (family == "mixture") {
            auto m = std::make_unique<MixtureEnergy1D>(p.init_z);
            rho0 = std::make_unique<GaussianMixture1D>(m->density());
            model = std::move(m);
        } else {
            auto m = std::make_unique<QuadraticEnergy>(Vec{p.init_mean}, Vec{p.init_logvar});
            rho0 = std::make_unique<GaussianDiag>(m->density());
            log_z0 = m->log_Z();
            model = std::move(m);
        }
        JarzTrainer tr(*model, *rho0, log_z0, data, cfg, g.seed, g.threads);
        auto mass = [&]() {
            return family == "mixture" ? weighted_mass_below(tr.ensemble(), 0.0) : kNan;
        };
        log_row(0, tr.theta(), tr.log_z(), kNan, kNan, mass());
        for (long k = 1; k <= p.steps; ++k) {
            tr.step();
            if (k % le == 0 || k == p.steps)
                log_row(k, tr.theta(), tr.log_z(), tr.ce_trace().back(), kNan, mass());
        }
        ck.theta = tr.theta();
        ck.metadata["final_log_z"] = tr.log_z();
        ck.metadata["final_ce"] = tr.ce_trace().back();
        ck.metadata["final_mode_mass"] = mass();
        ck.metadata["resamples"] = double(tr.resample_count());
    } else if (p.algo == "nce") {
        QuadraticEnergy model(Vec{p.init_mean}, Vec{p.init_logvar});
        GaussianDiag noise(Vec{0.0}, Vec{p.noise_var});
        RngStream noise_stream(g.seed, kTrainerStreamId);
        SampleBatch noise_data =
            sample_batch(noise, std::size_t(p.n_data), noise_stream);
        Vec theta = model.params();
        double log_z_param = 0.0;
        AdamState adam;
        Vec ext(theta.size() + 1);
        auto pack = [&]() {
            std::copy(theta.begin(), theta.end(), ext.begin());
            ext.back() = log_z_param;
        };
        pack();
        NceResult res = nce_loss(model, log_z_param, noise, data, noise_data);
        log_row(0, theta, log_z_param, kNan, res.loss, kNan);
        for (long k = 1; k <= p.steps; ++k) {
            res = nce_loss(model, log_z_param, noise, data, noise_data);
            Vec grad(res.grad_theta);
            grad.push_back(res.grad_log_z);
            for (double& v : grad) v = -v;  // descent
            optimizer_step(ext, grad, cfg, adam);
            theta.assign(ext.begin(), ext.end() - 1);
            log_z_param = ext.back();
            model.set_params(theta);
            if (k % le == 0 || k == p.steps)
                log_row(k, theta, log_z_param, kNan, res.loss, kNan);
        }
        ck.theta = theta;
        ck.metadata["final_log_z"] = log_z_param;
        ck.metadata["final_loss"] = res.loss;
    } else if (p.algo == "sm") {
        LinearScore1D score(0.0);
        Vec theta = score.params();
        AdamState adam;
        LossWithGrad lg = score_matching_loss(score, data);
        log_row(0, theta, kNan, kNan, lg.loss, kNan);
        for (long k = 1; k <= p.steps; ++k) {
            lg = score_matching_loss(score, data);
            for (double& v : lg.grad_theta) v = -v;  // descent
            optimizer_step(theta, lg.grad_theta, cfg, adam);
            score.set_params(theta);
            if (k % le == 0 || k == p.steps)
                log_row(k, theta, kNan, kNan, lg.loss, kNan);
        }
        ck.theta = theta;
        ck.metadata["final_loss"] = lg.loss;
    } else {
        fail_config("unknown algo: " + p.algo + " (expected cd|pcd|jarz|nce|sm)");
    }

    std::string out = g.out_path("train");
    csv.save(out);
    std::string ck_path = p.checkpoint.empty() ? out + ".ckpt.json" : p.checkpoint;
    save_checkpoint(ck_path, ck);
}

// ---------------------------------------------------------------------------
// flows: interpolant transport or score-based diffusion, reported long-form
// as metric rows against oracle references.

struct FlowsParams {
    std::string task = "interpolant";
    double m = 2.0, a = 1.0, t_min = 0.01;
    std::vector<double> eps_list;
    long n_data = 4000, n_gen = 10000, ode_steps = 100, sde_steps = 1000;
    long train_steps = 2000, batch = 256, hidden = 16;
    double lr = 0.01;
    double T = 3.0;  // diffusion horizon
    long reverse_steps = 500, t_grid = 30;
};

void run_flows(const Globals& g, const FlowsParams& p) {
    if (p.n_data < 2 || p.n_gen < 2) fail_config("flows: need n_data, n_gen >= 2");
    CsvWriter csv({"metric", "param", "value", "std_error", "ref"}, g.seed, g.hash);
    auto row = [&](const std::string& metric, double param, double value, double se,
                   double ref) {
        std::vector<std::string> cells{metric, format_g17(param), format_g17(value),
                                       format_g17(se), format_g17(ref)};
        csv.row(cells);
    };
    FieldTrainConfig tc;
    tc.steps = p.train_steps;
    tc.learning_rate = p.lr;
    tc.batch = std::size_t(p.batch);

    if (p.task == "interpolant") {
        InterpolantSpec spec;
        spec.a = p.a;
        spec.t_min = p.t_min;
        spec.validate();
        GaussianDiag rho0 = GaussianDiag::standard(1);
        GaussianDiag rho1(Vec{p.m}, Vec{1.0});
        RngStream s0(g.seed, kDataStreamId), s1(g.seed, kDataStreamId + 64);
        SampleBatch x0 = sample_batch(rho0, std::size_t(p.n_data), s0);
        SampleBatch x1 = sample_batch(rho1, std::size_t(p.n_data), s1);

        RngStream init(g.seed, kModelInitStreamId);
        MlpTimeField b = MlpTimeField::random_init(1, FieldRole::velocity, init,
                                                   int(p.hidden), int(p.hidden));
        train_loss_b(b, spec, x0, x1, tc, g.seed);

        RngStream sg(g.seed, kDataStreamId + 65);
        SampleBatch gen0 = sample_batch(rho0, std::size_t(p.n_gen), sg);
        SampleBatch end = generate_ode(b, gen0, int(p.ode_steps), g.threads);
        ColMoments mm = column_moments(end, 0);
        row("endpoint_mean", kNan, mm.mean, mm.se_mean, p.m);
        row("endpoint_var", kNan, mm.var, kNan, 1.0);

        if (!p.eps_list.empty()) {
            MlpTimeField s = MlpTimeField::random_init(1, FieldRole::score, init,
                                                       int(p.hidden), int(p.hidden));
            train_loss_s(s, spec, x0, x1, tc, g.seed + 1);
            for (double eps : p.eps_list) {
                SampleBatch se = generate_sde(b, s, eps, gen0, int(p.sde_steps),
                                              g.seed + 7, g.threads);
                ColMoments ms = column_moments(se, 0);
                row("sde_var_gap", eps, std::abs(ms.var - mm.var), kNan, 0.0);
                row("sde_mean", eps, ms.mean, ms.se_mean, p.m);
            }
        }
    } else if (p.task == "diffusion") {
        GaussianMixture1D mix = mixture_from_z(0.0);
        RngStream sd(g.seed, kDataStreamId);
        SampleBatch data = sample_batch(mix, std::size_t(p.n_data), sd);
        DsmSchedule sched = DsmSchedule::uniform(p.t_min, p.T, int(p.t_grid));
        RngStream init(g.seed, kModelInitStreamId);
        MlpTimeField s = MlpTimeField::random_init(1, FieldRole::score, init,
                                                   int(p.hidden), int(p.hidden));
        dsm_train(s, data, sched, tc, g.seed);

        GaussianMixture1D rho_T = ou_t_marginal_of_mixture(mix, p.T);
        RngStream sT(g.seed, kDataStreamId + 64);
        SampleBatch xT = sample_batch(rho_T, std::size_t(p.n_gen), sT);
        SampleBatch gen = reverse_sde_generate(s, xT, p.T, p.t_min, int(p.reverse_steps),
                                               g.seed + 7, g.threads);
        double left = fraction_below(gen, 0.0);
        double se = std::sqrt(left * (1.0 - left) / double(p.n_gen));
        row("mode_mass_left", kNan, left, se, 0.5);
        row("mode_mass_right", kNan, 1.0 - left, se, 0.5);
        ColMoments mm = column_moments(gen, 0);
        row("mean", kNan, mm.mean, mm.se_mean, 0.0);
        row("var", kNan, mm.var, kNan, 26.0);
    } else {
        fail_config("unknown flows task: " + p.task + " (expected interpolant|diffusion)");
    }
    csv.save(g.out_path("flows"));
}

// ---------------------------------------------------------------------------
// hopfield: Hebbian storage and retrieval-from-corruption trials.

struct HopfieldParams {
    long n = 200, patterns = 1, trials = 100, max_iter = 100;
    double corruption = 0.1;
};

void run_hopfield(const Globals& g, const HopfieldParams& p) {
    if (p.n < 1 || p.patterns < 1 || p.trials < 1)
        fail_config("hopfield: bad n/patterns/trials");
    RngStream pat_stream(g.seed, kDataStreamId);
    std::vector<SpinVec> patterns;
    for (long i = 0; i < p.patterns; ++i)
        patterns.push_back(random_pattern(int(p.n), pat_stream));
    HopfieldNet net = hopfield_store(patterns);

    CsvWriter csv({"trial", "pattern", "overlap", "iterations", "converged"}, g.seed,
                  g.hash);
    for (long t = 0; t < p.trials; ++t) {
        const SpinVec& y = patterns[std::size_t(t % p.patterns)];
        RngStream ts(g.seed, kTrainerStreamId + std::uint64_t(t));
        SpinVec cue = corrupt_pattern(y, p.corruption, ts);
        HopfieldRetrieval r = hopfield_retrieve(net, cue, int(p.max_iter));
        csv.row(Vec{double(t), double(t % p.patterns), spin_overlap(r.x, y),
                    double(r.iterations), r.converged ? 1.0 : 0.0});
    }
    csv.save(g.out_path("hopfield"));
}

// ---------------------------------------------------------------------------
// thermo: the free-energy identity on one analytic family, one CSV row.

struct ThermoParams {
    std::string family = "quadratic";
    double beta = 1.0, mean = 0.0, var = 1.0, z = 0.0;
    long n = 1000000;
};

void run_thermo(const Globals& g, const ThermoParams& p) {
    ThermoReport rep;
    if (p.family == "quadratic") {
        QuadraticEnergy U(Vec{p.mean}, Vec{std::log(p.var)});
        GaussianDiag rho = U.density();
        rep = free_energy_residual(U, p.beta, rho, std::size_t(p.n), g.seed, g.threads);
    } else if (p.family == "mixture") {
        MixtureEnergy1D U(p.z);
        GaussianMixture1D rho = U.density();
        rep = free_energy_residual(U, p.beta, rho, std::size_t(p.n), g.seed, g.threads);
    } else {
        fail_config("unknown family: " + p.family + " (expected quadratic|mixture)");
    }
    CsvWriter csv({"log_z", "mean_energy", "entropy", "residual"}, g.seed, g.hash);
    csv.row(Vec{rep.log_z, rep.mean_energy, rep.entropy, rep.residual});
    csv.save(g.out_path("thermo"));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"energy-based model experiments"};
    app.require_subcommand(1);

    Globals g;
    BindMap globals;
    bind_opt(&app, globals, "seed", g.seed, "master seed", false);
    bind_opt(&app, globals, "out", g.out, "output CSV path (default <cmd>.csv)", false);
    bind_opt(&app, globals, "config", g.config, "JSON config file", false);
    bind_opt(&app, globals, "threads", g.threads, "worker threads", false);

    FigGaussParams fg;
    BindMap fg_b;
    CLI::App* c_fg = app.add_subcommand("fig-gauss", "bimodal example density figure");
    bind_opt(c_fg, fg_b, "p", fg.p, "first component weight");
    bind_opt(c_fg, fg_b, "mu1", fg.mu1, "first component mean");
    bind_opt(c_fg, fg_b, "mu2", fg.mu2, "second component mean");
    bind_opt(c_fg, fg_b, "sigma1", fg.sigma1, "first component std");
    bind_opt(c_fg, fg_b, "sigma2", fg.sigma2, "second component std");
    bind_opt(c_fg, fg_b, "lo", fg.lo, "grid lower edge");
    bind_opt(c_fg, fg_b, "hi", fg.hi, "grid upper edge");
    bind_opt(c_fg, fg_b, "grid", fg.grid, "grid points");
    bind_opt(c_fg, fg_b, "draws", fg.draws, "histogram sample count");
    bind_opt(c_fg, fg_b, "bins", fg.bins, "histogram bins");

    FigDivergenceParams fd;
    BindMap fd_b;
    CLI::App* c_fd = app.add_subcommand("fig-divergence", "KL vs Fisher over the z-grid");
    bind_opt(c_fd, fd_b, "n-list", fd.n_list, "sample counts");
    bind_opt(c_fd, fd_b, "z-points", fd.z_points, "z-grid size");
    bind_opt(c_fd, fd_b, "z-max", fd.z_max, "z-grid upper end");

    UlaBiasParams ub;
    BindMap ub_b;
    CLI::App* c_ub = app.add_subcommand("ula-bias", "ULA stationary bias vs MALA");
    bind_opt(c_ub, ub_b, "h-list", ub.h_list, "step sizes");
    bind_opt(c_ub, ub_b, "walkers", ub.walkers, "walker count");
    bind_opt(c_ub, ub_b, "steps", ub.steps, "steps per walker");

    TrainParams tp;
    BindMap tp_b;
    CLI::App* c_tp = app.add_subcommand("train", "run one trainer end to end");
    bind_opt(c_tp, tp_b, "algo", tp.algo, "cd|pcd|jarz|nce|sm");
    bind_opt(c_tp, tp_b, "family", tp.family, "quadratic|mixture|linear (default per algo)");
    bind_opt(c_tp, tp_b, "target-z", tp.target_z, "mixture target z*");
    bind_opt(c_tp, tp_b, "target-mean", tp.target_mean, "Gaussian target mean");
    bind_opt(c_tp, tp_b, "target-var", tp.target_var, "Gaussian target variance");
    bind_opt(c_tp, tp_b, "init-z", tp.init_z, "mixture family initial z");
    bind_opt(c_tp, tp_b, "init-mean", tp.init_mean, "quadratic family initial mean");
    bind_opt(c_tp, tp_b, "init-logvar", tp.init_logvar, "quadratic family initial log var");
    bind_opt(c_tp, tp_b, "steps", tp.steps, "training steps");
    bind_opt(c_tp, tp_b, "n-data", tp.n_data, "data sample count");
    bind_opt(c_tp, tp_b, "batch", tp.batch, "minibatch size (0 = full batch)");
    bind_opt(c_tp, tp_b, "log-every", tp.log_every, "row interval (0 = steps/50)");
    bind_opt(c_tp, tp_b, "gamma", tp.gamma, "learning rate");
    bind_opt(c_tp, tp_b, "ula-h", tp.ula_h, "sampler step size");
    bind_opt(c_tp, tp_b, "resample", tp.resample, "ESS-fraction resampling threshold");
    bind_opt(c_tp, tp_b, "noise-var", tp.noise_var, "NCE noise variance");
    bind_opt(c_tp, tp_b, "walkers", tp.walkers, "sampler walker count");
    bind_opt(c_tp, tp_b, "cd-steps", tp.cd_steps, "CD inner steps");
    bind_opt(c_tp, tp_b, "optimizer", tp.optimizer, "sgd|adam");
    bind_opt(c_tp, tp_b, "track-ce", tp.track_ce, "require cross-entropy tracking");
    bind_opt(c_tp, tp_b, "track-logz", tp.track_logz, "require log Z tracking");
    bind_opt(c_tp, tp_b, "alpha-theta-k", tp.alpha_theta_k,
         "evaluate both weight increments at theta_k");
    bind_opt(c_tp, tp_b, "checkpoint", tp.checkpoint, "checkpoint path", false);

    FlowsParams fl;
    BindMap fl_b;
    CLI::App* c_fl = app.add_subcommand("flows", "interpolant / diffusion generation");
    bind_opt(c_fl, fl_b, "task", fl.task, "interpolant|diffusion");
    bind_opt(c_fl, fl_b, "m", fl.m, "target Gaussian mean");
    bind_opt(c_fl, fl_b, "a", fl.a, "gamma amplitude");
    bind_opt(c_fl, fl_b, "t-min", fl.t_min, "time window edge");
    bind_opt(c_fl, fl_b, "eps-list", fl.eps_list, "SDE noise levels");
    bind_opt(c_fl, fl_b, "n-data", fl.n_data, "training sample count");
    bind_opt(c_fl, fl_b, "n-gen", fl.n_gen, "generated sample count");
    bind_opt(c_fl, fl_b, "ode-steps", fl.ode_steps, "RK4 steps");
    bind_opt(c_fl, fl_b, "sde-steps", fl.sde_steps, "Euler-Maruyama steps");
    bind_opt(c_fl, fl_b, "train-steps", fl.train_steps, "optimizer steps");
    bind_opt(c_fl, fl_b, "batch", fl.batch, "minibatch size");
    bind_opt(c_fl, fl_b, "hidden", fl.hidden, "MLP hidden width");
    bind_opt(c_fl, fl_b, "lr", fl.lr, "learning rate");
    bind_opt(c_fl, fl_b, "T", fl.T, "diffusion horizon");
    bind_opt(c_fl, fl_b, "reverse-steps", fl.reverse_steps, "reverse SDE steps");
    bind_opt(c_fl, fl_b, "t-grid", fl.t_grid, "DSM time-grid points");

    HopfieldParams hp;
    BindMap hp_b;
    CLI::App* c_hp = app.add_subcommand("hopfield", "Hebbian storage and retrieval");
    bind_opt(c_hp, hp_b, "n", hp.n, "spins per pattern");
    bind_opt(c_hp, hp_b, "patterns", hp.patterns, "stored pattern count");
    bind_opt(c_hp, hp_b, "trials", hp.trials, "retrieval trials");
    bind_opt(c_hp, hp_b, "max-iter", hp.max_iter, "retrieval sweep cap");
    bind_opt(c_hp, hp_b, "corruption", hp.corruption, "cue corruption fraction");

    ThermoParams th;
    BindMap th_b;
    CLI::App* c_th = app.add_subcommand("thermo", "free-energy identity report");
    bind_opt(c_th, th_b, "family", th.family, "quadratic|mixture");
    bind_opt(c_th, th_b, "beta", th.beta, "inverse temperature");
    bind_opt(c_th, th_b, "mean", th.mean, "quadratic family mean");
    bind_opt(c_th, th_b, "var", th.var, "quadratic family variance");
    bind_opt(c_th, th_b, "z", th.z, "mixture family z");
    bind_opt(c_th, th_b, "n", th.n, "MC sample count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        struct Sub {
            CLI::App* cmd;
            BindMap* binds;
            std::function<void()> run;
        };
        std::vector<Sub> subs = {
            {c_fg, &fg_b, [&] { run_fig_gauss(g, fg); }},
            {c_fd, &fd_b, [&] { run_fig_divergence(g, fd); }},
            {c_ub, &ub_b, [&] { run_ula_bias(g, ub); }},
            {c_tp, &tp_b, [&] { run_train(g, tp); }},
            {c_fl, &fl_b, [&] { run_flows(g, fl); }},
            {c_hp, &hp_b, [&] { run_hopfield(g, hp); }},
            {c_th, &th_b, [&] { run_thermo(g, th); }},
        };
        for (Sub& s : subs) {
            if (!s.cmd->parsed()) continue;
            if (!g.config.empty()) apply_config(g.config, globals, *s.binds);
            if (g.threads < 1) fail_config("--threads must be >= 1");
            g.hash = config_hash(s.cmd->get_name(), globals, *s.binds);
            s.run();
            return 0;
        }
        fail_config("no subcommand given");
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    }
    return 0;
}
