// End-to-end acceptance runs at full scale. One line per criterion; exit
// status is the number of failures. Expected total runtime is a few minutes
// on one core.

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "ebm/ebm.hpp"

using namespace ebm;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void criterion(int id, const char* label,
               const std::function<std::pair<bool, std::string>()>& fn) {
    bool ok = false;
    std::string detail;
    try {
        auto r = fn();
        ok = r.first;
        detail = r.second;
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    std::printf("criterion %2d %s  %s: %s\n", id, ok ? "PASS" : "FAIL", label,
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

double stationary_var(Kernel k, double h, std::size_t walkers, long steps,
                      std::uint64_t seed) {
    QuadraticEnergy target = QuadraticEnergy::standard(1);
    SamplerConfig cfg;
    cfg.step_h = h;
    cfg.n_steps = steps;
    WalkerEnsemble e = ensemble_from_density(GaussianDiag::standard(1), walkers, seed);
    return run_chain(target, k, cfg, e, 1).covariance_diag[0];
}

struct Moments {
    double mean = 0.0, var = 0.0;
};

Moments batch_moments(const SampleBatch& b) {
    std::size_t n = b.rows();
    Vec col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = b.row(i)[0];
    Moments m;
    m.mean = pairwise_mean(col);
    for (double& v : col) {
        double r = v - m.mean;
        v = r * r;
    }
    m.var = pairwise_sum(col) / double(n - 1);
    return m;
}

double fraction_below(const SampleBatch& b, double threshold) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < b.rows(); ++i)
        if (b.row(i)[0] < threshold) ++hits;
    return double(hits) / double(b.rows());
}

double spearman(const Vec& x, const Vec& y) {
    auto ranks = [](const Vec& v) {
        std::vector<std::size_t> idx(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        Vec r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) r[idx[i]] = double(i);
        return r;
    };
    Vec rx = ranks(x), ry = ranks(y);
    double n = double(x.size());
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

const fs::path& work_dir() {
    static fs::path p = [] {
        fs::path q = fs::temp_directory_path() / "ebm_acceptance";
        fs::create_directories(q);
        return q;
    }();
    return p;
}

std::string cli_run(const std::string& sub_args, int threads, const fs::path& out) {
    std::string cmd = std::string(EBM_CLI_PATH) + " --seed 77 --threads " +
                      std::to_string(threads) + " --out " + out.string() + " " +
                      sub_args + " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    if (rc == -1 || !WIFEXITED(rc) || WEXITSTATUS(rc) != 0)
        throw std::runtime_error("cli run failed: " + sub_args);
    std::ifstream f(out, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

int main() {
    criterion(1, "ULA stationary bias", [] {
        double v25 = stationary_var(Kernel::ula, 0.25, 10000, 1000, 9001);
        double v10 = stationary_var(Kernel::ula, 0.1, 10000, 1000, 9002);
        double t25 = 8.0 / 7.0, t10 = 1.0 / 0.95;
        bool ok = std::abs(v25 / t25 - 1.0) < 0.03 && std::abs(v10 / t10 - 1.0) < 0.03;
        return std::pair{ok, "var(h=0.25)=" + num(v25) + " target " + num(t25) +
                                 ", var(h=0.1)=" + num(v10) + " target " + num(t10) +
                                 " (tol 3%)"};
    });

    criterion(2, "MALA unbiasedness", [] {
        std::string detail;
        bool ok = true;
        std::uint64_t seed = 9010;
        for (double h : {0.1, 0.25, 0.5}) {
            double v = stationary_var(Kernel::mala, h, 10000, 1000, seed++);
            ok = ok && std::abs(v - 1.0) < 0.02;
            if (!detail.empty()) detail += ", ";
            detail += "var(h=" + num(h) + ")=" + num(v);
        }
        return std::pair{ok, detail + " (target 1 tol 2%)"};
    });

    criterion(3, "detailed balance", [] {
        Vec rho{0.2, 0.3, 0.5};
        double T[3][3];
        for (int i = 0; i < 3; ++i) {
            double off = 0.0;
            for (int j = 0; j < 3; ++j) {
                if (i == j) continue;
                T[i][j] = 0.5 * std::min(1.0, rho[std::size_t(j)] / rho[std::size_t(i)]);
                off += T[i][j];
            }
            T[i][i] = 1.0 - off;
        }
        double worst = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                worst = std::max(worst, std::abs(rho[std::size_t(i)] * T[i][j] -
                                                 rho[std::size_t(j)] * T[j][i]));
        return std::pair{worst <= 1e-14, "max |rho_i T_ij - rho_j T_ji| = " + num(worst)};
    });

    criterion(4, "KL vs Fisher over the z-grid", [] {
        GaussianMixture1D ref = mixture_from_z(0.0);
        const std::size_t n = 10000;
        Vec zs(21), kl(21), fisher(21), kl_se(21), fi_se(21);
        for (std::size_t i = 0; i < 21; ++i) {
            zs[i] = 5.0 * double(i) / 20.0;
            GaussianMixture1D model = mixture_from_z(zs[i]);
            RngStream sk(9020, 2 * i), sf(9020, 2 * i + 1);
            auto k = kl_mc(ref, model, n, sk);
            auto f = fisher_mc(ref, model, n, sf);
            kl[i] = k.value;
            kl_se[i] = k.std_error;
            fisher[i] = f.value;
            fi_se[i] = f.std_error;
        }
        bool zero_ok = std::abs(kl[0]) <= 4.0 * kl_se[0] + 1e-30 &&
                       std::abs(fisher[0]) <= 4.0 * fi_se[0] + 1e-30;
        double rho_s = spearman(zs, kl);
        double ratio = fisher[8] / kl[8];  // z = 2
        bool ok = zero_ok && rho_s > 0.99 && ratio < 0.1;
        return std::pair{ok, "kl(0)=" + num(kl[0]) + ", fisher(0)=" + num(fisher[0]) +
                                 ", spearman=" + num(rho_s) +
                                 ", fisher/kl at z=2 = " + num(ratio)};
    });

    criterion(5, "Jarzynski trainer", [] {
        MixtureEnergy1D model(0.0);
        GaussianMixture1D rho0 = model.density();
        RngStream ds(1005, kDataStreamId);
        SampleBatch data = sample_batch(mixture_from_z(1.0), 10000, ds);

        TrainConfig cfg;
        cfg.learning_rate = 0.05;
        cfg.n_walkers = 10000;
        cfg.ula_h = 0.01;
        cfg.resample_threshold = 0.5;
        JarzTrainer tr(model, rho0, 0.0, data, cfg, 1005);

        double max_ce_gap = 0.0;
        for (long k = 1; k <= 2000; ++k) {
            bool mark = k % 400 == 0;
            double direct = 0.0;
            if (mark) direct = cross_entropy(model, 0.0, data).value;
            tr.step();
            if (mark)
                max_ce_gap = std::max(max_ce_gap,
                                      std::abs(tr.ce_trace().back() - direct));
        }
        double mass_err = std::abs(sigmoid(tr.theta()[0]) - sigmoid(1.0));
        double lz = std::abs(tr.log_z());
        bool ok = mass_err < 0.05 && lz < 0.05 && max_ce_gap < 0.02;
        return std::pair{ok, "|mass - target| = " + num(mass_err) +
                                 " (tol 0.05), |log Z| = " + num(lz) +
                                 " (tol 0.05), max CE gap at 5 checkpoints = " +
                                 num(max_ce_gap) + " (tol 0.02)"};
    });

    criterion(6, "PCD single-mode bias", [] {
        int failed_seeds = 0;
        for (std::uint64_t seed = 300; seed < 310; ++seed) {
            MixtureEnergy1D model(0.0);
            RngStream ds(seed, kDataStreamId);
            SampleBatch data = sample_batch(mixture_from_z(1.0), 2000, ds);

            SampleBatch init(1, 10000);
            RngStream is(seed, kDataStreamId + 1);
            for (std::size_t i = 0; i < init.rows(); ++i)
                init.row(i)[0] = -5.0 + is.normal();  // left mode only

            TrainConfig cfg;
            cfg.learning_rate = 0.05;
            cfg.n_walkers = 10000;
            cfg.ula_h = 0.01;
            PcdTrainer tr(model, data, cfg, seed, 1, init);
            for (long k = 0; k < 2000; ++k) tr.step();

            double mass = weighted_mass_below(tr.ensemble(), 0.0);
            if (std::abs(mass - sigmoid(1.0)) > 0.1) ++failed_seeds;
        }
        return std::pair{failed_seeds >= 5,
                         "mode-mass error > 0.1 in " + std::to_string(failed_seeds) +
                             "/10 seeds (need >= 5)"};
    });

    criterion(7, "CD-Fisher alignment", [] {
        RngStream ds(1007, kDataStreamId);
        SampleBatch data = sample_batch(GaussianDiag::standard(1), 100000, ds);
        Vec v_cd(11), v_f(11);
        for (int i = 0; i < 11; ++i) {
            double mu = -1.0 + 0.2 * i;
            QuadraticEnergy model(Vec{mu}, Vec{0.0});
            SampleBatch neg =
                cd_negative_phase(model, data, 1, 0.1, 1007 + std::uint64_t(i), 1);
            Vec d = two_sample_gradient(model, neg, data, 1);
            v_cd[std::size_t(i)] = d[0];
            v_f[std::size_t(i)] = -2.0 * mu;  // descent gradient of the Fisher loss
        }
        double cosine = dot(v_cd, v_f) / std::sqrt(norm2_sq(v_cd) * norm2_sq(v_f));
        return std::pair{cosine > 0.9, "cosine = " + num(cosine) + " (need > 0.9)"};
    });

    criterion(8, "free-energy identity", [] {
        auto Uq = QuadraticEnergy::standard(1);
        auto rq = free_energy_residual(Uq, 1.0, GaussianDiag::standard(1), 1000000, 1008);
        MixtureEnergy1D Um(0.0);
        auto rm = free_energy_residual(Um, 1.0, mixture_from_z(0.0), 1000000, 1009);
        bool ok = std::abs(rq.residual) < 0.01 && std::abs(rm.residual) < 0.01;
        return std::pair{ok, "quadratic residual = " + num(rq.residual) +
                                 ", mixture residual = " + num(rm.residual) +
                                 " (tol 0.01)"};
    });

    criterion(9, "score matching", [] {
        RngStream ds(1010, kDataStreamId);
        SampleBatch data = sample_batch(GaussianDiag::standard(1), 100000, ds);
        LinearScore1D score(0.0);
        Vec theta = score.params();
        TrainConfig cfg;
        cfg.learning_rate = 0.2;
        AdamState adam;
        for (int k = 0; k < 200; ++k) {
            auto lg = score_matching_loss(score, data);
            for (double& v : lg.grad_theta) v = -v;  // descend
            optimizer_step(theta, lg.grad_theta, cfg, adam);
            score.set_params(theta);
        }
        bool ok = std::abs(theta[0] - 1.0) <= 0.02;
        return std::pair{ok, "theta = " + num(theta[0]) + " (target 1 +- 0.02)"};
    });

    criterion(10, "NCE normalization", [] {
        RngStream ds(1011, kDataStreamId), ns(1011, kTrainerStreamId);
        SampleBatch data = sample_batch(GaussianDiag::standard(1), 100000, ds);
        GaussianDiag noise(Vec{0.0}, Vec{4.0});
        SampleBatch noise_data = sample_batch(noise, 100000, ns);

        QuadraticEnergy model(Vec{0.0}, Vec{0.0});
        Vec ext = model.params();
        ext.push_back(0.0);  // trainable log Z
        TrainConfig cfg;
        cfg.learning_rate = 0.05;
        cfg.optimizer = OptKind::adam;
        AdamState adam;
        for (int k = 0; k < 400; ++k) {
            NceResult res = nce_loss(model, ext.back(), noise, data, noise_data);
            Vec g(res.grad_theta);
            g.push_back(res.grad_log_z);
            for (double& v : g) v = -v;  // descend
            optimizer_step(ext, g, cfg, adam);
            model.set_params(std::span<const double>(ext.data(), ext.size() - 1));
        }
        double target = 0.9189385332046727;  // (1/2) log 2 pi
        bool ok = std::abs(ext.back() - target) < 0.05;
        return std::pair{ok, "log Z = " + num(ext.back()) + " (target " + num(target) +
                                 " +- 0.05)"};
    });

    criterion(11, "interpolant transport", [] {
        InterpolantSpec spec;  // a = 1
        const double m = 2.0;
        RngStream s0(1012, kDataStreamId), s1(1012, kDataStreamId + 64);
        SampleBatch x0 = sample_batch(GaussianDiag::standard(1), 16384, s0);
        SampleBatch x1 = sample_batch(GaussianDiag({m}, {1.0}), 16384, s1);

        RngStream is(1012, kModelInitStreamId);
        MlpTimeField b = MlpTimeField::random_init(1, FieldRole::velocity, is, 24, 24);
        FieldTrainConfig tc;
        tc.steps = 8000;
        tc.batch = 4096;  // the transported moments sit inside 3-SE windows
        train_loss_b(b, spec, x0, x1, tc, 1012);

        const std::size_t n = 10000;
        RngStream sg(1012, kDataStreamId + 65);
        SampleBatch gen0 = sample_batch(GaussianDiag::standard(1), n, sg);
        Vec times{0.25, 0.5, 0.75, 1.0};
        auto snaps = generate_ode_path(b, gen0, 100, times);

        Moments end = batch_moments(snaps[3]);
        bool ok = std::abs(end.mean - m) < 0.05 && std::abs(end.var - 1.0) < 0.05;
        std::string detail = "endpoint mean = " + num(end.mean) + ", var = " +
                             num(end.var) + " (tol 0.05)";
        for (std::size_t k = 0; k < 3; ++k) {
            double t = times[k];
            double var_ref = gauss_interp_var(spec, t);
            Moments mm = batch_moments(snaps[k]);
            double se_mean = 3.0 * std::sqrt(var_ref / double(n));
            double se_var = 3.0 * var_ref * std::sqrt(2.0 / double(n));
            bool here = std::abs(mm.mean - t * m) < se_mean &&
                        std::abs(mm.var - var_ref) < se_var;
            ok = ok && here;
            detail += "; t=" + num(t) + (here ? " ok" : " off") + " (mean " +
                      num(mm.mean) + "/" + num(t * m) + ", var " + num(mm.var) + "/" +
                      num(var_ref) + ")";
        }
        return std::pair{ok, detail};
    });

    criterion(12, "diffusion mode masses", [] {
        GaussianMixture1D mix = mixture_from_z(0.0);
        RngStream ds(1013, kDataStreamId);
        SampleBatch data = sample_batch(mix, 10000, ds);
        DsmSchedule sched = DsmSchedule::uniform(0.05, 3.0, 30);
        RngStream is(1013, kModelInitStreamId);
        MlpTimeField s = MlpTimeField::random_init(1, FieldRole::score, is);
        FieldTrainConfig tc;
        tc.steps = 3000;
        tc.batch = 2048;
        dsm_train(s, data, sched, tc, 1013);

        GaussianMixture1D rho_T = ou_t_marginal_of_mixture(mix, 3.0);
        RngStream gs(1013, kDataStreamId + 64);
        SampleBatch xT = sample_batch(rho_T, 10000, gs);
        SampleBatch gen = reverse_sde_generate(s, xT, 3.0, 0.05, 500, 1014);
        double left = fraction_below(gen, 0.0);
        bool ok = std::abs(left - 0.5) < 0.05;
        return std::pair{ok, "left mass = " + num(left) + " (target 0.5 +- 0.05)"};
    });

    criterion(13, "Hopfield retrieval", [] {
        RngStream ps(1015, 0);
        SpinVec pattern = random_pattern(200, ps);
        HopfieldNet net = hopfield_store({pattern});

        int exact = 0;
        for (int t = 0; t < 100; ++t) {
            RngStream ts(1015, kTrainerStreamId + std::uint64_t(t));
            SpinVec cue = corrupt_pattern(pattern, 0.1, ts);
            auto r = hopfield_retrieve(net, cue, 100);
            if (r.converged && spin_overlap(r.x, pattern) == 1.0) ++exact;
        }

        // stored patterns are fixed points, alone and at small load
        bool fixed = hopfield_retrieve(net, pattern, 100).iterations == 0;
        std::vector<SpinVec> pats;
        for (int i = 0; i < 3; ++i) pats.push_back(random_pattern(200, ps));
        HopfieldNet net3 = hopfield_store(pats);
        for (const auto& p : pats)
            fixed = fixed && hopfield_retrieve(net3, p, 100).iterations == 0;

        bool ok = exact == 100 && fixed;
        return std::pair{ok, std::to_string(exact) +
                                 "/100 exact retrievals, stored patterns fixed: " +
                                 (fixed ? "yes" : "no")};
    });

    criterion(14, "CLI thread determinism", [] {
        struct Job {
            const char* args;
            const char* name;
        };
        const Job jobs[] = {
            {"fig-gauss --draws 20000 --grid 401 --bins 50", "fig_gauss"},
            {"fig-divergence --n-list 1000 --z-points 6", "fig_divergence"},
            {"ula-bias --h-list 0.25 --walkers 1000 --steps 200", "ula_bias"},
            {"train --algo jarz --steps 40 --walkers 300 --n-data 1000", "train"},
            {"flows --task diffusion --train-steps 150 --n-data 400 --n-gen 300 "
             "--reverse-steps 80",
             "flows"},
            {"hopfield --n 80 --trials 10", "hopfield"},
            {"thermo --family mixture --n 20000", "thermo"},
        };
        int matched = 0, total = 0;
        std::string bad;
        for (const Job& j : jobs) {
            ++total;
            fs::path a = work_dir() / (std::string(j.name) + "_t1.csv");
            fs::path b = work_dir() / (std::string(j.name) + "_t4.csv");
            if (cli_run(j.args, 1, a) == cli_run(j.args, 4, b)) {
                ++matched;
            } else {
                bad += std::string(" ") + j.name;
            }
        }
        bool ok = matched == total;
        return std::pair{ok, std::to_string(matched) + "/" + std::to_string(total) +
                                 " subcommands byte-identical across threads" +
                                 (bad.empty() ? "" : " (mismatch:" + bad + ")")};
    });

    if (failures == 0) {
        std::printf("all 14 criteria passed\n");
    } else {
        std::printf("%d criteria FAILED\n", failures);
    }
    return failures == 0 ? 0 : 1;
}
