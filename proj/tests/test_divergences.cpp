#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ebm/divergences.hpp"
#include "ebm/energies.hpp"
#include "ebm/training.hpp"

using namespace ebm;

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;
constexpr double kHalfLog2PiE = 1.4189385332046727;
}  // namespace

TEST_CASE("mc_mean basics", "[divergences]") {
    Vec v{1.0, 2.0, 3.0, 4.0};
    auto est = mc_mean(v);
    REQUIRE(est.value == Catch::Approx(2.5));
    // sample sd of {1,2,3,4} is sqrt(5/3)
    REQUIRE(est.std_error == Catch::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
    REQUIRE(est.n_samples == 4);
    REQUIRE_THROWS_AS(mc_mean(Vec{1.0}), std::invalid_argument);
}

TEST_CASE("kl_mc oracle values", "[divergences]") {
    GaussianDiag g1({0.0}, {1.0});

    // same density: 0 within 4 SE, and SE itself is small
    RngStream s1(1, 0);
    auto same = kl_mc(g1, g1, 10000, s1);
    REQUIRE(std::abs(same.value) <= 4.0 * std::max(same.std_error, 1e-300));

    // KL(N(0,1) || N(2,1)) = 2
    GaussianDiag g2({2.0}, {1.0});
    RngStream s2(2, 0);
    auto kl = kl_mc(g1, g2, 1000000, s2);
    REQUIRE(kl.value == Catch::Approx(2.0).margin(0.01));

    // mixture pair: MC agrees with quadrature within 4 SE
    auto ma = mixture_from_z(0.0);
    auto mb = mixture_from_z(2.0);
    RngStream s3(3, 0);
    auto klm = kl_mc(ma, mb, 10000, s3);
    double ref = quadrature_kl(ma, mb);
    REQUIRE(std::abs(klm.value - ref) < 4.0 * klm.std_error);

    // KL >= 0 up to MC noise across density pairs
    REQUIRE(klm.value > -4.0 * klm.std_error);

    GaussianDiag g2d = GaussianDiag::standard(2);
    RngStream s4(4, 0);
    REQUIRE_THROWS_AS(kl_mc(g1, g2d, 100, s4), std::invalid_argument);
    REQUIRE_THROWS_AS(kl_mc(g1, g1, 1, s4), std::invalid_argument);
}

TEST_CASE("fisher_mc oracle values", "[divergences]") {
    GaussianDiag g1({0.0}, {1.0});
    RngStream s1(5, 0);
    auto same = fisher_mc(g1, g1, 1000, s1);
    REQUIRE(same.value == 0.0);
    REQUIRE(same.std_error == 0.0);

    // scores of N(0,1) and N(2,1) differ by the constant 2 everywhere:
    // the estimator returns 4 with exactly zero variance
    GaussianDiag g2({2.0}, {1.0});
    RngStream s2(6, 0);
    auto f = fisher_mc(g1, g2, 1000, s2);
    REQUIRE(f.value == Catch::Approx(4.0).margin(1e-12));
    REQUIRE(f.std_error < 1e-12);

    // the bimodal blindness: Fisher tiny relative to KL for separated modes
    auto ma = mixture_from_z(0.0);
    auto mb = mixture_from_z(2.0);
    RngStream s3(7, 0);
    auto fm = fisher_mc(ma, mb, 10000, s3);
    RngStream s4(8, 0);
    auto km = kl_mc(ma, mb, 10000, s4);
    REQUIRE(fm.value < 0.1 * km.value);
}

TEST_CASE("cross_entropy identities", "[divergences]") {
    QuadraticEnergy U({0.0}, {0.0});
    GaussianDiag rho = U.density();

    // H(rho, rho) = entropy = (1/2) log(2 pi e)
    RngStream s(9, 0);
    auto data = sample_batch(rho, 1000000, s);
    auto ce = cross_entropy(U, U.log_Z(), data);
    REQUIRE(ce.value == Catch::Approx(kHalfLog2PiE).margin(0.005));

    // invariance under (U + c, log Z - c): holds to rounding, ~13 orders
    // below the statistical error
    ShiftedEnergy Us(U, 3.75);
    auto ce2 = cross_entropy(Us, U.log_Z() - 3.75, data);
    REQUIRE(ce2.value == Catch::Approx(ce.value).margin(1e-12));

    // H(rho*, rho_theta) = H(rho*) + KL(rho* || rho_theta), quadrature cross-check
    QuadraticEnergy Uth({1.0}, {std::log(2.0)});
    auto ce3 = cross_entropy(Uth, Uth.log_Z(), data);
    double ref = quadrature_entropy(rho) + quadrature_kl(rho, Uth.density());
    REQUIRE(std::abs(ce3.value - ref) < 4.0 * ce3.std_error);

    // mixture data under its own (normalized) energy: CE = entropy
    MixtureEnergy1D Um(0.7);
    RngStream s2(10, 0);
    auto mdata = sample_batch(Um.density(), 20000, s2);
    auto cem = cross_entropy(Um, 0.0, mdata);
    double href = quadrature_entropy(Um.density());
    REQUIRE(std::abs(cem.value - href) < 4.0 * cem.std_error);

    // single-row batch: SE defined as 0
    SampleBatch one(1, 1);
    one.row(0)[0] = 0.5;
    auto ce1 = cross_entropy(U, U.log_Z(), one);
    REQUIRE(ce1.std_error == 0.0);
    REQUIRE(ce1.value == Catch::Approx(U.log_Z() + 0.125));
}

TEST_CASE("entropy_mc matches closed forms", "[divergences]") {
    GaussianDiag g({0.0}, {1.0});
    RngStream s(11, 0);
    auto h = entropy_mc(g, 200000, s);
    REQUIRE(std::abs(h.value - kHalfLog2PiE) < 4.0 * h.std_error);
}

TEST_CASE("log_z_importance is exact when proposal equals target", "[divergences]") {
    QuadraticEnergy U({0.0}, {0.0});
    GaussianDiag prop = U.density();
    RngStream s(12, 0);
    auto est = log_z_importance(U, prop, 1000, s);
    // weights are constant to rounding: value = log Z, SE collapses to the
    // rounding floor (a mismatched proposal sits ~12 orders higher)
    REQUIRE(est.value == Catch::Approx(kHalfLog2Pi).margin(1e-12));
    REQUIRE(est.std_error < 1e-13);
}

TEST_CASE("log_z_importance with mismatched proposals", "[divergences]") {
    QuadraticEnergy U({0.0}, {0.0});
    GaussianDiag wide({0.0}, {4.0});
    RngStream s(13, 0);
    auto est = log_z_importance(U, wide, 100000, s);
    REQUIRE(est.value == Catch::Approx(kHalfLog2Pi).margin(0.01));
    REQUIRE(est.std_error > 0.0);

    // normalized mixture: log Z = 0
    MixtureEnergy1D Um(0.0);
    GaussianDiag cover({0.0}, {36.0});
    RngStream s2(14, 0);
    auto zm = log_z_importance(Um, cover, 100000, s2);
    REQUIRE(zm.value == Catch::Approx(0.0).margin(0.02));

    RngStream s3(15, 0);
    REQUIRE_THROWS_AS(log_z_importance(U, wide, 1, s3), std::invalid_argument);
}

TEST_CASE("score matching loss on the linear family", "[divergences]") {
    // s_theta(x) = -theta x: J(theta) = (1/2) theta^2 E[x^2] - theta
    GaussianDiag g({0.0}, {1.0});
    RngStream s(16, 0);
    auto data = sample_batch(g, 100000, s);
    double ex2 = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i)
        ex2 += data.row(i)[0] * data.row(i)[0];
    ex2 /= double(data.rows());

    LinearScore1D sc(0.7);
    auto lg = score_matching_loss(sc, data);
    REQUIRE(lg.loss == Catch::Approx(0.5 * 0.49 * ex2 - 0.7).margin(1e-10));
    REQUIRE(lg.grad_theta[0] == Catch::Approx(0.7 * ex2 - 1.0).margin(1e-10));

    // theta = 0: loss exactly 0, gradient exactly -1
    LinearScore1D sc0(0.0);
    auto lg0 = score_matching_loss(sc0, data);
    REQUIRE(lg0.loss == 0.0);
    REQUIRE(lg0.grad_theta[0] == Catch::Approx(-1.0).margin(1e-12));

    // all-zero data: loss = -theta for any theta
    SampleBatch zeros(1, 100);
    LinearScore1D sc2(1.3);
    auto lgz = score_matching_loss(sc2, zeros);
    REQUIRE(lgz.loss == Catch::Approx(-1.3).margin(1e-14));

    // gradient descent recovers theta* = 1/E[x^2] (approx 1 on N(0,1) data)
    double theta = 0.0;
    for (int k = 0; k < 400; ++k) {
        LinearScore1D cur(theta);
        auto g2 = score_matching_loss(cur, data);
        theta -= 0.2 * g2.grad_theta[0];
    }
    REQUIRE(theta == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("score matching gradients match finite differences", "[divergences]") {
    GaussianDiag g2 = GaussianDiag::standard(2);
    RngStream s(17, 0);
    auto data = sample_batch(g2, 64, s);

    RngStream si(18, 0);
    MlpScore ms(Mlp::random_init({2, 6, 5, 2}, si, 0.7));
    auto lg = score_matching_loss(ms, data);
    Vec th = ms.params();
    auto f = [&](std::span<const double> q) {
        MlpScore m2 = ms;
        m2.set_params(q);
        return score_matching_loss(m2, data).loss;
    };
    Vec fd = finite_diff_grad(f, th, 1e-5);
    for (int i = 0; i < ms.param_count(); ++i)
        REQUIRE(lg.grad_theta[i] ==
                Catch::Approx(fd[i]).epsilon(1e-3).margin(1e-7));

    // and the 1D linear family
    RngStream s2(19, 0);
    auto d1 = sample_batch(GaussianDiag::standard(1), 128, s2);
    LinearScore1D lin(0.4);
    auto lgl = score_matching_loss(lin, d1);
    Vec thl{0.4};
    auto fl = [&](std::span<const double> q) {
        LinearScore1D l2(q[0]);
        return score_matching_loss(l2, d1).loss;
    };
    Vec fdl = finite_diff_grad(fl, thl, 1e-5);
    REQUIRE(lgl.grad_theta[0] == Catch::Approx(fdl[0]).epsilon(1e-4));
}

TEST_CASE("nce loss at the symmetric point", "[divergences]") {
    // U the normalized mixture energy, noise the identical mixture, log Z
    // parameter 0: f(x) = 0 everywhere, so the loss is exactly 2 log 2 and
    // the log Z gradient vanishes identically.
    MixtureEnergy1D U(0.4);
    GaussianMixture1D noise = U.density();
    RngStream s(20, 0);
    auto data = sample_batch(noise, 500, s);
    auto nsamp = sample_batch(noise, 700, s);
    auto r = nce_loss(U, 0.0, noise, data, nsamp);
    REQUIRE(r.loss == Catch::Approx(2.0 * std::log(2.0)).margin(1e-12));
    REQUIRE(r.grad_log_z == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("nce gradients match finite differences", "[divergences]") {
    QuadraticEnergy U({0.3}, {std::log(1.5)});
    GaussianDiag noise({0.0}, {4.0});
    RngStream s(21, 0);
    auto data = sample_batch(GaussianDiag({0.2}, {1.2}), 200, s);
    auto nsamp = sample_batch(noise, 300, s);

    const double lz = 0.8;
    auto r = nce_loss(U, lz, noise, data, nsamp);

    Vec th = U.params();
    auto f = [&](std::span<const double> q) {
        QuadraticEnergy U2 = U;
        U2.set_params(q);
        return nce_loss(U2, lz, noise, data, nsamp).loss;
    };
    Vec fd = finite_diff_grad(f, th, 1e-6);
    for (int i = 0; i < U.param_count(); ++i)
        REQUIRE(r.grad_theta[i] == Catch::Approx(fd[i]).epsilon(1e-4).margin(1e-8));

    Vec lzv{lz};
    auto fz = [&](std::span<const double> q) {
        return nce_loss(U, q[0], noise, data, nsamp).loss;
    };
    Vec fdz = finite_diff_grad(fz, lzv, 1e-6);
    REQUIRE(r.grad_log_z == Catch::Approx(fdz[0]).epsilon(1e-4).margin(1e-8));
}

TEST_CASE("nce training recovers the true log Z", "[divergences]") {
    // quadratic family vs N(0,4) noise on N(0,1) data: the trained log Z
    // parameter lands within 0.05 of (1/2) log(2 pi)
    QuadraticEnergy U({0.5}, {std::log(2.0)});
    GaussianDiag noise({0.0}, {4.0});
    GaussianDiag target = GaussianDiag::standard(1);
    RngStream s(22, 0);
    auto data = sample_batch(target, 20000, s);
    auto nsamp = sample_batch(noise, 20000, s);

    Vec ext = U.params();
    ext.push_back(0.0);  // trailing slot: log Z parameter
    TrainConfig cfg;
    cfg.optimizer = OptKind::adam;
    cfg.learning_rate = 0.05;
    AdamState adam;
    for (int k = 0; k < 400; ++k) {
        U.set_params(std::span<const double>(ext.data(), ext.size() - 1));
        auto r = nce_loss(U, ext.back(), noise, data, nsamp);
        Vec g(ext.size());
        for (std::size_t i = 0; i + 1 < ext.size(); ++i) g[i] = -r.grad_theta[i];
        g.back() = -r.grad_log_z;  // ascent on -loss
        optimizer_step(ext, g, cfg, adam);
    }
    REQUIRE(ext.back() == Catch::Approx(kHalfLog2Pi).margin(0.05));
    REQUIRE(ext[0] == Catch::Approx(0.0).margin(0.05));           // mu
    REQUIRE(std::exp(ext[1]) == Catch::Approx(1.0).margin(0.1));  // sigma^2
}
