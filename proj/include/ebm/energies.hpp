#pragma once

// Concrete EnergyModel families with exact gradients in x and theta, plus the
// discrete Ising/Hopfield energy with Hebbian storage and synchronous
// retrieval dynamics.

#include "ebm/core.hpp"
#include "ebm/densities.hpp"
#include "ebm/mlp.hpp"

namespace ebm {

// U(x) = sum_i (x_i - mu_i)^2 / (2 sigma2_i), theta = (mu, log sigma2).
// Boltzmann density is the diagonal Gaussian; log Z = sum (1/2) log(2 pi s2).
class QuadraticEnergy final : public EnergyModel {
public:
    QuadraticEnergy(Vec mu, Vec log_sigma2)
        : mu_(std::move(mu)), ls2_(std::move(log_sigma2)) {
        if (mu_.empty() || mu_.size() != ls2_.size())
            fail_config("QuadraticEnergy: mu/log_sigma2 size mismatch");
    }
    static QuadraticEnergy standard(int d) {
        return QuadraticEnergy(Vec(d, 0.0), Vec(d, 0.0));
    }

    int dim() const override { return int(mu_.size()); }
    int param_count() const override { return 2 * dim(); }

    double energy(std::span<const double> x) const override {
        double u = 0.0;
        for (std::size_t i = 0; i < mu_.size(); ++i) {
            double r = x[i] - mu_[i];
            u += r * r / (2.0 * std::exp(ls2_[i]));
        }
        return u;
    }
    using EnergyModel::grad_x;
    void grad_x(std::span<const double> x, std::span<double> out) const override {
        for (std::size_t i = 0; i < mu_.size(); ++i)
            out[i] = (x[i] - mu_[i]) / std::exp(ls2_[i]);
    }
    double energy_grad_x(std::span<const double> x,
                         std::span<double> gout) const override {
        double u = 0.0;
        for (std::size_t i = 0; i < mu_.size(); ++i) {
            double inv = std::exp(-ls2_[i]);
            double r = x[i] - mu_[i];
            gout[i] = r * inv;
            u += 0.5 * r * r * inv;
        }
        return u;
    }
    // dU/dmu_i = -(x_i-mu_i)/s2_i; dU/dlog s2_i = -(x_i-mu_i)^2/(2 s2_i)
    void grad_theta_accum(std::span<const double> x, double w,
                          std::span<double> acc) const override {
        int d = dim();
        for (int i = 0; i < d; ++i) {
            double inv = std::exp(-ls2_[i]);
            double r = x[i] - mu_[i];
            acc[i] += w * (-r * inv);
            acc[d + i] += w * (-0.5 * r * r * inv);
        }
    }

    Vec params() const override {
        Vec th(mu_);
        th.insert(th.end(), ls2_.begin(), ls2_.end());
        return th;
    }
    void set_params(std::span<const double> th) override {
        if (int(th.size()) != param_count()) fail_config("QuadraticEnergy: bad theta size");
        int d = dim();
        for (int i = 0; i < d; ++i) mu_[i] = th[i];
        for (int i = 0; i < d; ++i) ls2_[i] = th[d + i];
    }

    double log_Z() const {
        double lz = 0.0;
        for (double l : ls2_) lz += 0.5 * (kLog2Pi + l);
        return lz;
    }
    Vec sigma2() const {
        Vec s(ls2_.size());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::exp(ls2_[i]);
        return s;
    }
    GaussianDiag density() const { return GaussianDiag(mu_, sigma2()); }

private:
    Vec mu_, ls2_;
};

// U(x) = -log[ s(z) N(x;-5,1) + (1-s(z)) N(x;5,1) ], theta = (z).
// exp(-U) is the normalized bimodal mixture, so log Z = 0 exactly.
class MixtureEnergy1D final : public EnergyModel {
public:
    explicit MixtureEnergy1D(double z) : z_(z) {
        if (!std::isfinite(z)) fail_config("MixtureEnergy1D: z must be finite");
    }

    int dim() const override { return 1; }
    int param_count() const override { return 1; }
    double z() const { return z_; }

    double energy(std::span<const double> x) const override {
        double l1, l2;
        return -log_mix(x[0], l1, l2);
    }
    using EnergyModel::grad_x;
    void grad_x(std::span<const double> x, std::span<double> out) const override {
        double l1, l2;
        double lp = log_mix(x[0], l1, l2);
        double r1 = std::exp(l1 - lp), r2 = std::exp(l2 - lp);
        out[0] = r1 * (x[0] + 5.0) + r2 * (x[0] - 5.0);
    }
    // dU/dz = -p(1-p)(N1 - N2)/rho with p = sigmoid(z). Evaluated relative to
    // the larger component so the ratio stays finite in the far tails.
    void grad_theta_accum(std::span<const double> x, double w,
                          std::span<double> acc) const override {
        double p = sigmoid(z_);
        double la = gauss_log_pdf_1d(x[0], -5.0, 1.0);
        double lb = gauss_log_pdf_1d(x[0], 5.0, 1.0);
        double m = std::max(la, lb);
        double ea = std::exp(la - m), eb = std::exp(lb - m);
        acc[0] += w * (-p * (1.0 - p) * (ea - eb) / (p * ea + (1.0 - p) * eb));
    }

    Vec params() const override { return {z_}; }
    void set_params(std::span<const double> th) override {
        if (th.size() != 1) fail_config("MixtureEnergy1D: bad theta size");
        if (!std::isfinite(th[0])) fail_config("MixtureEnergy1D: z must be finite");
        z_ = th[0];
    }

    GaussianMixture1D density() const { return mixture_from_z(z_); }

private:
    double log_mix(double x, double& l1, double& l2) const {
        double p = sigmoid(z_);
        l1 = std::log(p) + gauss_log_pdf_1d(x, -5.0, 1.0);
        l2 = std::log1p(-p) + gauss_log_pdf_1d(x, 5.0, 1.0);
        double m = std::max(l1, l2);
        return m + std::log(std::exp(l1 - m) + std::exp(l2 - m));
    }

    double z_;
};

// U(x) = MLP(x) + c |x|^2 with c > 0. The confinement term keeps exp(-U)
// integrable no matter what the network does; theta is the flattened MLP.
class MlpEnergy final : public EnergyModel {
public:
    MlpEnergy(Mlp net, double confinement = 1e-2)
        : net_(std::move(net)), c_(confinement) {
        if (net_.out() != 1) fail_config("MlpEnergy: network must have scalar output");
        if (!(c_ > 0)) fail_config("MlpEnergy: confinement must be positive");
    }
    static MlpEnergy random_init(int d, RngStream& stream, int h1 = 32, int h2 = 32,
                                 double scale = 0.1, double confinement = 1e-2) {
        return MlpEnergy(Mlp::random_init({d, h1, h2, 1}, stream, scale), confinement);
    }

    int dim() const override { return net_.in(); }
    int param_count() const override { return net_.param_count(); }
    double confinement() const { return c_; }
    const Mlp& net() const { return net_; }

    double energy(std::span<const double> x) const override {
        Mlp::Cache c;
        net_.forward(x, c);
        return c.y[0] + c_ * norm2_sq(x);
    }
    using EnergyModel::grad_x;
    void grad_x(std::span<const double> x, std::span<double> out) const override {
        Mlp::Cache c;
        net_.forward(x, c);
        std::fill(out.begin(), out.end(), 0.0);
        double dy[1] = {1.0};
        net_.backward(c, dy, 1.0, {}, out);
        for (std::size_t i = 0; i < x.size(); ++i) out[i] += 2.0 * c_ * x[i];
    }
    double energy_grad_x(std::span<const double> x,
                         std::span<double> gout) const override {
        Mlp::Cache c;
        net_.forward(x, c);
        std::fill(gout.begin(), gout.end(), 0.0);
        double dy[1] = {1.0};
        net_.backward(c, dy, 1.0, {}, gout);
        for (std::size_t i = 0; i < x.size(); ++i) gout[i] += 2.0 * c_ * x[i];
        return c.y[0] + c_ * norm2_sq(x);
    }
    void grad_theta_accum(std::span<const double> x, double w,
                          std::span<double> acc) const override {
        Mlp::Cache c;
        net_.forward(x, c);
        double dy[1] = {1.0};
        net_.backward(c, dy, w, acc, {});
    }

    Vec params() const override { return net_.params(); }
    void set_params(std::span<const double> th) override { net_.set_params(th); }

private:
    Mlp net_;
    double c_;
};

// U + shift: probes that nothing downstream depends on the energy's zero.
class ShiftedEnergy final : public EnergyModel {
public:
    ShiftedEnergy(const EnergyModel& base, double shift) : base_(base), shift_(shift) {}

    int dim() const override { return base_.dim(); }
    int param_count() const override { return base_.param_count(); }
    double energy(std::span<const double> x) const override {
        return base_.energy(x) + shift_;
    }
    using EnergyModel::grad_x;
    void grad_x(std::span<const double> x, std::span<double> out) const override {
        base_.grad_x(x, out);
    }
    double energy_grad_x(std::span<const double> x,
                         std::span<double> gout) const override {
        return base_.energy_grad_x(x, gout) + shift_;
    }
    void grad_theta_accum(std::span<const double> x, double w,
                          std::span<double> acc) const override {
        base_.grad_theta_accum(x, w, acc);
    }
    Vec params() const override { return base_.params(); }
    void set_params(std::span<const double>) override {
        fail_config("ShiftedEnergy: parameters are owned by the base model");
    }

private:
    const EnergyModel& base_;
    double shift_;
};

// ---------------------------------------------------------------------------
// Ising/Hopfield. Spins live in {-1,+1}; couplings are symmetric with zero
// diagonal. The half factor below compensates the double count of each pair
// when summing over the full symmetric matrix.

using SpinVec = std::vector<int>;

struct HopfieldNet {
    int n = 0;
    Vec J;  // n*n, row-major, symmetric, zero diagonal
    Vec h;  // bias field
    double mu = 1.0;

    static HopfieldNet zeros(int n) {
        if (n < 1) fail_config("HopfieldNet: n must be >= 1");
        HopfieldNet net;
        net.n = n;
        net.J.assign(std::size_t(n) * n, 0.0);
        net.h.assign(n, 0.0);
        return net;
    }
};

inline void require_spins(const SpinVec& x) {
    for (int s : x)
        if (s != 1 && s != -1) fail_config("spin vector entries must be +1 or -1");
}

// U(x) = -1/2 sum_{i != j} J_ij x_i x_j - mu sum_j h_j x_j
inline double ising_energy(const HopfieldNet& net, const SpinVec& x) {
    if (int(x.size()) != net.n) fail_config("ising_energy: size mismatch");
    require_spins(x);
    double pair = 0.0;
    for (int i = 0; i < net.n; ++i) {
        const double* row = net.J.data() + std::size_t(i) * net.n;
        double s = 0.0;
        for (int j = 0; j < net.n; ++j) s += row[j] * x[j];
        pair += s * double(x[i]);
    }
    double field = 0.0;
    for (int j = 0; j < net.n; ++j) field += net.h[j] * double(x[j]);
    return -0.5 * pair - net.mu * field;
}

// J_ij = (1/n_patterns) sum_l y_i y_j, zero diagonal.
inline Vec hebbian_couplings(const std::vector<SpinVec>& patterns) {
    if (patterns.empty()) fail_config("hebbian_couplings: need at least one pattern");
    int n = int(patterns[0].size());
    for (const auto& p : patterns) {
        if (int(p.size()) != n) fail_config("hebbian_couplings: ragged pattern lengths");
        require_spins(p);
    }
    Vec J(std::size_t(n) * n, 0.0);
    for (const auto& p : patterns)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j) J[std::size_t(i) * n + j] += double(p[i] * p[j]);
    double inv = 1.0 / double(patterns.size());
    for (double& v : J) v *= inv;
    return J;
}

inline HopfieldNet hopfield_store(const std::vector<SpinVec>& patterns) {
    HopfieldNet net = HopfieldNet::zeros(int(patterns[0].size()));
    net.J = hebbian_couplings(patterns);
    return net;
}

// One synchronous sweep x -> sgn(Jx + h), with sgn(0) = +1.
inline SpinVec hopfield_step(const HopfieldNet& net, const SpinVec& x) {
    if (int(x.size()) != net.n) fail_config("hopfield_step: size mismatch");
    SpinVec out(net.n);
    for (int i = 0; i < net.n; ++i) {
        const double* row = net.J.data() + std::size_t(i) * net.n;
        double s = net.h[i];
        for (int j = 0; j < net.n; ++j) s += row[j] * double(x[j]);
        out[i] = s >= 0.0 ? 1 : -1;
    }
    return out;
}

struct HopfieldRetrieval {
    SpinVec x;
    int iterations = 0;
    bool converged = false;
};

// Iterate the synchronous map until a fixed point or max_iter sweeps.
// iterations counts state-changing sweeps; a stored cue reports 0.
inline HopfieldRetrieval hopfield_retrieve(const HopfieldNet& net, const SpinVec& x0,
                                           int max_iter) {
    if (max_iter < 1) fail_config("hopfield_retrieve: max_iter must be >= 1");
    HopfieldRetrieval r;
    r.x = x0;
    for (int k = 0; k < max_iter; ++k) {
        SpinVec next = hopfield_step(net, r.x);
        if (next == r.x) {
            r.iterations = k;
            r.converged = true;
            return r;
        }
        r.x = std::move(next);
    }
    r.iterations = max_iter;
    r.converged = hopfield_step(net, r.x) == r.x;
    return r;
}

inline double spin_overlap(const SpinVec& a, const SpinVec& b) {
    if (a.size() != b.size() || a.empty()) fail_config("spin_overlap: size mismatch");
    long s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += long(a[i]) * b[i];
    return double(s) / double(a.size());
}

inline SpinVec random_pattern(int n, RngStream& stream) {
    SpinVec p(n);
    for (int i = 0; i < n; ++i) p[i] = stream.uniform() < 0.5 ? -1 : 1;
    return p;
}

// Flip exactly floor(frac * n) distinct spins, chosen without replacement.
inline SpinVec corrupt_pattern(const SpinVec& y, double frac, RngStream& stream) {
    if (frac < 0.0 || frac > 1.0) fail_config("corrupt_pattern: frac must be in [0,1]");
    SpinVec x = y;
    int n = int(y.size());
    int flips = int(frac * n);
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int k = 0; k < flips; ++k) {
        std::size_t j = k + stream.uniform_index(n - k);
        std::swap(idx[k], idx[j]);
        x[idx[k]] = -x[idx[k]];
    }
    return x;
}

}  // namespace ebm
