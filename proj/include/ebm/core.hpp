#pragma once

// Core types shared by every module: the deterministic counter-based RNG,
// walker ensembles with log-weights, the abstract energy interface, and the
// small numerics toolbox (pairwise sums, log-sum-exp, ESS, finite differences).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ebm {

using Vec = std::vector<double>;

[[noreturn]] inline void fail_numeric(const std::string& msg) {
    throw std::runtime_error(msg);
}
[[noreturn]] inline void fail_config(const std::string& msg) {
    throw std::invalid_argument(msg);
}

inline bool all_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

inline void require_finite(std::span<const double> x, const char* what) {
    if (!all_finite(x)) fail_numeric(std::string("non-finite value in ") + what);
}

inline void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) fail_numeric(std::string("non-finite value in ") + what);
}

// ---------------------------------------------------------------------------
// RNG: stateless counter-based streams.
//
// Output n of stream s under seed g is a pure function of (g, s, n): a
// SplitMix64-style finalizer applied to base(g, s) + (n+1)*GOLDEN. Streams
// never share state, so advancing one can never perturb another, and any
// walker's trajectory is reproducible regardless of how work is scheduled.

namespace detail {
inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}
}  // namespace detail

class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id), counter_(0) {
        base_ = detail::mix64(seed + detail::kGolden) ^
                detail::mix64(stream_id * 0xda942042e4dd58b5ull + detail::kGolden);
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        std::uint64_t z = base_ + (++counter_) * detail::kGolden;
        return detail::mix64(z);
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Index in [0, n). Modulo bias is ~n/2^64, irrelevant at desk scale.
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) fail_config("uniform_index: n must be positive");
        return std::size_t(next_u64() % n);
    }

    // Standard normal via Box-Muller (cosine branch). Consumes exactly two
    // uniform draws per call so the counter advance is input-independent.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]: keeps log(u1) finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    void normal_fill(std::span<double> out) {
        for (double& v : out) v = normal();
    }

private:
    std::uint64_t seed_, stream_id_, counter_, base_;
};

// Reserved stream ids for non-walker consumers (data generation, trainer
// bookkeeping such as resampling, model initialization). Walker i always owns
// stream id i, so these must stay far above any desk-scale ensemble size.
inline constexpr std::uint64_t kDataStreamId = (1ull << 40);
inline constexpr std::uint64_t kTrainerStreamId = kDataStreamId + 1;
inline constexpr std::uint64_t kModelInitStreamId = kDataStreamId + 2;

// ---------------------------------------------------------------------------
// Order-fixed reductions. Pairwise summation over an index-ordered buffer is
// both more accurate than naive accumulation and, because the reduction tree
// depends only on the element count, bit-identical for any worker count.

inline double pairwise_sum(std::span<const double> x) {
    if (x.size() <= 16) {
        double s = 0.0;
        for (double v : x) s += v;
        return s;
    }
    std::size_t half = x.size() / 2;
    return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

inline double pairwise_mean(std::span<const double> x) {
    if (x.empty()) fail_config("pairwise_mean: empty input");
    return pairwise_sum(x) / double(x.size());
}

inline double log_sum_exp(std::span<const double> x) {
    if (x.empty()) fail_config("log_sum_exp: empty input");
    double m = *std::max_element(x.begin(), x.end());
    std::vector<double> e(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) e[i] = std::exp(x[i] - m);
    return m + std::log(pairwise_sum(e));
}

inline double log_mean_exp(std::span<const double> x) {
    return log_sum_exp(x) - std::log(double(x.size()));
}

// ESS = (sum w)^2 / sum w^2 with w_i = exp(lw_i - max lw). Always in [1, N].
inline double effective_sample_size(std::span<const double> log_weights) {
    if (log_weights.empty()) fail_config("effective_sample_size: empty input");
    require_finite(log_weights, "effective_sample_size");
    double m = *std::max_element(log_weights.begin(), log_weights.end());
    std::vector<double> w(log_weights.size()), w2(log_weights.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::exp(log_weights[i] - m);
        w2[i] = w[i] * w[i];
    }
    double s = pairwise_sum(w);
    return s * s / pairwise_sum(w2);
}

// ---------------------------------------------------------------------------
// Central finite differences, the gradient oracle for every analytic
// derivative in the test suites. Step per coordinate: h * (1 + |x_i|).

inline Vec finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                            std::span<const double> x, double h = 1e-5) {
    if (h <= 0) fail_config("finite_diff_grad: h must be positive");
    Vec g(x.size());
    Vec xp(x.begin(), x.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double hi = h * (1.0 + std::abs(x[i]));
        double orig = xp[i];
        xp[i] = orig + hi;
        double fp = f(xp);
        xp[i] = orig - hi;
        double fm = f(xp);
        xp[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            fail_numeric("finite_diff_grad: non-finite f at coordinate " +
                         std::to_string(i));
        g[i] = (fp - fm) / (2.0 * hi);
    }
    return g;
}

// ---------------------------------------------------------------------------
// EnergyModel: the parametric U_theta every sampler, divergence and trainer
// is written against. Implementations must provide exact gradients in both x
// and theta; grad_theta_accum exists so hot loops can accumulate weighted
// parameter gradients without allocating.

class EnergyModel {
public:
    virtual ~EnergyModel() = default;

    virtual int dim() const = 0;
    virtual int param_count() const = 0;

    virtual double energy(std::span<const double> x) const = 0;
    virtual void grad_x(std::span<const double> x, std::span<double> out) const = 0;
    // acc += w * dU/dtheta (x)
    virtual void grad_theta_accum(std::span<const double> x, double w,
                                  std::span<double> acc) const = 0;

    virtual Vec params() const = 0;
    virtual void set_params(std::span<const double> theta) = 0;

    // Combined evaluation; families override when one pass serves both.
    virtual double energy_grad_x(std::span<const double> x,
                                 std::span<double> gout) const {
        grad_x(x, gout);
        return energy(x);
    }

    Vec grad_x(std::span<const double> x) const {
        Vec g(dim());
        grad_x(x, g);
        return g;
    }
    Vec grad_theta(std::span<const double> x) const {
        Vec g(param_count(), 0.0);
        grad_theta_accum(x, 1.0, g);
        return g;
    }
};

// ---------------------------------------------------------------------------
// Row-major sample matrix: data batches, generated-sample batches.

struct SampleBatch {
    int dim = 1;
    std::vector<double> values;  // rows * dim

    SampleBatch() = default;
    SampleBatch(int d, std::size_t n) : dim(d), values(std::size_t(d) * n, 0.0) {}

    std::size_t rows() const { return dim > 0 ? values.size() / dim : 0; }
    std::span<double> row(std::size_t i) {
        return {values.data() + i * dim, std::size_t(dim)};
    }
    std::span<const double> row(std::size_t i) const {
        return {values.data() + i * dim, std::size_t(dim)};
    }
};

// ---------------------------------------------------------------------------
// WalkerEnsemble: positions, Jarzynski log-weights A, one RNG stream per
// walker. Weights start at zero (A_0 = 0).

struct WalkerEnsemble {
    int dim = 1;
    std::vector<double> positions;    // N * dim, row-major
    std::vector<double> log_weights;  // A_i
    std::vector<RngStream> streams;
    std::uint64_t seed = 0;

    static WalkerEnsemble zeros(std::size_t n, int d, std::uint64_t seed) {
        if (d < 1 || n < 1) fail_config("WalkerEnsemble: need n >= 1, d >= 1");
        WalkerEnsemble e;
        e.dim = d;
        e.seed = seed;
        e.positions.assign(n * std::size_t(d), 0.0);
        e.log_weights.assign(n, 0.0);
        e.streams.reserve(n);
        for (std::size_t i = 0; i < n; ++i) e.streams.emplace_back(seed, i);
        return e;
    }

    std::size_t size() const { return log_weights.size(); }
    std::span<double> walker(std::size_t i) {
        return {positions.data() + i * dim, std::size_t(dim)};
    }
    std::span<const double> walker(std::size_t i) const {
        return {positions.data() + i * dim, std::size_t(dim)};
    }
};

// ---------------------------------------------------------------------------
// Deterministic parallel mapping. Work is split into fixed-size blocks
// (independent of the worker count); each block writes only its own slots, so
// results are a pure function of the inputs. Reductions then run serially in
// block order.

inline constexpr std::size_t kParallelBlock = 256;

inline void parallel_for(std::size_t n, int n_threads,
                         const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    if (n_threads <= 1) {
        body(0, n);
        return;
    }
    std::size_t n_blocks = (n + kParallelBlock - 1) / kParallelBlock;
    std::size_t workers = std::min<std::size_t>(n_threads, n_blocks);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::vector<std::exception_ptr> errs(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t b = w; b < n_blocks; b += workers) {
                    std::size_t lo = b * kParallelBlock;
                    std::size_t hi = std::min(lo + kParallelBlock, n);
                    body(lo, hi);
                }
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

// Accumulate a p-vector over n items: per-block partials (block size fixed),
// reduced pairwise in block order. Bit-identical for any thread count.
inline void block_accumulate(std::size_t n, std::size_t p, int n_threads,
                             const std::function<void(std::size_t, std::span<double>)>& item,
                             std::span<double> out) {
    if (out.size() != p) fail_config("block_accumulate: bad output size");
    std::size_t n_blocks = std::max<std::size_t>(1, (n + kParallelBlock - 1) / kParallelBlock);
    std::vector<double> partial(n_blocks * p, 0.0);
    parallel_for(n, n_threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            std::size_t b = i / kParallelBlock;
            item(i, {partial.data() + b * p, p});
        }
    });
    std::vector<double> col(n_blocks);
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t b = 0; b < n_blocks; ++b) col[b] = partial[b * p + j];
        out[j] += pairwise_sum(col);
    }
}

// ---------------------------------------------------------------------------
// Small vector helpers used across modules.

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2_sq(std::span<const double> a) { return dot(a, a); }

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace ebm
