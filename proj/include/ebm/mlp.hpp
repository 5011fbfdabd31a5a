#pragma once

// Two-hidden-layer tanh perceptron with hand-written gradients. One class
// serves every learned map in the library: scalar energies (out=1), score
// heads (out=in), and time-dependent fields (input (x,t)). Besides the usual
// reverse pass it exposes a forward (tangent) pass for exact Jacobian traces
// and a forward-over-reverse pass for the theta-gradient of that trace, which
// score matching needs.

#include "ebm/core.hpp"

namespace ebm {

struct MlpShape {
    int in = 1, h1 = 32, h2 = 32, out = 1;
};

class Mlp {
public:
    explicit Mlp(MlpShape s) : s_(s) {
        if (s.in < 1 || s.h1 < 1 || s.h2 < 1 || s.out < 1)
            fail_config("Mlp: all widths must be >= 1");
        o_w1_ = 0;
        o_b1_ = o_w1_ + s.h1 * s.in;
        o_w2_ = o_b1_ + s.h1;
        o_b2_ = o_w2_ + s.h2 * s.h1;
        o_w3_ = o_b2_ + s.h2;
        o_b3_ = o_w3_ + s.out * s.h2;
        theta_.assign(std::size_t(o_b3_ + s.out), 0.0);
    }

    // Gaussian fan-in init, biases zero. `scale` shrinks every weight; small
    // scales keep tanh near its linear regime (used when U must start close
    // to its quadratic confinement).
    static Mlp random_init(MlpShape s, RngStream& stream, double scale = 1.0) {
        Mlp m(s);
        auto fill = [&](int off, int rows, int cols) {
            double sd = scale / std::sqrt(double(cols));
            for (int i = 0; i < rows * cols; ++i)
                m.theta_[off + i] = sd * stream.normal();
        };
        fill(m.o_w1_, s.h1, s.in);
        fill(m.o_w2_, s.h2, s.h1);
        fill(m.o_w3_, s.out, s.h2);
        return m;
    }

    const MlpShape& shape() const { return s_; }
    int in() const { return s_.in; }
    int out() const { return s_.out; }
    int param_count() const { return int(theta_.size()); }
    const Vec& params() const { return theta_; }
    void set_params(std::span<const double> th) {
        if (th.size() != theta_.size()) fail_config("Mlp: wrong parameter count");
        theta_.assign(th.begin(), th.end());
    }
    double& param(int i) { return theta_[i]; }

    struct Cache {
        Vec x, z1, z2, y;
    };

    void forward(std::span<const double> x, Cache& c) const {
        if (int(x.size()) != s_.in) fail_config("Mlp: input size mismatch");
        c.x.assign(x.begin(), x.end());
        c.z1.resize(s_.h1);
        c.z2.resize(s_.h2);
        c.y.resize(s_.out);
        affine(W1(), b1(), x, c.z1);
        for (double& v : c.z1) v = std::tanh(v);
        affine(W2(), b2(), c.z1, c.z2);
        for (double& v : c.z2) v = std::tanh(v);
        affine(W3(), b3(), c.z2, c.y);
    }

    void forward(std::span<const double> x, std::span<double> y) const {
        Cache c;
        forward(x, c);
        std::copy(c.y.begin(), c.y.end(), y.begin());
    }

    // Reverse pass from output cotangent dy. Accumulates w * dtheta into
    // gtheta and w * dx into gx; either span may be empty to skip it.
    void backward(const Cache& c, std::span<const double> dy, double w,
                  std::span<double> gtheta, std::span<double> gx) const {
        Vec da2(s_.h2), da1(s_.h1);
        // layer 3
        if (!gtheta.empty()) {
            for (int r = 0; r < s_.out; ++r) {
                double d = w * dy[r];
                double* gw = gtheta.data() + o_w3_ + r * s_.h2;
                for (int k = 0; k < s_.h2; ++k) gw[k] += d * c.z2[k];
                gtheta[o_b3_ + r] += d;
            }
        }
        mat_t_vec(W3(), dy, s_.out, s_.h2, da2);
        for (int k = 0; k < s_.h2; ++k) da2[k] *= 1.0 - c.z2[k] * c.z2[k];
        // layer 2
        if (!gtheta.empty()) {
            for (int r = 0; r < s_.h2; ++r) {
                double d = w * da2[r];
                double* gw = gtheta.data() + o_w2_ + r * s_.h1;
                for (int k = 0; k < s_.h1; ++k) gw[k] += d * c.z1[k];
                gtheta[o_b2_ + r] += d;
            }
        }
        mat_t_vec(W2(), da2, s_.h2, s_.h1, da1);
        for (int k = 0; k < s_.h1; ++k) da1[k] *= 1.0 - c.z1[k] * c.z1[k];
        // layer 1
        if (!gtheta.empty()) {
            for (int r = 0; r < s_.h1; ++r) {
                double d = w * da1[r];
                double* gw = gtheta.data() + o_w1_ + r * s_.in;
                for (int k = 0; k < s_.in; ++k) gw[k] += d * c.x[k];
                gtheta[o_b1_ + r] += d;
            }
        }
        if (!gx.empty()) {
            Vec dx(s_.in);
            mat_t_vec(W1(), da1, s_.h1, s_.in, dx);
            for (int k = 0; k < s_.in; ++k) gx[k] += w * dx[k];
        }
    }

    struct Tangent {
        Vec tz1, tz2, ty;
    };

    // Forward-mode pass: directional derivative of the output along vx.
    void jvp(const Cache& c, std::span<const double> vx, Tangent& t) const {
        t.tz1.resize(s_.h1);
        t.tz2.resize(s_.h2);
        t.ty.resize(s_.out);
        mat_vec(W1(), vx, s_.h1, s_.in, t.tz1);
        for (int k = 0; k < s_.h1; ++k) t.tz1[k] *= 1.0 - c.z1[k] * c.z1[k];
        mat_vec(W2(), t.tz1, s_.h2, s_.h1, t.tz2);
        for (int k = 0; k < s_.h2; ++k) t.tz2[k] *= 1.0 - c.z2[k] * c.z2[k];
        mat_vec(W3(), t.tz2, s_.out, s_.h2, t.ty);
    }

    // tr dJ/dx of the network map, exact, via one tangent pass per coordinate.
    // Requires out == in.
    double jacobian_trace(const Cache& c) const {
        require_square();
        Tangent t;
        Vec e(s_.in, 0.0);
        double tr = 0.0;
        for (int i = 0; i < s_.in; ++i) {
            e[i] = 1.0;
            jvp(c, e, t);
            tr += t.ty[i];
            e[i] = 0.0;
        }
        return tr;
    }

    // gtheta += w * d(jacobian_trace)/dtheta. Reverse differentiation of the
    // tangent pass: adjoints flow through both the tangent variables and, via
    // the tanh derivative factors phi'(a) = 1 - z^2 (so phi'' * t_a =
    // -2 z * t_z), back into the primal activations.
    void trace_grad_theta(const Cache& c, double w, std::span<double> gtheta) const {
        require_square();
        Tangent t;
        Vec e(s_.in, 0.0);
        Vec bt_z2(s_.h2), bt_a2(s_.h2), ba2(s_.h2);
        Vec bt_z1(s_.h1), bt_a1(s_.h1), ba1(s_.h1), bz1(s_.h1);
        for (int i = 0; i < s_.in; ++i) {
            e[i] = 1.0;
            jvp(c, e, t);

            // seed: bar(t_y) = e_i; edge t_y = W3 t_z2
            const double* w3row = W3().data() + std::size_t(i) * s_.h2;
            for (int k = 0; k < s_.h2; ++k) {
                gtheta[o_w3_ + i * s_.h2 + k] += w * t.tz2[k];
                bt_z2[k] = w3row[k];
            }
            // edge t_z2 = phi'(a2) . t_a2
            for (int k = 0; k < s_.h2; ++k) {
                bt_a2[k] = (1.0 - c.z2[k] * c.z2[k]) * bt_z2[k];
                ba2[k] = -2.0 * c.z2[k] * t.tz2[k] * bt_z2[k];
            }
            // edge t_a2 = W2 t_z1
            for (int r = 0; r < s_.h2; ++r) {
                double d = w * bt_a2[r];
                double* gw = gtheta.data() + o_w2_ + r * s_.h1;
                for (int k = 0; k < s_.h1; ++k) gw[k] += d * t.tz1[k];
            }
            mat_t_vec(W2(), bt_a2, s_.h2, s_.h1, bt_z1);
            // edge t_z1 = phi'(a1) . t_a1
            for (int k = 0; k < s_.h1; ++k) {
                bt_a1[k] = (1.0 - c.z1[k] * c.z1[k]) * bt_z1[k];
                ba1[k] = -2.0 * c.z1[k] * t.tz1[k] * bt_z1[k];
            }
            // edge t_a1 = W1 e_i: bar(W1) column i
            for (int r = 0; r < s_.h1; ++r)
                gtheta[o_w1_ + r * s_.in + i] += w * bt_a1[r];

            // primal chains: a2 = W2 z1 + b2, z1 = phi(a1), a1 = W1 x + b1
            for (int r = 0; r < s_.h2; ++r) {
                double d = w * ba2[r];
                double* gw = gtheta.data() + o_w2_ + r * s_.h1;
                for (int k = 0; k < s_.h1; ++k) gw[k] += d * c.z1[k];
                gtheta[o_b2_ + r] += d;
            }
            mat_t_vec(W2(), ba2, s_.h2, s_.h1, bz1);
            for (int k = 0; k < s_.h1; ++k)
                ba1[k] += (1.0 - c.z1[k] * c.z1[k]) * bz1[k];
            for (int r = 0; r < s_.h1; ++r) {
                double d = w * ba1[r];
                double* gw = gtheta.data() + o_w1_ + r * s_.in;
                for (int k = 0; k < s_.in; ++k) gw[k] += d * c.x[k];
                gtheta[o_b1_ + r] += d;
            }
            e[i] = 0.0;
        }
    }

    std::span<const double> W1() const { return {theta_.data() + o_w1_, std::size_t(s_.h1 * s_.in)}; }
    std::span<const double> b1() const { return {theta_.data() + o_b1_, std::size_t(s_.h1)}; }
    std::span<const double> W2() const { return {theta_.data() + o_w2_, std::size_t(s_.h2 * s_.h1)}; }
    std::span<const double> b2() const { return {theta_.data() + o_b2_, std::size_t(s_.h2)}; }
    std::span<const double> W3() const { return {theta_.data() + o_w3_, std::size_t(s_.out * s_.h2)}; }
    std::span<const double> b3() const { return {theta_.data() + o_b3_, std::size_t(s_.out)}; }
    int b3_offset() const { return o_b3_; }

private:
    void require_square() const {
        if (s_.in != s_.out) fail_config("Mlp: Jacobian trace needs out == in");
    }
    static void mat_vec(std::span<const double> W, std::span<const double> v,
                        int rows, int cols, std::span<double> out) {
        for (int r = 0; r < rows; ++r) {
            const double* row = W.data() + std::size_t(r) * cols;
            double s = 0.0;
            for (int k = 0; k < cols; ++k) s += row[k] * v[k];
            out[r] = s;
        }
    }
    static void mat_t_vec(std::span<const double> W, std::span<const double> v,
                          int rows, int cols, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        for (int r = 0; r < rows; ++r) {
            const double* row = W.data() + std::size_t(r) * cols;
            for (int k = 0; k < cols; ++k) out[k] += row[k] * v[r];
        }
    }
    void affine(std::span<const double> W, std::span<const double> b,
                std::span<const double> v, std::span<double> out) const {
        mat_vec(W, v, int(b.size()), int(v.size()), out);
        for (std::size_t k = 0; k < b.size(); ++k) out[k] += b[k];
    }

    MlpShape s_;
    int o_w1_, o_b1_, o_w2_, o_b2_, o_w3_, o_b3_;
    Vec theta_;
};

}  // namespace ebm
