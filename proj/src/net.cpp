#include "boltznce/net.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "boltznce/linalg.hpp"

namespace boltznce {

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "silu") return Activation::Silu;
    throw UsageError("unknown activation '" + s + "' (expected \"tanh\" or \"silu\")");
}

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "silu"; }

Mlp Mlp::init(const MlpSpec& spec, Rng& rng) {
    require(spec.x_dim >= 1 && spec.out_dim >= 1, "mlp: dimensions must be positive");
    require(!spec.hidden.empty(), "mlp: need at least one hidden layer");
    Mlp m;
    m.spec = spec;
    std::size_t in = spec.in_dim();
    std::size_t total = 0;
    auto add_layer = [&](std::size_t out) {
        m.dim_in.push_back(in);
        m.dim_out.push_back(out);
        m.w_off.push_back(total);
        total += in * out;
        m.b_off.push_back(total);
        total += out;
        in = out;
    };
    for (auto h : spec.hidden) add_layer(h);
    add_layer(spec.out_dim);
    m.params.assign(total, 0.0);
    const std::size_t L = m.n_layers();
    for (std::size_t l = 0; l < L; ++l) {
        if (l + 1 == L && spec.zero_init_last) break;  // zero head: f == 0 at init
        const double bound = 1.0 / std::sqrt(static_cast<double>(m.dim_in[l]));
        double* w = m.w(l);
        for (std::size_t i = 0; i < m.dim_in[l] * m.dim_out[l]; ++i) w[i] = rng.uniform(-bound, bound);
        double* b = m.b(l);
        for (std::size_t i = 0; i < m.dim_out[l]; ++i) b[i] = rng.uniform(-bound, bound);
    }
    return m;
}

namespace {

void ensure(std::vector<double>& v, std::size_t n) {
    if (v.size() < n) v.resize(n);
}

void ensure_work(const Mlp& m, MlpWork& w, std::size_t batch, bool tangent) {
    const std::size_t H = m.n_layers() - 1;
    w.batch = batch;
    ensure(w.feats, batch * m.spec.in_dim());
    w.a.resize(H);
    w.z.resize(H);
    std::size_t maxw = m.spec.in_dim();
    for (std::size_t l = 0; l < H; ++l) {
        ensure(w.a[l], batch * m.dim_out[l]);
        ensure(w.z[l], batch * m.dim_out[l]);
        maxw = std::max(maxw, m.dim_out[l]);
    }
    maxw = std::max(maxw, m.spec.out_dim);
    ensure(w.r0, batch * maxw);
    ensure(w.r1, batch * maxw);
    if (tangent) {
        w.adot.resize(H);
        w.zdot.resize(H);
        for (std::size_t l = 0; l < H; ++l) {
            ensure(w.adot[l], batch * m.dim_out[l]);
            ensure(w.zdot[l], batch * m.dim_out[l]);
        }
        ensure(w.featdot, batch * m.spec.in_dim());
    }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// phi, phi', phi'' evaluated from the pre-activation a (z = phi(a) cached).
void act_apply(Activation act, const double* a, double* z, std::size_t n) {
    if (act == Activation::Tanh) {
        for (std::size_t i = 0; i < n; ++i) z[i] = std::tanh(a[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) z[i] = a[i] * sigmoid(a[i]);
    }
}

void act_d1(Activation act, const double* a, const double* z, double* fp, std::size_t n) {
    if (act == Activation::Tanh) {
        for (std::size_t i = 0; i < n; ++i) fp[i] = 1.0 - z[i] * z[i];
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const double s = sigmoid(a[i]);
            fp[i] = s * (1.0 + a[i] * (1.0 - s));
        }
    }
}

void act_d2(Activation act, const double* a, const double* z, double* fpp, std::size_t n) {
    if (act == Activation::Tanh) {
        for (std::size_t i = 0; i < n; ++i) fpp[i] = -2.0 * z[i] * (1.0 - z[i] * z[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const double s = sigmoid(a[i]);
            fpp[i] = s * (1.0 - s) * (2.0 + a[i] * (1.0 - 2.0 * s));
        }
    }
}

void layer_affine(const Mlp& m, std::size_t l, const double* in, std::size_t batch, double* out) {
    const std::size_t no = m.dim_out[l];
    const double* b = m.b(l);
    for (std::size_t i = 0; i < batch; ++i) std::copy_n(b, no, out + i * no);
    gemm_nt_acc(in, m.w(l), out, batch, m.dim_in[l], no);
}

}  // namespace

void mlp_forward(const Mlp& m, const double* t, bool shared_t, const double* x, std::size_t batch, MlpWork& w,
                 double* out) {
    ensure_work(m, w, batch, false);
    const std::size_t d = m.spec.x_dim;
    const std::size_t F = m.spec.time_freqs;
    const std::size_t in = m.spec.in_dim();
    // features: [x, sin(k pi t), cos(k pi t)]
    if (shared_t) {
        double emb[64];
        for (std::size_t k = 0; k < F; ++k) {
            const double a = M_PI * static_cast<double>(k + 1) * t[0];
            emb[2 * k] = std::sin(a);
            emb[2 * k + 1] = std::cos(a);
        }
        for (std::size_t i = 0; i < batch; ++i) {
            double* f = w.feats.data() + i * in;
            std::copy_n(x + i * d, d, f);
            std::copy_n(emb, 2 * F, f + d);
        }
    } else {
        for (std::size_t i = 0; i < batch; ++i) {
            double* f = w.feats.data() + i * in;
            std::copy_n(x + i * d, d, f);
            for (std::size_t k = 0; k < F; ++k) {
                const double a = M_PI * static_cast<double>(k + 1) * t[i];
                f[d + 2 * k] = std::sin(a);
                f[d + 2 * k + 1] = std::cos(a);
            }
        }
    }
    const std::size_t H = m.n_layers() - 1;
    const double* cur = w.feats.data();
    for (std::size_t l = 0; l < H; ++l) {
        layer_affine(m, l, cur, batch, w.a[l].data());
        act_apply(m.spec.activation, w.a[l].data(), w.z[l].data(), batch * m.dim_out[l]);
        cur = w.z[l].data();
    }
    layer_affine(m, H, cur, batch, out);
}

void mlp_input_gradient(const Mlp& m, std::size_t batch, MlpWork& w, double* gx) {
    require(m.spec.out_dim == 1, "input_gradient: scalar-output models only");
    const std::size_t H = m.n_layers() - 1;
    const std::size_t d = m.spec.x_dim;
    // r = dE/dz_H = W_head, broadcast over the batch.
    double* r = w.r0.data();
    double* rn = w.r1.data();
    const double* whead = m.w(H);
    for (std::size_t i = 0; i < batch; ++i) std::copy_n(whead, m.dim_in[H], r + i * m.dim_in[H]);
    for (std::size_t l = H; l-- > 0;) {
        const std::size_t no = m.dim_out[l];
        // s = r . phi'(a_l)   (reuse r in place)
        std::vector<double>& a = w.a[l];
        std::vector<double>& z = w.z[l];
        if (m.spec.activation == Activation::Tanh) {
            for (std::size_t i = 0; i < batch * no; ++i) r[i] *= 1.0 - z[i] * z[i];
        } else {
            for (std::size_t i = 0; i < batch * no; ++i) {
                const double s = sigmoid(a[i]);
                r[i] *= s * (1.0 + a[i] * (1.0 - s));
            }
        }
        std::fill_n(rn, batch * m.dim_in[l], 0.0);
        gemm_nn_acc(r, m.w(l), rn, batch, no, m.dim_in[l]);
        std::swap(r, rn);
    }
    // keep only the x part of the input gradient
    const std::size_t in = m.spec.in_dim();
    for (std::size_t i = 0; i < batch; ++i) std::copy_n(r + i * in, d, gx + i * d);
}

void mlp_jvp(const Mlp& m, std::size_t batch, MlpWork& w, const double* xdot, double* ydot) {
    ensure_work(m, w, batch, true);
    const std::size_t d = m.spec.x_dim;
    const std::size_t in = m.spec.in_dim();
    const std::size_t H = m.n_layers() - 1;
    for (std::size_t i = 0; i < batch; ++i) {
        double* f = w.featdot.data() + i * in;
        std::copy_n(xdot + i * d, d, f);
        std::fill_n(f + d, in - d, 0.0);  // time features carry no x-tangent
    }
    const double* cur = w.featdot.data();
    for (std::size_t l = 0; l < H; ++l) {
        const std::size_t no = m.dim_out[l];
        std::fill_n(w.adot[l].data(), batch * no, 0.0);
        gemm_nt_acc(cur, m.w(l), w.adot[l].data(), batch, m.dim_in[l], no);
        // zdot = phi'(a) . adot
        act_d1(m.spec.activation, w.a[l].data(), w.z[l].data(), w.zdot[l].data(), batch * no);
        for (std::size_t i = 0; i < batch * no; ++i) w.zdot[l][i] *= w.adot[l][i];
        cur = w.zdot[l].data();
    }
    std::fill_n(ydot, batch * m.spec.out_dim, 0.0);
    gemm_nt_acc(cur, m.w(H), ydot, batch, m.dim_in[H], m.spec.out_dim);
}

void mlp_backward(const Mlp& m, std::size_t batch, MlpWork& w, const double* dl_dout, const double* dl_dgx,
                  double* grad) {
    const std::size_t H = m.n_layers() - 1;
    const std::size_t O = m.spec.out_dim;
    const bool tangent = dl_dgx != nullptr;
    if (tangent) {
        require(O == 1, "backward: input-gradient losses need a scalar head");
        // Forward tangent pass seeded with the upstream gradient wrt g:
        // sum_b v_b . g_b equals the directional derivative of E along v_b, so
        // its parameter gradient is the gradient of the tangent output.
        std::vector<double> ydot(batch);  // value unused; fills adot/zdot
        mlp_jvp(m, batch, w, dl_dgx, ydot.data());
    }

    // Head layer. lambda/mu live in r0/r1 and flow down the stack.
    double* lam = w.r0.data();
    double* mu = tangent ? w.r1.data() : nullptr;
    {
        const std::size_t ni = m.dim_in[H];
        const double* zin = H > 0 ? w.z[H - 1].data() : w.feats.data();
        double* gw = grad + m.w_off[H];
        double* gb = grad + m.b_off[H];
        if (dl_dout != nullptr) {
            gemm_tn_acc(dl_dout, zin, gw, O, batch, ni);
            for (std::size_t i = 0; i < batch; ++i)
                for (std::size_t o = 0; o < O; ++o) gb[o] += dl_dout[i * O + o];
        }
        if (tangent) {
            const double* zdin = H > 0 ? w.zdot[H - 1].data() : w.featdot.data();
            for (std::size_t i = 0; i < batch; ++i) axpy(1.0, zdin + i * ni, gw, ni);
        }
        // lambda_{H-1} = dl_dout * W, mu_{H-1} = 1 * W (scalar head)
        std::fill_n(lam, batch * ni, 0.0);
        if (dl_dout != nullptr) gemm_nn_acc(dl_dout, m.w(H), lam, batch, O, ni);
        if (tangent) {
            const double* whead = m.w(H);
            for (std::size_t i = 0; i < batch; ++i) std::copy_n(whead, ni, mu + i * ni);
        }
    }

    std::vector<double> alpha, beta, fp, fpp, lam_next, mu_next;
    for (std::size_t l = H; l-- > 0;) {
        const std::size_t no = m.dim_out[l];
        const std::size_t ni = m.dim_in[l];
        const std::size_t n = batch * no;
        fp.resize(n);
        act_d1(m.spec.activation, w.a[l].data(), w.z[l].data(), fp.data(), n);
        alpha.resize(n);
        if (tangent) {
            fpp.resize(n);
            act_d2(m.spec.activation, w.a[l].data(), w.z[l].data(), fpp.data(), n);
            beta.resize(n);
            const double* adot = w.adot[l].data();
            for (std::size_t i = 0; i < n; ++i) {
                alpha[i] = lam[i] * fp[i] + mu[i] * fpp[i] * adot[i];
                beta[i] = mu[i] * fp[i];
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) alpha[i] = lam[i] * fp[i];
        }
        const double* zin = l > 0 ? w.z[l - 1].data() : w.feats.data();
        double* gw = grad + m.w_off[l];
        double* gb = grad + m.b_off[l];
        gemm_tn_acc(alpha.data(), zin, gw, no, batch, ni);
        for (std::size_t i = 0; i < batch; ++i) axpy(1.0, alpha.data() + i * no, gb, no);
        if (tangent) {
            const double* zdin = l > 0 ? w.zdot[l - 1].data() : w.featdot.data();
            gemm_tn_acc(beta.data(), zdin, gw, no, batch, ni);
        }
        if (l > 0) {
            lam_next.assign(batch * ni, 0.0);
            gemm_nn_acc(alpha.data(), m.w(l), lam_next.data(), batch, no, ni);
            std::copy(lam_next.begin(), lam_next.end(), lam);
            if (tangent) {
                mu_next.assign(batch * ni, 0.0);
                gemm_nn_acc(beta.data(), m.w(l), mu_next.data(), batch, no, ni);
                std::copy(mu_next.begin(), mu_next.end(), mu);
            }
        }
    }
}

double mlp_eval_scalar(const Mlp& m, double t, const double* x) {
    require(m.spec.out_dim == 1, "mlp_eval_scalar: scalar-output models only");
    MlpWork w;
    double out;
    mlp_forward(m, &t, true, x, 1, w, &out);
    return out;
}

std::vector<double> mlp_eval(const Mlp& m, double t, const double* x) {
    MlpWork w;
    std::vector<double> out(m.spec.out_dim);
    mlp_forward(m, &t, true, x, 1, w, out.data());
    return out;
}

std::vector<double> mlp_eval_input_gradient(const Mlp& m, double t, const double* x) {
    MlpWork w;
    double out;
    mlp_forward(m, &t, true, x, 1, w, &out);
    std::vector<double> gx(m.spec.x_dim);
    mlp_input_gradient(m, 1, w, gx.data());
    return gx;
}

AdamState AdamState::init(std::size_t n_params) {
    AdamState s;
    s.m.assign(n_params, 0.0);
    s.v.assign(n_params, 0.0);
    return s;
}

void AdamState::update(double* params, const double* grad, std::size_t n, double lr) {
    require(m.size() == n && v.size() == n, "adam: state size mismatch");
    ++step;
    const double b1t = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double b2t = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m[i] / b1t;
        const double vhat = v[i] / b2t;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

double PlateauScheduler::observe(double epoch_loss) {
    if (epoch_loss < best) {
        best = epoch_loss;
        bad_epochs = 0;
    } else if (++bad_epochs >= patience) {
        lr = std::max(lr * 0.5, min_lr);
        bad_epochs = 0;
    }
    return lr;
}

EmaShadow EmaShadow::init(const std::vector<double>& params, double decay, std::size_t stride) {
    EmaShadow e;
    e.decay = decay;
    e.stride = stride;
    e.shadow = params;
    return e;
}

void EmaShadow::maybe_update(const std::vector<double>& params, std::uint64_t iter) {
    if (stride == 0 || iter % stride != 0) return;
    update(params);
}

void EmaShadow::update(const std::vector<double>& params) {
    require(shadow.size() == params.size(), "ema: size mismatch");
    for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = decay * shadow[i] + (1.0 - decay) * params[i];
}

namespace {

nlohmann::json spec_to_json(const MlpSpec& s) {
    return {{"x_dim", s.x_dim},           {"out_dim", s.out_dim},
            {"hidden", s.hidden},         {"activation", to_string(s.activation)},
            {"time_freqs", s.time_freqs}, {"zero_init_last", s.zero_init_last}};
}

MlpSpec spec_from_json(const nlohmann::json& j) {
    MlpSpec s;
    s.x_dim = j.at("x_dim").get<std::size_t>();
    s.out_dim = j.at("out_dim").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    s.activation = activation_from_string(j.at("activation").get<std::string>());
    s.time_freqs = j.at("time_freqs").get<std::size_t>();
    s.zero_init_last = j.at("zero_init_last").get<bool>();
    return s;
}

}  // namespace

nlohmann::json checkpoint_to_json(const NetCheckpoint& c) {
    nlohmann::json j;
    j["format"] = "boltznce-checkpoint";
    j["version"] = 1;
    j["kind"] = c.kind;
    j["spec"] = spec_to_json(c.net.spec);
    j["params"] = c.net.params;
    j["ema"] = c.ema;
    j["adam"] = {{"m", c.adam.m}, {"v", c.adam.v}, {"step", c.adam.step}};
    j["extra"] = c.extra;
    return j;
}

NetCheckpoint checkpoint_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != "boltznce-checkpoint")
        throw IoError("not a boltznce checkpoint file");
    if (j.at("version").get<int>() != 1) throw IoError("unsupported checkpoint version");
    NetCheckpoint c;
    c.kind = j.at("kind").get<std::string>();
    Rng dummy(0);
    c.net = Mlp::init(spec_from_json(j.at("spec")), dummy);
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != c.net.params.size()) throw IoError("checkpoint parameter count mismatch");
    c.net.params = std::move(params);
    c.ema = j.at("ema").get<std::vector<double>>();
    c.adam = AdamState::init(c.net.params.size());
    c.adam.m = j.at("adam").at("m").get<std::vector<double>>();
    c.adam.v = j.at("adam").at("v").get<std::vector<double>>();
    c.adam.step = j.at("adam").at("step").get<std::uint64_t>();
    c.extra = j.value("extra", nlohmann::json::object());
    return c;
}

void save_checkpoint(const std::string& path, const NetCheckpoint& c) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open checkpoint file for writing: " + path);
    f << checkpoint_to_json(c).dump(1) << "\n";
    if (!f) throw IoError("failed writing checkpoint: " + path);
}

NetCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open checkpoint file: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw IoError("malformed checkpoint JSON in " + path + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace boltznce
