#include "boltznce/ebm.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "boltznce/linalg.hpp"

namespace boltznce {

NegativeBoundary negative_boundary_from_string(const std::string& s) {
    if (s == "clip") return NegativeBoundary::Clip;
    if (s == "reflect") return NegativeBoundary::Reflect;
    throw UsageError("unknown negatives boundary '" + s + "' (expected \"clip\" or \"reflect\")");
}

std::string to_string(NegativeBoundary b) { return b == NegativeBoundary::Clip ? "clip" : "reflect"; }

double info_nce_from_energies(const double* e_pos, const double* e_neg, std::size_t n, std::size_t k,
                              double* grad_pos, double* grad_neg) {
    require(n >= 1, "info_nce: empty batch");
    require(k >= 1, "info_nce: need at least one negative per sample");
    double loss = 0.0;
    const double invn = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* neg = e_neg + i * k;
        double m = e_pos[i];
        for (std::size_t j = 0; j < k; ++j) m = std::max(m, neg[j]);
        double denom = std::exp(e_pos[i] - m);
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(neg[j] - m);
        // -log softmax at the positive logit
        loss += -(e_pos[i] - m) + std::log(denom);
        if (grad_pos) {
            const double p_pos = std::exp(e_pos[i] - m) / denom;
            grad_pos[i] = (p_pos - 1.0) * invn;
            for (std::size_t j = 0; j < k; ++j) grad_neg[i * k + j] = std::exp(neg[j] - m) / denom * invn;
        }
    }
    return loss * invn;
}

namespace {

void eval_energies(const Mlp& net, MlpWork& work, const double* t, bool shared_t, const double* x, std::size_t n,
                   std::vector<double>& e) {
    e.resize(n);
    mlp_forward(net, t, shared_t, x, n, work, e.data());
}

}  // namespace

double info_nce_loss(const EnergyModel& model, const std::vector<double>& t, const std::vector<double>& x_t,
                     const std::vector<double>& t_neg, std::size_t k) {
    const std::size_t d = model.dim();
    const std::size_t n = t.size();
    require(x_t.size() == n * d, "info_nce_loss: x_t shape mismatch");
    require(t_neg.size() == n * k && k >= 1, "info_nce_loss: negatives shape mismatch");
    Mlp net = model.inference_net();
    MlpWork work;
    std::vector<double> e_pos, e_neg(n * k), col(n);
    eval_energies(net, work, t.data(), false, x_t.data(), n, e_pos);
    // negatives share x_t, so evaluate one column at a time
    std::vector<double> tcol(n);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < n; ++i) tcol[i] = t_neg[i * k + j];
        eval_energies(net, work, tcol.data(), false, x_t.data(), n, col);
        for (std::size_t i = 0; i < n; ++i) e_neg[i * k + j] = col[i];
    }
    return info_nce_from_energies(e_pos.data(), e_neg.data(), n, k);
}

double score_matching_loss(const EnergyModel& model, const std::vector<double>& t, const std::vector<double>& x0,
                           const std::vector<double>& x1) {
    const std::size_t d = model.dim();
    const std::size_t n = t.size();
    require(x0.size() == n * d && x1.size() == n * d, "score_matching_loss: shape mismatch");
    Mlp net = model.inference_net();
    MlpWork work;
    std::vector<double> xt(n * d), e(n), g(n * d);
    for (std::size_t i = 0; i < n; ++i)
        interpolate(model.schedule, t[i], x0.data() + i * d, x1.data() + i * d, xt.data() + i * d, d);
    mlp_forward(net, t.data(), false, xt.data(), n, work, e.data());
    mlp_input_gradient(net, n, work, g.data());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = model.schedule.sigma(t[i]);
        for (std::size_t kk = 0; kk < d; ++kk) {
            const double r = s * g[i * d + kk] + x1[i * d + kk];
            loss += r * r;
        }
    }
    return loss / static_cast<double>(n);
}

namespace {

struct EbmBatch {
    std::vector<double> x0, x1, xt, t, t_neg;
};

struct EbmLossOut {
    double total = 0.0, sm = 0.0, nce = 0.0;
};

// Computes the combined loss on a prepared batch; when grad != nullptr also
// accumulates the parameter gradient, routing the score-matching term through
// the input-gradient (double backprop) path.
EbmLossOut ebm_loss(const Mlp& net, const InterpolantSchedule& sched, const EbmConfig& cfg, const EbmBatch& b,
                    std::size_t n, std::size_t d, MlpWork& work_pos, MlpWork& work_neg, double* grad) {
    const std::size_t k = cfg.negatives_count;
    std::vector<double> e_pos(n), g(n * d);
    mlp_forward(net, b.t.data(), false, b.xt.data(), n, work_pos, e_pos.data());
    mlp_input_gradient(net, n, work_pos, g.data());

    EbmLossOut out;
    std::vector<double> dl_dg(n * d, 0.0);
    const double invn = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = sched.sigma(b.t[i]);
        for (std::size_t kk = 0; kk < d; ++kk) {
            const double r = s * g[i * d + kk] + b.x1[i * d + kk];
            out.sm += r * r;
            dl_dg[i * d + kk] = cfg.sm_weight * 2.0 * s * r * invn;
        }
    }
    out.sm *= invn;

    // Negatives: evaluate column by column so each keeps its own backward state.
    std::vector<std::vector<double>> e_neg_cols(k);
    std::vector<MlpWork> neg_works;  // state per column (k is 1 in practice)
    neg_works.resize(k > 1 ? k - 1 : 0);
    std::vector<double> tcol(n);
    std::vector<double> e_neg(n * k);
    for (std::size_t j = 0; j < k; ++j) {
        MlpWork& w = j == 0 ? work_neg : neg_works[j - 1];
        for (std::size_t i = 0; i < n; ++i) tcol[i] = b.t_neg[i * k + j];
        e_neg_cols[j].resize(n);
        mlp_forward(net, tcol.data(), false, b.xt.data(), n, w, e_neg_cols[j].data());
        for (std::size_t i = 0; i < n; ++i) e_neg[i * k + j] = e_neg_cols[j][i];
    }
    std::vector<double> gpos(n), gneg(n * k);
    out.nce = info_nce_from_energies(e_pos.data(), e_neg.data(), n, k, gpos.data(), gneg.data());
    out.total = cfg.sm_weight * out.sm + cfg.nce_weight * out.nce;

    if (grad) {
        for (std::size_t i = 0; i < n; ++i) gpos[i] *= cfg.nce_weight;
        mlp_backward(net, n, work_pos, gpos.data(), dl_dg.data(), grad);
        std::vector<double> gcol(n);
        for (std::size_t j = 0; j < k; ++j) {
            MlpWork& w = j == 0 ? work_neg : neg_works[j - 1];
            for (std::size_t i = 0; i < n; ++i) gcol[i] = cfg.nce_weight * gneg[i * k + j];
            mlp_backward(net, n, w, gcol.data(), nullptr, grad);
        }
    }
    return out;
}

void prepare_ebm_batch(const InterpolantSchedule& sched, const NegativeTimeSampler& negs, const EbmConfig& cfg,
                       std::size_t d, std::size_t n, Rng& rng, CouplingMode coupling, EbmBatch& b) {
    b.x1.resize(n * d);
    rng.fill_normal(b.x1.data(), b.x1.size());
    Coupling c = couple(coupling, b.x0.data(), b.x1.data(), n, d, cfg.coupling_block);
    b.x1 = apply_coupling(c, b.x1, d);
    b.t.resize(n);
    for (auto& t : b.t) t = rng.uniform(cfg.t_lo, cfg.t_hi);
    b.xt.resize(n * d);
    for (std::size_t i = 0; i < n; ++i)
        interpolate(sched, b.t[i], b.x0.data() + i * d, b.x1.data() + i * d, b.xt.data() + i * d, d);
    b.t_neg.resize(n * negs.count);
    for (std::size_t i = 0; i < n; ++i) negs.sample(rng, b.t[i], b.t_neg.data() + i * negs.count);
}

}  // namespace

EnergyModel train_ebm(const std::vector<double>& data, std::size_t dim, const EbmConfig& cfg, Rng& rng,
                      TrainLog* log) {
    require(dim >= 1 && data.size() % dim == 0, "train_ebm: bad data shape");
    require(cfg.negatives_count >= 1, "train_ebm: need at least one negative per sample");
    const std::size_t n_total = data.size() / dim;
    const std::size_t n_val = std::min(cfg.val_size, n_total / 5);
    const std::size_t n_train = n_total - n_val;
    require(n_train >= cfg.batch_size, "train_ebm: dataset smaller than one batch");

    MlpSpec spec;
    spec.x_dim = dim;
    spec.out_dim = 1;
    spec.hidden = cfg.hidden;
    spec.activation = cfg.activation;
    spec.time_freqs = cfg.time_freqs;
    spec.zero_init_last = true;  // E == 0 at init; first InfoNCE loss is exactly log(k+1)

    EnergyModel model;
    model.schedule.kind = cfg.schedule;
    model.net = Mlp::init(spec, rng);
    model.adam = AdamState::init(model.net.n_params());
    EmaShadow ema = EmaShadow::init(model.net.params, cfg.ema_decay, cfg.ema_stride);
    PlateauScheduler sched;
    sched.lr = cfg.lr;
    sched.min_lr = cfg.min_lr;
    sched.patience = cfg.lr_patience;
    NegativeTimeSampler negs{cfg.negatives_count, cfg.negatives_std, cfg.negatives_boundary};

    EbmBatch val;
    if (n_val > 0) {
        val.x0.assign(data.end() - n_val * dim, data.end());
        prepare_ebm_batch(model.schedule, negs, cfg, dim, n_val, rng, cfg.coupling, val);
    }

    const std::size_t batches = n_train / cfg.batch_size;
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    EbmBatch batch;
    MlpWork work_pos, work_neg;
    std::vector<double> grad(model.net.n_params());
    std::uint64_t iter = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t bad_epochs = 0;
    TrainLog local_log;
    TrainLog& tl = log ? *log : local_log;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t bi = 0; bi < batches; ++bi) {
            batch.x0.resize(cfg.batch_size * dim);
            for (std::size_t i = 0; i < cfg.batch_size; ++i)
                std::copy_n(data.data() + order[bi * cfg.batch_size + i] * dim, dim,
                            batch.x0.data() + i * dim);
            prepare_ebm_batch(model.schedule, negs, cfg, dim, cfg.batch_size, rng, cfg.coupling, batch);
            fill_zero(grad);
            EbmLossOut l =
                ebm_loss(model.net, model.schedule, cfg, batch, cfg.batch_size, dim, work_pos, work_neg, grad.data());
            if (!std::isfinite(l.total)) {
                char buf[128];
                std::snprintf(buf, sizeof(buf), "train_ebm: non-finite loss at epoch %zu, iteration %llu", epoch,
                              static_cast<unsigned long long>(iter));
                throw NumericalError(buf);
            }
            epoch_loss += l.total;
            model.adam.update(model.net.params.data(), grad.data(), grad.size(), sched.lr);
            ++iter;
            ema.maybe_update(model.net.params, iter);
        }
        epoch_loss /= static_cast<double>(batches);
        tl.train_loss.push_back(epoch_loss);

        double vloss = epoch_loss;
        if (n_val > 0)
            vloss = ebm_loss(model.net, model.schedule, cfg, val, n_val, dim, work_pos, work_neg, nullptr).total;
        tl.val_loss.push_back(vloss);
        sched.observe(vloss);
        tl.epochs_run = epoch + 1;
        if (vloss < best_val) {
            best_val = vloss;
            bad_epochs = 0;
        } else if (++bad_epochs >= cfg.early_stop_patience) {
            tl.early_stopped = true;
            break;
        }
    }
    tl.iterations = iter;
    tl.final_lr = sched.lr;

    model.ema = ema.shadow;
    model.train_meta = {{"schedule", to_string(cfg.schedule)},
                        {"coupling", to_string(cfg.coupling)},
                        {"negatives",
                         {{"count", cfg.negatives_count},
                          {"std", cfg.negatives_std},
                          {"boundary", to_string(cfg.negatives_boundary)}}},
                        {"loss", {{"sm_weight", cfg.sm_weight}, {"nce_weight", cfg.nce_weight}}},
                        {"epochs_configured", cfg.epochs},
                        {"batch_size", cfg.batch_size},
                        {"weights", "ema"},
                        {"log", tl.to_json()}};
    return model;
}

double log_density(const EnergyModel& model, const double* x) {
    Mlp net = model.inference_net();
    return mlp_eval_scalar(net, 0.0, x);
}

std::vector<double> log_density_batch(const EnergyModel& model, const std::vector<double>& x, std::size_t n) {
    const std::size_t d = model.dim();
    require(x.size() == n * d, "log_density_batch: bad input shape");
    Mlp net = model.inference_net();
    std::vector<double> out(n);
    if (n == 0) return out;
    MlpWork work;
    const double t0 = 0.0;
    mlp_forward(net, &t0, true, x.data(), n, work, out.data());
    return out;
}

void save_energy_model(const std::string& path, const EnergyModel& m) {
    NetCheckpoint c;
    c.kind = "ebm";
    c.net = m.net;
    c.ema = m.ema;
    c.adam = m.adam;
    c.extra = {{"schedule", to_string(m.schedule.kind)}, {"train_meta", m.train_meta}};
    save_checkpoint(path, c);
}

EnergyModel load_energy_model(const std::string& path) {
    NetCheckpoint c = load_checkpoint(path);
    if (c.kind != "ebm") throw IoError("checkpoint at " + path + " is not an energy model");
    EnergyModel m;
    m.schedule.kind = schedule_from_string(c.extra.at("schedule").get<std::string>());
    m.net = std::move(c.net);
    m.ema = std::move(c.ema);
    m.adam = std::move(c.adam);
    m.train_meta = c.extra.value("train_meta", nlohmann::json::object());
    return m;
}

}  // namespace boltznce
