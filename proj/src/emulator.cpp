#include "boltznce/emulator.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "boltznce/linalg.hpp"

namespace boltznce {

FlowObjective flow_objective_from_string(const std::string& s) {
    if (s == "vector_field") return FlowObjective::VectorField;
    if (s == "endpoint") return FlowObjective::Endpoint;
    if (s == "cfm") return FlowObjective::Cfm;
    throw UsageError("unknown emulator objective '" + s + "' (expected vector_field, endpoint or cfm)");
}

std::string to_string(FlowObjective o) {
    switch (o) {
        case FlowObjective::VectorField: return "vector_field";
        case FlowObjective::Endpoint: return "endpoint";
        default: return "cfm";
    }
}

nlohmann::json TrainLog::to_json() const {
    return {{"train_loss", train_loss}, {"val_loss", val_loss},   {"epochs_run", epochs_run},
            {"iterations", iterations}, {"final_lr", final_lr},   {"early_stopped", early_stopped}};
}

double log_standard_normal(const double* x, std::size_t d) {
    double q = 0.0;
    for (std::size_t i = 0; i < d; ++i) q += x[i] * x[i];
    return -0.5 * q - 0.5 * static_cast<double>(d) * std::log(2.0 * M_PI);
}

namespace {

struct BatchTensors {
    std::vector<double> x0, x1, xt, t, target, weight;
};

// Builds model inputs and regression targets for one coupled batch.
// For the endpoint objective `weight` carries the clamped t_w.
void prepare_batch(FlowObjective obj, const InterpolantSchedule& sched, double cfm_sigma, std::size_t dim,
                   std::size_t n, Rng* noise_rng, BatchTensors& b) {
    b.xt.resize(n * dim);
    b.target.resize(n * dim);
    b.weight.assign(obj == FlowObjective::Endpoint ? n : 0, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = b.t[i];
        const double* x0 = b.x0.data() + i * dim;
        const double* x1 = b.x1.data() + i * dim;
        double* xt = b.xt.data() + i * dim;
        double* tgt = b.target.data() + i * dim;
        switch (obj) {
            case FlowObjective::VectorField: {
                const double a = sched.alpha(t), s = sched.sigma(t);
                const double da = sched.dalpha(t), ds = sched.dsigma(t);
                for (std::size_t k = 0; k < dim; ++k) {
                    xt[k] = a * x0[k] + s * x1[k];
                    tgt[k] = da * x0[k] + ds * x1[k];
                }
                break;
            }
            case FlowObjective::Endpoint: {
                const double a = sched.alpha(t), s = sched.sigma(t);
                for (std::size_t k = 0; k < dim; ++k) {
                    xt[k] = a * x0[k] + s * x1[k];
                    tgt[k] = x0[k];
                }
                b.weight[i] = endpoint_coefficient(sched, t);
                break;
            }
            case FlowObjective::Cfm: {
                for (std::size_t k = 0; k < dim; ++k) {
                    double x = t * x1[k] + (1.0 - t) * x0[k];
                    if (cfm_sigma > 0.0 && noise_rng) x += cfm_sigma * noise_rng->normal();
                    xt[k] = x;
                    tgt[k] = x1[k] - x0[k];
                }
                break;
            }
        }
    }
}

// Returns the batch loss; fills dl_dout when non-null.
double flow_loss(const Mlp& net, MlpWork& work, const BatchTensors& b, std::size_t n, std::size_t dim,
                 std::vector<double>& out, std::vector<double>* dl_dout) {
    out.resize(n * dim);
    mlp_forward(net, b.t.data(), false, b.xt.data(), n, work, out.data());
    if (dl_dout) dl_dout->assign(n * dim, 0.0);
    double loss = 0.0;
    const bool weighted = !b.weight.empty();
    for (std::size_t i = 0; i < n; ++i) {
        const double w = weighted ? b.weight[i] : 1.0;
        for (std::size_t k = 0; k < dim; ++k) {
            const double r = out[i * dim + k] - b.target[i * dim + k];
            loss += w * r * r;
            if (dl_dout) (*dl_dout)[i * dim + k] = 2.0 * w * r / static_cast<double>(n);
        }
    }
    return loss / static_cast<double>(n);
}

void gather_rows(const std::vector<double>& data, std::size_t dim, const std::vector<std::size_t>& idx,
                 std::size_t begin, std::size_t count, std::vector<double>& out) {
    out.resize(count * dim);
    for (std::size_t i = 0; i < count; ++i)
        std::copy_n(data.data() + idx[begin + i] * dim, dim, out.data() + i * dim);
}

}  // namespace

FlowModel train_flow(const std::vector<double>& data, std::size_t dim, const FlowTrainConfig& cfg, Rng& rng,
                     TrainLog* log) {
    require(dim >= 1 && data.size() % dim == 0, "train_flow: bad data shape");
    const std::size_t n_total = data.size() / dim;
    const std::size_t n_val = std::min(cfg.val_size, n_total / 5);
    const std::size_t n_train = n_total - n_val;
    require(n_train >= cfg.batch_size, "train_flow: dataset smaller than one batch");
    require(cfg.t_lo > 0.0 && cfg.t_hi < 1.0 && cfg.t_lo < cfg.t_hi, "train_flow: bad t window");

    MlpSpec spec;
    spec.x_dim = dim;
    spec.out_dim = dim;
    spec.hidden = cfg.hidden;
    spec.activation = cfg.activation;
    spec.time_freqs = cfg.time_freqs;
    spec.zero_init_last = true;

    FlowModel model;
    model.parameterization = cfg.objective == FlowObjective::Endpoint ? FlowParameterization::Endpoint
                                                                      : FlowParameterization::VectorField;
    model.schedule.kind = cfg.objective == FlowObjective::Cfm ? ScheduleKind::Linear : cfg.schedule;
    model.net = Mlp::init(spec, rng);
    model.adam = AdamState::init(model.net.n_params());
    EmaShadow ema = EmaShadow::init(model.net.params, cfg.ema_decay, cfg.ema_stride);
    PlateauScheduler sched;
    sched.lr = cfg.lr;
    sched.min_lr = cfg.min_lr;
    sched.patience = cfg.lr_patience;

    // Frozen validation batch (pairs, times and CFM noise drawn once).
    BatchTensors val;
    if (n_val > 0) {
        val.x0.assign(data.end() - n_val * dim, data.end());
        val.x1.resize(n_val * dim);
        rng.fill_normal(val.x1.data(), val.x1.size());
        Coupling c = couple(cfg.coupling, val.x0.data(), val.x1.data(), n_val, dim, cfg.coupling_block);
        val.x1 = apply_coupling(c, val.x1, dim);
        val.t.resize(n_val);
        for (auto& t : val.t) t = rng.uniform(cfg.t_lo, cfg.t_hi);
        prepare_batch(cfg.objective, model.schedule, cfg.cfm_sigma, dim, n_val, &rng, val);
    }

    const std::size_t batches = n_train / cfg.batch_size;
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    BatchTensors batch;
    MlpWork work;
    std::vector<double> out, dl_dout, grad(model.net.n_params());
    std::uint64_t iter = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t bad_epochs = 0;
    TrainLog local_log;
    TrainLog& tl = log ? *log : local_log;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t bi = 0; bi < batches; ++bi) {
            gather_rows(data, dim, order, bi * cfg.batch_size, cfg.batch_size, batch.x0);
            batch.x1.resize(cfg.batch_size * dim);
            rng.fill_normal(batch.x1.data(), batch.x1.size());
            Coupling c = couple(cfg.coupling, batch.x0.data(), batch.x1.data(), cfg.batch_size, dim, cfg.coupling_block);
            batch.x1 = apply_coupling(c, batch.x1, dim);
            batch.t.resize(cfg.batch_size);
            for (auto& t : batch.t) t = rng.uniform(cfg.t_lo, cfg.t_hi);
            prepare_batch(cfg.objective, model.schedule, cfg.cfm_sigma, dim, cfg.batch_size, &rng, batch);

            const double loss = flow_loss(model.net, work, batch, cfg.batch_size, dim, out, &dl_dout);
            if (!std::isfinite(loss)) {
                char buf[128];
                std::snprintf(buf, sizeof(buf), "train_flow: non-finite loss at epoch %zu, iteration %llu", epoch,
                              static_cast<unsigned long long>(iter));
                throw NumericalError(buf);
            }
            epoch_loss += loss;
            fill_zero(grad);
            mlp_backward(model.net, cfg.batch_size, work, dl_dout.data(), nullptr, grad.data());
            model.adam.update(model.net.params.data(), grad.data(), grad.size(), sched.lr);
            ++iter;
            ema.maybe_update(model.net.params, iter);
        }
        epoch_loss /= static_cast<double>(batches);
        tl.train_loss.push_back(epoch_loss);

        double vloss = epoch_loss;
        if (n_val > 0) vloss = flow_loss(model.net, work, val, n_val, dim, out, nullptr);
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
    model.train_meta = {{"objective", to_string(cfg.objective)},
                        {"schedule", to_string(model.schedule.kind)},
                        {"coupling", to_string(cfg.coupling)},
                        {"epochs_configured", cfg.epochs},
                        {"batch_size", cfg.batch_size},
                        {"cfm_sigma", cfg.cfm_sigma},
                        {"weights", "ema"},
                        {"log", tl.to_json()}};
    return model;
}

FlowField::FlowField(const FlowModel& model)
    : BatchField(model.dim()),
      param_(model.parameterization),
      schedule_(model.schedule),
      net_(model.inference_net()) {}

void FlowField::net_forward(double t, const double* x, std::size_t batch, double* out) const {
    mlp_forward(net_, &t, true, x, batch, work_, out);
}

void FlowField::trace_jacobian(double t, const double* x, std::size_t batch, double* tr) const {
    (void)t;
    (void)x;  // forward state already in work_
    const std::size_t d = dim();
    dot_.assign(batch * d, 0.0);
    ydot_.resize(batch * d);
    std::fill_n(tr, batch, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t i = 0; i < batch; ++i) dot_[i * d + k] = 1.0;
        mlp_jvp(net_, batch, work_, dot_.data(), ydot_.data());
        for (std::size_t i = 0; i < batch; ++i) tr[i] += ydot_[i * d + k];
        for (std::size_t i = 0; i < batch; ++i) dot_[i * d + k] = 0.0;
    }
}

void FlowField::eval(double t, const double* x, double* v, std::size_t batch) const {
    const std::size_t d = dim();
    if (param_ == FlowParameterization::VectorField) {
        net_forward(t, x, batch, v);
        return;
    }
    // Guard against the sigma -> 0 divergence of the endpoint field.
    t = std::max(t, kEndpointTimeFloor);
    buf_.resize(batch * d);
    net_forward(t, x, batch, buf_.data());
    const double s = schedule_.sigma(t);
    const double ds = schedule_.dsigma(t);
    const double coef = schedule_.dalpha(t) * s - schedule_.alpha(t);
    const double inv = 1.0 / s;
    for (std::size_t i = 0; i < batch * d; ++i) v[i] = inv * (ds * x[i] + coef * buf_[i]);
}

void FlowField::divergence_exact(double t, const double* x, double* div, std::size_t batch) const {
    const std::size_t d = dim();
    if (param_ == FlowParameterization::VectorField) {
        std::vector<double> tmp(batch * d);
        net_forward(t, x, batch, tmp.data());
        trace_jacobian(t, x, batch, div);
        return;
    }
    t = std::max(t, kEndpointTimeFloor);
    buf_.resize(batch * d);
    net_forward(t, x, batch, buf_.data());
    trace_jacobian(t, x, batch, div);
    const double s = schedule_.sigma(t);
    const double ds = schedule_.dsigma(t);
    const double coef = schedule_.dalpha(t) * s - schedule_.alpha(t);
    const double inv = 1.0 / s;
    for (std::size_t i = 0; i < batch; ++i) div[i] = inv * (ds * static_cast<double>(d) + coef * div[i]);
}

void FlowField::eval_with_divergence_exact(double t, const double* x, double* v, double* div,
                                           std::size_t batch) const {
    const std::size_t d = dim();
    if (param_ == FlowParameterization::VectorField) {
        net_forward(t, x, batch, v);
        trace_jacobian(t, x, batch, div);
        return;
    }
    t = std::max(t, kEndpointTimeFloor);
    buf_.resize(batch * d);
    net_forward(t, x, batch, buf_.data());
    trace_jacobian(t, x, batch, div);
    const double s = schedule_.sigma(t);
    const double ds = schedule_.dsigma(t);
    const double coef = schedule_.dalpha(t) * s - schedule_.alpha(t);
    const double inv = 1.0 / s;
    for (std::size_t i = 0; i < batch * d; ++i) v[i] = inv * (ds * x[i] + coef * buf_[i]);
    for (std::size_t i = 0; i < batch; ++i) div[i] = inv * (ds * static_cast<double>(d) + coef * div[i]);
}

namespace {

// Chunked map over samples with error capture from worker threads.
template <typename Fn>
void for_each_chunk(std::size_t n, std::size_t chunk, Fn&& fn) {
    if (chunk == 0) chunk = n;
    const std::size_t n_chunks = (n + chunk - 1) / chunk;
    std::exception_ptr error;
    std::mutex error_mutex;
    parallel_for(n_chunks, 1, [&](std::size_t c0, std::size_t c1) {
        for (std::size_t c = c0; c < c1; ++c) {
            try {
                const std::size_t begin = c * chunk;
                fn(begin, std::min(begin + chunk, n));
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    });
    if (error) std::rethrow_exception(error);
}

}  // namespace

EmulatorSampleSet sample(const FlowModel& model, std::size_t n, std::uint64_t seed, const SampleOptions& opts) {
    const std::size_t d = model.dim();
    EmulatorSampleSet set;
    set.dim = d;
    set.x.resize(n * d);
    if (opts.with_loglik) set.loglik.resize(n);
    set.metadata = {{"seed", seed},
                    {"n", n},
                    {"atol", opts.ode.atol},
                    {"rtol", opts.ode.rtol},
                    {"t_start", 1.0},
                    {"t_end", model.t_floor()},
                    {"chunk", opts.chunk},
                    {"with_loglik", opts.with_loglik},
                    {"divergence", to_string(opts.divergence)},
                    {"model_hash", model_param_hash(model)},
                    {"weights", "ema"},
                    {"parameterization",
                     model.parameterization == FlowParameterization::Endpoint ? "endpoint" : "vector_field"},
                    {"schedule", to_string(model.schedule.kind)}};
    if (n == 0) return set;

    // Prior draws happen up front so chunk workers stay deterministic.
    std::vector<double> x1(n * d);
    Rng rng(seed);
    rng.fill_normal(x1.data(), x1.size());
    std::vector<double> logq;
    if (opts.with_loglik) {
        logq.resize(n);
        for (std::size_t i = 0; i < n; ++i) logq[i] = log_standard_normal(x1.data() + i * d, d);
    }

    const double t_end = model.t_floor();
    try {
        for_each_chunk(n, opts.chunk, [&](std::size_t begin, std::size_t end) {
            const std::size_t b = end - begin;
            FlowField field(model);
            std::vector<double> y0(x1.begin() + begin * d, x1.begin() + end * d);
            if (opts.with_loglik) {
                LogdetResult r = integrate_with_logdet(field, opts.divergence, 1.0, t_end, y0, b, opts.ode);
                std::copy(r.x_end.begin(), r.x_end.end(), set.x.begin() + begin * d);
                for (std::size_t i = 0; i < b; ++i) set.loglik[begin + i] = logq[begin + i] + r.dlogp[i];
            } else {
                auto rhs = [&](double t, const double* y, double* dy) { field.eval(t, y, dy, b); };
                OdeSolution s = integrate(rhs, 1.0, t_end, std::move(y0), opts.ode);
                std::copy(s.y.begin(), s.y.end(), set.x.begin() + begin * d);
            }
        });
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (sampling seed " + std::to_string(seed) + ")");
    }
    return set;
}

LikelihoodResult exact_log_likelihood(const FlowModel& model, const std::vector<double>& x, std::size_t n,
                                      const SampleOptions& opts) {
    const std::size_t d = model.dim();
    require(x.size() == n * d, "exact_log_likelihood: bad input shape");
    LikelihoodResult out;
    out.approximate = model.parameterization == FlowParameterization::Endpoint;
    out.loglik.resize(n);
    if (n == 0) return out;
    const double t_start = model.t_floor();
    for_each_chunk(n, opts.chunk, [&](std::size_t begin, std::size_t end) {
        const std::size_t b = end - begin;
        FlowField field(model);
        std::vector<double> y0(x.begin() + begin * d, x.begin() + end * d);
        LogdetResult r = integrate_with_logdet(field, opts.divergence, t_start, 1.0, y0, b, opts.ode);
        for (std::size_t i = 0; i < b; ++i) {
            const double lq = log_standard_normal(r.x_end.data() + i * d, d);
            out.loglik[begin + i] = lq - r.dlogp[i];
        }
    });
    if (!all_finite(out.loglik)) throw NumericalError("exact_log_likelihood: non-finite divergence integral");
    return out;
}

double exact_log_likelihood(const FlowModel& model, const double* x, const OdeOptions& ode, DivergenceMode mode) {
    SampleOptions opts;
    opts.ode = ode;
    opts.divergence = mode;
    opts.chunk = 1;
    std::vector<double> one(x, x + model.dim());
    return exact_log_likelihood(model, one, 1, opts).loglik[0];
}

nlohmann::json NllReport::to_json() const {
    return {{"mean", mean},
            {"std", stddev},
            {"batch_means", batch_means},
            {"std_across_batches", stddev_across_batches},
            {"batch_size", batch_size},
            {"approximate", approximate}};
}

NllReport nll(const FlowModel& model, const std::vector<double>& holdout, std::size_t n, const SampleOptions& opts,
              std::size_t batch_size) {
    require(n >= 1, "nll: empty batch");
    LikelihoodResult lik = exact_log_likelihood(model, holdout, n, opts);
    NllReport rep;
    rep.approximate = lik.approximate;
    rep.batch_size = batch_size;
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = -lik.loglik[i];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    rep.mean = mean;
    rep.stddev = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
    for (std::size_t b = 0; b + batch_size <= n; b += batch_size) {
        double bm = 0.0;
        for (std::size_t i = b; i < b + batch_size; ++i) bm += v[i];
        rep.batch_means.push_back(bm / static_cast<double>(batch_size));
    }
    if (rep.batch_means.size() > 1) {
        double bm = 0.0;
        for (double x : rep.batch_means) bm += x;
        bm /= static_cast<double>(rep.batch_means.size());
        double bv = 0.0;
        for (double x : rep.batch_means) bv += (x - bm) * (x - bm);
        rep.stddev_across_batches = std::sqrt(bv / static_cast<double>(rep.batch_means.size() - 1));
    }
    return rep;
}

std::string model_param_hash(const FlowModel& m) {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const std::vector<double>& v) {
        for (double x : v) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(x));
            std::memcpy(&bits, &x, sizeof(bits));
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 1099511628211ULL;
            }
        }
    };
    feed(m.ema);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void save_flow_model(const std::string& path, const FlowModel& m) {
    NetCheckpoint c;
    c.kind = "emulator";
    c.net = m.net;
    c.ema = m.ema;
    c.adam = m.adam;
    c.extra = {{"parameterization",
                m.parameterization == FlowParameterization::Endpoint ? "endpoint" : "vector_field"},
               {"schedule", to_string(m.schedule.kind)},
               {"train_meta", m.train_meta}};
    save_checkpoint(path, c);
}

FlowModel load_flow_model(const std::string& path) {
    NetCheckpoint c = load_checkpoint(path);
    if (c.kind != "emulator") throw IoError("checkpoint at " + path + " is not an emulator model");
    FlowModel m;
    m.parameterization = c.extra.at("parameterization").get<std::string>() == "endpoint"
                             ? FlowParameterization::Endpoint
                             : FlowParameterization::VectorField;
    m.schedule.kind = schedule_from_string(c.extra.at("schedule").get<std::string>());
    m.net = std::move(c.net);
    m.ema = std::move(c.ema);
    m.adam = std::move(c.adam);
    m.train_meta = c.extra.value("train_meta", nlohmann::json::object());
    return m;
}

}  // namespace boltznce
