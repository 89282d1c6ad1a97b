#include "boltznce/pipeline.hpp"

#include <chrono>
#include <cmath>

#include "boltznce/artifacts.hpp"
#include "boltznce/metrics.hpp"

namespace boltznce {

namespace {

std::vector<ConfigEntry> build_schema() {
    const double t_hi = 1.0 - 1e-5;
    return {
        {"target.name", "two_well", "target density: eight_gaussians | checkerboard | two_well"},
        {"target.params", nlohmann::json::object(), "per-target parameters (see make_target)"},
        {"emulator.objective", "vector_field", "training objective: vector_field | endpoint | cfm"},
        {"emulator.schedule", "linear", "interpolant schedule: linear | trig"},
        {"emulator.coupling", "ot", "batch coupling: ot | independent"},
        {"emulator.coupling_block", 0, "assignment block size; 0 couples the whole batch"},
        {"emulator.hidden", nlohmann::json::array({128, 128, 128}), "hidden layer widths"},
        {"emulator.activation", "tanh", "activation: tanh | silu"},
        {"emulator.time_freqs", 8, "sinusoidal time-embedding frequencies"},
        {"emulator.epochs", 1000, "max training epochs"},
        {"emulator.batch_size", 512, "minibatch size"},
        {"emulator.lr", 1e-3, "Adam learning rate"},
        {"emulator.min_lr", 1e-5, "learning-rate floor"},
        {"emulator.lr_patience", 20, "epochs without improvement before halving the rate"},
        {"emulator.early_stop_patience", 100, "epochs without improvement before stopping"},
        {"emulator.ema_decay", 0.999, "EMA decay for the inference weights"},
        {"emulator.ema_stride", 10, "iterations between EMA updates"},
        {"emulator.cfm_sigma", 0.0, "probability-path width for the cfm objective"},
        {"emulator.t_lo", 1e-5, "lower end of the uniform t window"},
        {"emulator.t_hi", t_hi, "upper end of the uniform t window"},
        {"emulator.train_size", 65536, "target samples drawn for emulator training"},
        {"emulator.val_size", 2048, "held-out rows for the plateau scheduler"},
        {"data.bias.enabled", false, "resample the training set by an angular weight function"},
        {"data.bias.coordinate", "angle", "biasing coordinate: x0 | x1 | angle"},
        {"data.bias.mu", 1.0, "von Mises location"},
        {"data.bias.kappa", 10.0, "von Mises concentration"},
        {"data.bias.scale", 150.0, "von Mises weight scale"},
        {"data.bias.offset", 1.0, "von Mises weight offset"},
        {"ebm.schedule", "trig", "interpolant schedule for the energy model"},
        {"ebm.coupling", "ot", "batch coupling: ot | independent"},
        {"ebm.coupling_block", 0, "assignment block size; 0 couples the whole batch"},
        {"ebm.hidden", nlohmann::json::array({128, 128, 128}), "hidden layer widths"},
        {"ebm.activation", "tanh", "activation: tanh | silu"},
        {"ebm.time_freqs", 8, "sinusoidal time-embedding frequencies"},
        {"ebm.negatives.count", 1, "negative time points per sample"},
        {"ebm.negatives.std", 0.025, "std of the negative time distribution N(t, std)"},
        {"ebm.negatives.boundary", "clip", "out-of-range negatives: clip | reflect"},
        {"ebm.loss.sm_weight", 1.0, "score-matching loss weight"},
        {"ebm.loss.nce_weight", 1.0, "InfoNCE loss weight"},
        {"ebm.epochs", 1000, "max training epochs"},
        {"ebm.batch_size", 512, "minibatch size"},
        {"ebm.lr", 1e-3, "Adam learning rate"},
        {"ebm.min_lr", 1e-5, "learning-rate floor"},
        {"ebm.lr_patience", 20, "epochs without improvement before halving the rate"},
        {"ebm.early_stop_patience", 100, "epochs without improvement before stopping"},
        {"ebm.ema_decay", 0.999, "EMA decay for the inference weights"},
        {"ebm.ema_stride", 10, "iterations between EMA updates"},
        {"ebm.t_lo", 1e-5, "lower end of the uniform t window"},
        {"ebm.t_hi", t_hi, "upper end of the uniform t window"},
        {"ebm.train_size", 65536, "emulator samples used for EBM training"},
        {"ebm.val_size", 2048, "held-out rows for the plateau scheduler"},
        {"samples.n", 100000, "emulator samples generated by the pipeline"},
        {"samples.chunk", 2048, "samples integrated per ODE chunk"},
        {"ode.atol", 1e-5, "absolute integration tolerance"},
        {"ode.rtol", 1e-5, "relative integration tolerance"},
        {"ode.divergence", "exact_autodiff", "divergence mode: exact_autodiff | exact_finite_difference"},
        {"reweight.coordinate", "x0", "collective coordinate: x0 | x1 | angle"},
        {"reweight.region", nlohmann::json::array({0.0, 2.0}), "positive-state interval on the coordinate"},
        {"reweight.bins", 100, "histogram bins for the free-energy estimate"},
        {"reweight.ess_warn_frac", 0.01, "warn when ESS/n falls below this fraction"},
        {"metrics.grid_points", 256, "grid resolution per dimension for density metrics"},
        {"metrics.e_w2_batch", 100000, "sample count for the energy-W2 metric"},
        {"metrics.nll_holdout", 2048, "held-out target samples for the NLL metric"},
        {"metrics.angle_w2", false, "also compute the angular W2 metric"},
        {"metrics.angle_subbatch", 2000, "assignment sub-batch size for angle-W2"},
        {"metrics.angle_repeats", 5, "sub-batch repeats averaged for angle-W2"},
        {"metrics.angle_metric", "nearest", "circular distance: nearest | strict_mod_pi"},
        {"ablation.data", "target", "ablation training data: target | emulator"},
        {"ablation.train_size", 32768, "training rows per ablation variant"},
        {"ablation.val_size", 2048, "held-out rows per ablation variant"},
        {"seed", 7, "master seed; every artifact is reproducible from it"},
    };
}

nlohmann::json* locate(nlohmann::json& j, const std::string& dotted, bool create) {
    nlohmann::json* cur = &j;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string key = dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (dot == std::string::npos) {
            if (!create && !cur->contains(key)) return nullptr;
            return &(*cur)[key];
        }
        if (!create && !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        pos = dot + 1;
    }
}

void check_known_keys(const nlohmann::json& user, const nlohmann::json& defaults, const std::string& prefix) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!defaults.contains(it.key())) throw UsageError("unknown config key '" + path + "'");
        const auto& dv = defaults.at(it.key());
        if (path == "target.params") continue;  // free-form, validated by make_target
        if (dv.is_object()) {
            if (!it->is_object()) throw UsageError("config key '" + path + "' must be an object");
            check_known_keys(*it, dv, path);
        } else if (dv.is_array() != it->is_array() || (dv.is_string() != it->is_string()) ||
                   (dv.is_boolean() != it->is_boolean()) || (dv.is_number() && !it->is_number())) {
            throw UsageError("config key '" + path + "' has the wrong type");
        }
    }
}

void deep_merge(nlohmann::json& base, const nlohmann::json& user) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object() && it.key() != "params")
            deep_merge(base[it.key()], *it);
        else
            base[it.key()] = *it;
    }
}

}  // namespace

const std::vector<ConfigEntry>& config_schema() {
    static const std::vector<ConfigEntry> schema = build_schema();
    return schema;
}

nlohmann::json default_config() {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& e : config_schema()) *locate(j, e.path, true) = e.def;
    return j;
}

nlohmann::json merge_config(const nlohmann::json& user) {
    nlohmann::json base = default_config();
    if (user.is_null()) return base;
    require(user.is_object(), "config root must be a JSON object");
    check_known_keys(user, base, "");
    deep_merge(base, user);
    return base;
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    require(eq != std::string::npos && eq > 0, "override must look like key.path=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    nlohmann::json defaults = default_config();
    nlohmann::json* slot = locate(defaults, key, false);
    const bool is_param = key.rfind("target.params.", 0) == 0;
    require(slot != nullptr || is_param, "unknown config key in override: '" + key + "'");
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (const std::exception&) {
        parsed = value;  // bare strings allowed
    }
    *locate(config, key, true) = parsed;
}

ExperimentConfig ExperimentConfig::parse(const nlohmann::json& j) {
    ExperimentConfig c;
    c.raw = j;
    c.target_name = j.at("target").at("name").get<std::string>();
    c.target_params = j.at("target").at("params");

    const auto& em = j.at("emulator");
    c.emulator.objective = flow_objective_from_string(em.at("objective").get<std::string>());
    c.emulator.schedule = schedule_from_string(em.at("schedule").get<std::string>());
    c.emulator.coupling = coupling_from_string(em.at("coupling").get<std::string>());
    c.emulator.coupling_block = em.at("coupling_block").get<std::size_t>();
    c.emulator.hidden = em.at("hidden").get<std::vector<std::size_t>>();
    c.emulator.activation = activation_from_string(em.at("activation").get<std::string>());
    c.emulator.time_freqs = em.at("time_freqs").get<std::size_t>();
    c.emulator.epochs = em.at("epochs").get<std::size_t>();
    c.emulator.batch_size = em.at("batch_size").get<std::size_t>();
    c.emulator.lr = em.at("lr").get<double>();
    c.emulator.min_lr = em.at("min_lr").get<double>();
    c.emulator.lr_patience = em.at("lr_patience").get<std::size_t>();
    c.emulator.early_stop_patience = em.at("early_stop_patience").get<std::size_t>();
    c.emulator.ema_decay = em.at("ema_decay").get<double>();
    c.emulator.ema_stride = em.at("ema_stride").get<std::size_t>();
    c.emulator.cfm_sigma = em.at("cfm_sigma").get<double>();
    c.emulator.t_lo = em.at("t_lo").get<double>();
    c.emulator.t_hi = em.at("t_hi").get<double>();
    c.emulator.val_size = em.at("val_size").get<std::size_t>();
    c.emulator_train_size = em.at("train_size").get<std::size_t>();

    const auto& bias = j.at("data").at("bias");
    c.bias_enabled = bias.at("enabled").get<bool>();
    c.bias_coordinate = bias.at("coordinate").get<std::string>();
    c.bias_mu = bias.at("mu").get<double>();
    c.bias_kappa = bias.at("kappa").get<double>();
    c.bias_scale = bias.at("scale").get<double>();
    c.bias_offset = bias.at("offset").get<double>();

    const auto& eb = j.at("ebm");
    c.ebm.schedule = schedule_from_string(eb.at("schedule").get<std::string>());
    c.ebm.coupling = coupling_from_string(eb.at("coupling").get<std::string>());
    c.ebm.coupling_block = eb.at("coupling_block").get<std::size_t>();
    c.ebm.hidden = eb.at("hidden").get<std::vector<std::size_t>>();
    c.ebm.activation = activation_from_string(eb.at("activation").get<std::string>());
    c.ebm.time_freqs = eb.at("time_freqs").get<std::size_t>();
    c.ebm.negatives_count = eb.at("negatives").at("count").get<std::size_t>();
    c.ebm.negatives_std = eb.at("negatives").at("std").get<double>();
    c.ebm.negatives_boundary = negative_boundary_from_string(eb.at("negatives").at("boundary").get<std::string>());
    c.ebm.sm_weight = eb.at("loss").at("sm_weight").get<double>();
    c.ebm.nce_weight = eb.at("loss").at("nce_weight").get<double>();
    c.ebm.epochs = eb.at("epochs").get<std::size_t>();
    c.ebm.batch_size = eb.at("batch_size").get<std::size_t>();
    c.ebm.lr = eb.at("lr").get<double>();
    c.ebm.min_lr = eb.at("min_lr").get<double>();
    c.ebm.lr_patience = eb.at("lr_patience").get<std::size_t>();
    c.ebm.early_stop_patience = eb.at("early_stop_patience").get<std::size_t>();
    c.ebm.ema_decay = eb.at("ema_decay").get<double>();
    c.ebm.ema_stride = eb.at("ema_stride").get<std::size_t>();
    c.ebm.t_lo = eb.at("t_lo").get<double>();
    c.ebm.t_hi = eb.at("t_hi").get<double>();
    c.ebm.val_size = eb.at("val_size").get<std::size_t>();
    c.ebm_train_size = eb.at("train_size").get<std::size_t>();

    c.samples_n = j.at("samples").at("n").get<std::size_t>();
    c.samples_chunk = j.at("samples").at("chunk").get<std::size_t>();

    c.ode.atol = j.at("ode").at("atol").get<double>();
    c.ode.rtol = j.at("ode").at("rtol").get<double>();
    c.divergence = divergence_from_string(j.at("ode").at("divergence").get<std::string>());

    const auto& rw = j.at("reweight");
    c.reweight_coordinate = rw.at("coordinate").get<std::string>();
    c.region_lo = rw.at("region").at(0).get<double>();
    c.region_hi = rw.at("region").at(1).get<double>();
    c.bins = rw.at("bins").get<std::size_t>();
    c.ess_warn_frac = rw.at("ess_warn_frac").get<double>();

    const auto& mt = j.at("metrics");
    c.grid_points = mt.at("grid_points").get<std::size_t>();
    c.e_w2_batch = mt.at("e_w2_batch").get<std::size_t>();
    c.nll_holdout = mt.at("nll_holdout").get<std::size_t>();
    c.angle_w2_enabled = mt.at("angle_w2").get<bool>();
    c.angle_subbatch = mt.at("angle_subbatch").get<std::size_t>();
    c.angle_repeats = mt.at("angle_repeats").get<std::size_t>();
    c.angle_metric = mt.at("angle_metric").get<std::string>();

    const auto& ab = j.at("ablation");
    c.ablation_data = ab.at("data").get<std::string>();
    c.ablation_train_size = ab.at("train_size").get<std::size_t>();
    c.ablation_val_size = ab.at("val_size").get<std::size_t>();

    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

std::function<double(const double*)> coordinate_fn(const std::string& name) {
    if (name == "x0") return [](const double* x) { return x[0]; };
    if (name == "x1") return [](const double* x) { return x[1]; };
    if (name == "angle") return [](const double* x) { return std::atan2(x[1], x[0]); };
    throw UsageError("unknown coordinate '" + name + "' (expected x0, x1 or angle)");
}

namespace {

class StageTimer {
  public:
    void record(const std::string& name, double seconds) { stages_[name] = seconds; }
    nlohmann::json to_json() const { return stages_; }

    template <typename Fn>
    auto timed(const std::string& name, Fn&& fn) {
        const auto start = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            record(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        } else {
            auto out = fn();
            record(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
            return out;
        }
    }

  private:
    nlohmann::json stages_ = nlohmann::json::object();
};

struct RunState {
    std::string path;
    nlohmann::json stages = nlohmann::json::object();

    static RunState open(const std::string& dir) {
        RunState s;
        s.path = dir + "/run_state.json";
        if (file_exists(s.path)) s.stages = read_json(s.path).value("stages", nlohmann::json::object());
        return s;
    }

    bool done(const std::string& stage, const std::string& hash, const std::vector<std::string>& files) const {
        if (!stages.contains(stage)) return false;
        const auto& st = stages.at(stage);
        if (st.value("hash", "") != hash || st.value("status", "") != "done") return false;
        for (const auto& f : files)
            if (!file_exists(f)) return false;
        return true;
    }

    void mark(const std::string& stage, const std::string& hash) {
        stages[stage] = {{"hash", hash}, {"status", "done"}};
        write_json(path, {{"stages", stages}});
    }
};

std::vector<double> draw_dataset(const TargetDensity& target, const ExperimentConfig& cfg, Rng& rng,
                                 std::size_t n_rows) {
    std::vector<double> data = target.sample_matrix(rng, n_rows);
    if (cfg.bias_enabled) {
        auto coord = coordinate_fn(cfg.bias_coordinate);
        auto weight = [&](const double* x) {
            return von_mises_weight(coord(x), cfg.bias_mu, cfg.bias_kappa, cfg.bias_scale, cfg.bias_offset);
        };
        Rng resample_rng = rng.fork(Rng::hash_str("bias_resample"));
        data = bias_resample(data, n_rows, target.dim(), weight, n_rows, resample_rng);
    }
    return data;
}

CsvTable samples_to_csv(const EmulatorSampleSet& set) {
    CsvTable t;
    for (std::size_t k = 0; k < set.dim; ++k) t.headers.push_back("x" + std::to_string(k));
    const bool lik = !set.loglik.empty();
    if (lik) t.headers.push_back("loglik");
    const std::size_t n = set.size();
    t.values.reserve(n * t.headers.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < set.dim; ++k) t.values.push_back(set.x[i * set.dim + k]);
        if (lik) t.values.push_back(set.loglik[i]);
    }
    return t;
}

CsvTable ensemble_to_csv(const WeightedEnsemble& ens) {
    CsvTable t;
    for (std::size_t k = 0; k < ens.dim; ++k) t.headers.push_back("x" + std::to_string(k));
    t.headers.push_back("loglik");
    t.headers.push_back("log_weight");
    for (std::size_t i = 0; i < ens.size(); ++i) {
        for (std::size_t k = 0; k < ens.dim; ++k) t.values.push_back(ens.x[i * ens.dim + k]);
        t.values.push_back(ens.loglik[i]);
        t.values.push_back(ens.log_w[i]);
    }
    return t;
}

CsvTable histogram_to_csv(const FreeEnergyReport& rep) {
    CsvTable t;
    t.headers = {"bin_left", "bin_right", "density"};
    for (std::size_t i = 0; i < rep.densities.size(); ++i) {
        t.values.push_back(rep.edges[i]);
        t.values.push_back(rep.edges[i + 1]);
        t.values.push_back(rep.densities[i]);
    }
    return t;
}

GridQuadrature metric_grid(const TargetDensity& target, std::size_t points) {
    return GridQuadrature::make(target.default_lo(), target.default_hi(), points);
}

}  // namespace

PipelineResult run_full_pipeline(const nlohmann::json& merged, const std::string& out_dir) {
    const ExperimentConfig cfg = ExperimentConfig::parse(merged);
    auto target = make_target(cfg.target_name, cfg.target_params);
    require(!out_dir.empty(), "pipeline: output directory required");
    make_dirs(out_dir);
    write_json(out_dir + "/config.json", merged);

    RunState state = RunState::open(out_dir);
    StageTimer timer;
    Rng root(cfg.seed);

    // Stage hashes chain so a changed config field invalidates exactly the
    // stages downstream of it.
    const std::string h_data = json_hash(
        {{"target", merged.at("target")}, {"emulator_sizes", {cfg.emulator_train_size, cfg.emulator.val_size}},
         {"bias", merged.at("data")}, {"seed", cfg.seed}});
    const std::string h_emulator = json_hash({{"up", h_data}, {"emulator", merged.at("emulator")}});
    const std::string h_samples =
        json_hash({{"up", h_emulator}, {"samples", merged.at("samples")}, {"ode", merged.at("ode")}});
    const std::string h_ebm = json_hash({{"up", h_samples}, {"ebm", merged.at("ebm")}});
    const std::string h_weights = json_hash({{"up", {h_samples, h_ebm}}, {"reweight", merged.at("reweight")}});
    const std::string h_metrics = json_hash({{"up", h_weights}, {"metrics", merged.at("metrics")}});

    // -- data + emulator ---------------------------------------------------
    const std::string emulator_path = out_dir + "/emulator.ckpt";
    Rng data_rng = root.fork(Rng::hash_str("data"));
    Rng train_rng = root.fork(Rng::hash_str("train_emulator"));
    FlowModel emulator;
    if (state.done("emulator", h_emulator, {emulator_path})) {
        emulator = load_flow_model(emulator_path);
        timer.record("train_emulator", 0.0);
    } else {
        std::vector<double> data = timer.timed("draw_dataset", [&] {
            return draw_dataset(*target, cfg, data_rng, cfg.emulator_train_size + cfg.emulator.val_size);
        });
        emulator = timer.timed("train_emulator",
                               [&] { return train_flow(data, target->dim(), cfg.emulator, train_rng); });
        save_flow_model(emulator_path, emulator);
        state.mark("emulator", h_emulator);
    }

    // -- samples with exact likelihoods -------------------------------------
    const std::string samples_path = out_dir + "/samples.csv";
    const std::string samples_meta_path = out_dir + "/samples.meta.json";
    SampleOptions sopts;
    sopts.ode = cfg.ode;
    sopts.chunk = cfg.samples_chunk;
    sopts.with_loglik = true;
    sopts.divergence = cfg.divergence;
    EmulatorSampleSet samples;
    if (state.done("samples", h_samples, {samples_path, samples_meta_path})) {
        CsvTable t = read_csv(samples_path);
        samples.dim = target->dim();
        samples.metadata = read_json(samples_meta_path);
        std::vector<std::string> coords;
        for (std::size_t k = 0; k < samples.dim; ++k) coords.push_back("x" + std::to_string(k));
        samples.x = t.columns(coords);
        samples.loglik = t.columns({"loglik"});
        timer.record("sample", 0.0);
    } else {
        const std::uint64_t sample_seed = Rng::mix(cfg.seed, Rng::hash_str("sample"));
        samples = timer.timed("sample", [&] { return sample(emulator, cfg.samples_n, sample_seed, sopts); });
        write_csv(samples_path, samples_to_csv(samples));
        write_json(samples_meta_path, samples.metadata);
        state.mark("samples", h_samples);
    }
    const std::size_t n = samples.size();

    // -- EBM on emulator samples --------------------------------------------
    const std::string ebm_path = out_dir + "/ebm.ckpt";
    EnergyModel ebm;
    if (state.done("ebm", h_ebm, {ebm_path})) {
        ebm = load_energy_model(ebm_path);
        timer.record("train_ebm", 0.0);
    } else {
        const std::size_t rows = std::min(n, cfg.ebm_train_size + cfg.ebm.val_size);
        std::vector<double> ebm_data(samples.x.begin(), samples.x.begin() + rows * samples.dim);
        Rng ebm_rng = root.fork(Rng::hash_str("train_ebm"));
        ebm = timer.timed("train_ebm", [&] { return train_ebm(ebm_data, samples.dim, cfg.ebm, ebm_rng); });
        save_energy_model(ebm_path, ebm);
        state.mark("ebm", h_ebm);
    }

    // -- importance weights, both provenances --------------------------------
    // The exact path never touches the EBM; the EBM path never integrates.
    WeightedEnsemble ens_exact = timer.timed("weights_exact", [&] {
        return importance_weights(samples.x, n, *target, samples.loglik, "exact_likelihood", cfg.ess_warn_frac);
    });
    std::vector<double> ebm_loglik;
    WeightedEnsemble ens_ebm = timer.timed("weights_ebm", [&] {
        ebm_loglik = log_density_batch(ebm, samples.x, n);
        return importance_weights(samples.x, n, *target, ebm_loglik, "ebm_likelihood", cfg.ess_warn_frac);
    });
    write_csv(out_dir + "/weights_exact.csv", ensemble_to_csv(ens_exact));
    write_csv(out_dir + "/weights_ebm.csv", ensemble_to_csv(ens_ebm));

    // Per-sample likelihood timing probe for the speedup report.
    const std::size_t probe_n = std::min<std::size_t>(n, 1000);
    std::vector<double> probe_x(samples.x.begin(), samples.x.begin() + probe_n * samples.dim);
    const auto t_exact0 = std::chrono::steady_clock::now();
    (void)exact_log_likelihood(emulator, probe_x, probe_n, sopts);
    const double exact_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_exact0).count();
    const auto t_ebm0 = std::chrono::steady_clock::now();
    (void)log_density_batch(ebm, probe_x, probe_n);
    const double ebm_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_ebm0).count();

    // -- free energy ----------------------------------------------------------
    auto coord = coordinate_fn(cfg.reweight_coordinate);
    FreeEnergyOptions fopts;
    fopts.region_lo = cfg.region_lo;
    fopts.region_hi = cfg.region_hi;
    fopts.bins = cfg.bins;
    FreeEnergyReport fe_exact = free_energy_difference(ens_exact, coord, fopts);
    FreeEnergyReport fe_ebm = free_energy_difference(ens_ebm, coord, fopts);
    fe_exact.seed = cfg.seed;
    fe_ebm.seed = cfg.seed;
    write_json(out_dir + "/free_energy_exact.json", fe_exact.to_json());
    write_json(out_dir + "/free_energy_ebm.json", fe_ebm.to_json());
    write_csv(out_dir + "/free_energy_exact_hist.csv", histogram_to_csv(fe_exact));
    write_csv(out_dir + "/free_energy_ebm_hist.csv", histogram_to_csv(fe_ebm));

    // -- metrics ---------------------------------------------------------------
    MetricReport report;
    report.seed = cfg.seed;
    timer.timed("metrics", [&] {
        const std::size_t nb = std::min(cfg.e_w2_batch, n);
        Rng ref_rng = root.fork(Rng::hash_str("ew2_reference"));
        std::vector<double> ref = target->sample_matrix(ref_rng, nb);
        std::vector<double> e_model(nb), e_ref(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            e_model[i] = target->energy(samples.x.data() + i * samples.dim);
            e_ref[i] = target->energy(ref.data() + i * samples.dim);
        }
        report.e_w2 = energy_w2(e_model, e_ref);
        report.e_w2_batch = nb;

        Rng nll_rng = root.fork(Rng::hash_str("nll_holdout"));
        std::vector<double> holdout = target->sample_matrix(nll_rng, cfg.nll_holdout);
        NllReport nr = nll(emulator, holdout, cfg.nll_holdout, sopts);
        report.nll_mean = nr.mean;
        report.nll_std = nr.stddev;
        report.nll_batch = cfg.nll_holdout;

        GridQuadrature grid = metric_grid(*target, cfg.grid_points);
        report.density_l2 = grid_density_l2([&](const double* x) { return log_density(ebm, x); }, *target, grid);

        if (cfg.angle_w2_enabled) {
            auto afn = coordinate_fn("angle");
            std::vector<double> a(nb), b(nb);
            for (std::size_t i = 0; i < nb; ++i) {
                a[i] = afn(samples.x.data() + i * samples.dim);
                b[i] = afn(ref.data() + i * samples.dim);
            }
            AngleW2Options aopts;
            aopts.subbatch = cfg.angle_subbatch;
            aopts.repeats = cfg.angle_repeats;
            aopts.metric = cfg.angle_metric == "strict_mod_pi" ? AngleMetric::StrictModPi : AngleMetric::Nearest;
            aopts.seed = cfg.seed;
            report.t_w2 = angle_w2(a, nb, b, nb, 1, aopts);
        }
    });

    nlohmann::json metrics = report.to_json();
    metrics["ess"] = {{"exact", ens_exact.ess()},
                      {"ebm", ens_ebm.ess()},
                      {"exact_frac", ens_exact.ess() / static_cast<double>(ens_exact.size())},
                      {"ebm_frac", ens_ebm.ess() / static_cast<double>(ens_ebm.size())}};
    metrics["delta_f"] = {{"exact", fe_exact.delta_f},
                          {"ebm", fe_ebm.delta_f},
                          {"abs_diff", std::fabs(fe_exact.delta_f - fe_ebm.delta_f)}};
    metrics["warnings"] = {{"exact", ens_exact.warnings}, {"ebm", ens_ebm.warnings}};
    metrics["config_hash"] = h_metrics;
    write_json(out_dir + "/metrics.json", metrics);

    nlohmann::json timings = timer.to_json();
    timings["likelihood_per_sample"] = {
        {"exact_s", exact_s / static_cast<double>(probe_n)},
        {"ebm_s", ebm_s / static_cast<double>(probe_n)},
        {"speedup", ebm_s > 0.0 ? exact_s / ebm_s : 0.0},
        {"probe_n", probe_n}};
    write_json(out_dir + "/timings.json", timings);
    state.mark("metrics", h_metrics);

    PipelineResult out;
    out.run_dir = out_dir;
    out.metrics = metrics;
    out.timings = timings;
    out.delta_f_exact = fe_exact.delta_f;
    out.delta_f_ebm = fe_ebm.delta_f;
    return out;
}

AblationResult run_ablation(const nlohmann::json& merged, const std::vector<std::string>& variants,
                            const std::string& out_dir) {
    const ExperimentConfig cfg = ExperimentConfig::parse(merged);
    require(!variants.empty(), "ablation: need at least one variant");
    for (const auto& v : variants)
        require(v == "both" || v == "nce_only" || v == "sm_only",
                "ablation: unknown variant '" + v + "' (expected both, nce_only, sm_only)");
    auto target = make_target(cfg.target_name, cfg.target_params);
    make_dirs(out_dir);
    write_json(out_dir + "/config.json", merged);

    // One dataset shared by every variant.
    const std::size_t rows = cfg.ablation_train_size + cfg.ablation_val_size;
    std::vector<double> data;
    if (cfg.ablation_data == "emulator") {
        Rng em_data_rng = Rng(cfg.seed).fork(Rng::hash_str("data"));
        Rng em_train_rng = Rng(cfg.seed).fork(Rng::hash_str("train_emulator"));
        std::vector<double> em_data =
            draw_dataset(*target, cfg, em_data_rng, cfg.emulator_train_size + cfg.emulator.val_size);
        FlowModel emulator = train_flow(em_data, target->dim(), cfg.emulator, em_train_rng);
        SampleOptions sopts;
        sopts.ode = cfg.ode;
        sopts.chunk = cfg.samples_chunk;
        data = sample(emulator, rows, Rng::mix(cfg.seed, Rng::hash_str("ablation_sample")), sopts).x;
    } else {
        require(cfg.ablation_data == "target", "ablation.data must be 'target' or 'emulator'");
        Rng data_rng = Rng(cfg.seed).fork(Rng::hash_str("ablation_data"));
        data = target->sample_matrix(data_rng, rows);
    }

    GridQuadrature grid = metric_grid(*target, cfg.grid_points);
    nlohmann::json per_variant = nlohmann::json::object();
    for (const auto& v : variants) {
        EbmConfig vcfg = cfg.ebm;
        vcfg.val_size = cfg.ablation_val_size;
        vcfg.sm_weight = v == "nce_only" ? 0.0 : cfg.ebm.sm_weight;
        vcfg.nce_weight = v == "sm_only" ? 0.0 : cfg.ebm.nce_weight;
        // Identical training stream per variant: same init, batches and times.
        Rng train_rng(Rng::mix(cfg.seed, Rng::hash_str("ablation_train")));
        TrainLog log;
        EnergyModel model = train_ebm(data, target->dim(), vcfg, train_rng, &log);
        const double err =
            grid_density_l2([&](const double* x) { return log_density(model, x); }, *target, grid);
        save_energy_model(out_dir + "/ebm_" + v + ".ckpt", model);
        per_variant[v] = {{"density_l2", err},
                          {"sm_weight", vcfg.sm_weight},
                          {"nce_weight", vcfg.nce_weight},
                          {"epochs_run", log.epochs_run}};
    }

    nlohmann::json report = {{"target", cfg.target_name}, {"seed", cfg.seed}, {"variants", per_variant}};
    if (per_variant.contains("both") && per_variant.contains("nce_only") && per_variant.contains("sm_only")) {
        const double e_both = per_variant["both"]["density_l2"].get<double>();
        const double e_nce = per_variant["nce_only"]["density_l2"].get<double>();
        const double e_sm = per_variant["sm_only"]["density_l2"].get<double>();
        report["best_is_both"] = e_both < e_nce && e_both < e_sm;
    }
    write_json(out_dir + "/ablation.json", report);
    return {report, out_dir};
}

}  // namespace boltznce
