// boltznce: train flow emulators and energy-based likelihood models on 2D
// reference targets, reweight generated samples to the Boltzmann
// distribution, and report free-energy / distribution metrics.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "boltznce/artifacts.hpp"
#include "boltznce/metrics.hpp"
#include "boltznce/pipeline.hpp"

using namespace boltznce;

namespace {

std::string config_reference() {
    std::string out = "Configuration keys (JSON file via --config, overridable with --set key=value):\n";
    for (const auto& e : config_schema()) {
        out += "  " + e.path;
        out += std::string(e.path.size() < 28 ? 28 - e.path.size() : 1, ' ');
        out += "default " + e.def.dump() + "  " + e.desc + "\n";
    }
    return out;
}

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::int64_t seed = -1;
    double atol = -1.0, rtol = -1.0;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--config", c.config_path, "JSON config file (defaults used when omitted)");
    cmd->add_option("--set", c.overrides, "config override key.path=value (repeatable)");
    cmd->add_option("--seed", c.seed, "overrides config seed");
    cmd->add_option("--atol", c.atol, "overrides ode.atol");
    cmd->add_option("--rtol", c.rtol, "overrides ode.rtol");
}

nlohmann::json effective_config(const CommonOpts& c) {
    nlohmann::json user = nlohmann::json::object();
    if (!c.config_path.empty()) user = read_json(c.config_path);
    nlohmann::json merged = merge_config(user);
    for (const auto& o : c.overrides) apply_override(merged, o);
    if (c.seed >= 0) merged["seed"] = static_cast<std::uint64_t>(c.seed);
    if (c.atol > 0.0) merged["ode"]["atol"] = c.atol;
    if (c.rtol > 0.0) merged["ode"]["rtol"] = c.rtol;
    return merged;
}

std::vector<double> read_coords(const CsvTable& t, std::size_t dim) {
    std::vector<std::string> names;
    for (std::size_t k = 0; k < dim; ++k) names.push_back("x" + std::to_string(k));
    return t.columns(names);
}

CsvTable coords_table(const std::vector<double>& x, std::size_t dim, const std::vector<double>* loglik,
                      const std::vector<double>* logw) {
    CsvTable t;
    const std::size_t n = dim == 0 ? 0 : x.size() / dim;
    for (std::size_t k = 0; k < dim; ++k) t.headers.push_back("x" + std::to_string(k));
    if (loglik) t.headers.push_back("loglik");
    if (logw) t.headers.push_back("log_weight");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < dim; ++k) t.values.push_back(x[i * dim + k]);
        if (loglik) t.values.push_back((*loglik)[i]);
        if (logw) t.values.push_back((*logw)[i]);
    }
    return t;
}

int run(int argc, char** argv) {
    CLI::App app{"boltznce: flow emulators + energy-based likelihoods for Boltzmann reweighting"};
    app.require_subcommand(1);
    app.footer(config_reference());

    // ---- pipeline -----------------------------------------------------------
    CommonOpts pl;
    std::string pl_out;
    auto* cmd_pl = app.add_subcommand("pipeline", "run the full workflow into a run directory");
    add_common(cmd_pl, pl);
    cmd_pl->add_option("--out", pl_out, "run directory")->required();

    // ---- train-emulator -------------------------------------------------------
    CommonOpts te;
    std::string te_out = "emulator.ckpt";
    auto* cmd_te = app.add_subcommand("train-emulator", "train the flow emulator on target samples");
    add_common(cmd_te, te);
    cmd_te->add_option("--out", te_out, "checkpoint path");

    // ---- sample ---------------------------------------------------------------
    CommonOpts sa;
    std::string sa_ckpt, sa_out = "samples.csv";
    std::size_t sa_n = 10000, sa_chunk = 2048;
    bool sa_loglik = false;
    auto* cmd_sa = app.add_subcommand("sample", "draw samples from a trained emulator");
    add_common(cmd_sa, sa);
    cmd_sa->add_option("--ckpt", sa_ckpt, "emulator checkpoint")->required();
    cmd_sa->add_option("--n", sa_n, "sample count");
    cmd_sa->add_option("--chunk", sa_chunk, "samples per ODE chunk");
    cmd_sa->add_flag("--with-loglik", sa_loglik, "also integrate exact log-likelihoods");
    cmd_sa->add_option("--out", sa_out, "output CSV (metadata sidecar .meta.json)");

    // ---- likelihood -------------------------------------------------------------
    CommonOpts li;
    std::string li_ckpt, li_samples, li_out = "loglik.csv";
    std::size_t li_chunk = 2048;
    auto* cmd_li = app.add_subcommand("likelihood", "exact log-likelihood of samples under an emulator");
    add_common(cmd_li, li);
    cmd_li->add_option("--ckpt", li_ckpt, "emulator checkpoint")->required();
    cmd_li->add_option("--samples", li_samples, "input CSV with x0..x{d-1} columns")->required();
    cmd_li->add_option("--chunk", li_chunk, "samples per ODE chunk");
    cmd_li->add_option("--out", li_out, "output CSV");

    // ---- train-ebm -----------------------------------------------------------------
    CommonOpts tb;
    std::string tb_samples, tb_out = "ebm.ckpt";
    bool tb_from_target = false;
    auto* cmd_tb = app.add_subcommand("train-ebm", "train the energy model on samples");
    add_common(cmd_tb, tb);
    cmd_tb->add_option("--samples", tb_samples, "training CSV (emulator samples)");
    cmd_tb->add_flag("--from-target", tb_from_target, "train on exact target draws instead of a CSV");
    cmd_tb->add_option("--out", tb_out, "checkpoint path");

    // ---- ablation --------------------------------------------------------------------
    CommonOpts ab;
    std::string ab_out;
    std::vector<std::string> ab_variants{"both", "nce_only", "sm_only"};
    auto* cmd_ab = app.add_subcommand("ablation", "train one EBM per loss variant and compare density errors");
    add_common(cmd_ab, ab);
    cmd_ab->add_option("--variants", ab_variants, "subset of: both nce_only sm_only");
    cmd_ab->add_option("--out", ab_out, "output directory")->required();

    // ---- reweight ------------------------------------------------------------------------
    CommonOpts rw;
    std::string rw_samples, rw_ebm, rw_out = "weights.csv";
    auto* cmd_rw = app.add_subcommand("reweight", "attach importance weights to samples");
    add_common(cmd_rw, rw);
    cmd_rw->add_option("--samples", rw_samples, "CSV with coordinates (+ loglik column for the exact path)")
        ->required();
    cmd_rw->add_option("--ebm", rw_ebm, "EBM checkpoint; when given, likelihoods come from E(0,x)");
    cmd_rw->add_option("--out", rw_out, "output CSV");

    // ---- free-energy ------------------------------------------------------------------------
    CommonOpts fe;
    std::string fe_weights, fe_out = "free_energy.json", fe_hist, fe_coord = "x0";
    std::vector<double> fe_region{0.0, 2.0};
    std::size_t fe_bins = 100;
    auto* cmd_fe = app.add_subcommand("free-energy", "free-energy difference from a weights CSV");
    add_common(cmd_fe, fe);
    cmd_fe->add_option("--weights", fe_weights, "CSV with coordinates and log_weight")->required();
    cmd_fe->add_option("--region", fe_region, "positive-state interval")->expected(2);
    cmd_fe->add_option("--bins", fe_bins, "histogram bins");
    cmd_fe->add_option("--coordinate", fe_coord, "collective coordinate: x0 | x1 | angle");
    cmd_fe->add_option("--out", fe_out, "report JSON path");
    cmd_fe->add_option("--hist", fe_hist, "also write the histogram CSV here");

    // ---- metrics -------------------------------------------------------------------------------
    CommonOpts mt;
    std::string mt_samples, mt_reference, mt_out = "metrics.json";
    bool mt_angles = false;
    auto* cmd_mt = app.add_subcommand("metrics", "distribution metrics between two sample CSVs");
    add_common(cmd_mt, mt);
    cmd_mt->add_option("--samples", mt_samples, "generated samples CSV")->required();
    cmd_mt->add_option("--reference", mt_reference, "reference samples CSV")->required();
    cmd_mt->add_flag("--angles", mt_angles, "also compute angle-W2 on atan2(x1, x0)");
    cmd_mt->add_option("--out", mt_out, "report JSON path");

    // ---- density-grid -----------------------------------------------------------------------------
    CommonOpts dg;
    std::string dg_ebm, dg_emulator, dg_out = "density_grid.csv";
    bool dg_target = false;
    std::size_t dg_points = 128;
    std::vector<double> dg_lo, dg_hi;
    std::size_t dg_chunk = 2048;
    auto* cmd_dg = app.add_subcommand("density-grid", "dump log-density over a grid for plotting");
    add_common(cmd_dg, dg);
    cmd_dg->add_option("--ebm", dg_ebm, "EBM checkpoint: dumps E(0, x)");
    cmd_dg->add_option("--emulator", dg_emulator, "emulator checkpoint: dumps exact log-likelihood");
    cmd_dg->add_flag("--target", dg_target, "dump the exact target log-density from the config");
    cmd_dg->add_option("--points", dg_points, "grid resolution per dimension");
    cmd_dg->add_option("--lo", dg_lo, "lower bounds (2 values; default: target bounds)")->expected(2);
    cmd_dg->add_option("--hi", dg_hi, "upper bounds (2 values; default: target bounds)")->expected(2);
    cmd_dg->add_option("--chunk", dg_chunk, "grid points per ODE chunk (emulator mode)");
    cmd_dg->add_option("--out", dg_out, "output CSV");

    CLI11_PARSE(app, argc, argv);

    if (cmd_pl->parsed()) {
        PipelineResult r = run_full_pipeline(effective_config(pl), pl_out);
        std::printf("pipeline done: %s\n", r.run_dir.c_str());
        std::printf("  delta_f exact=%.6f ebm=%.6f |diff|=%.6f\n", r.delta_f_exact, r.delta_f_ebm,
                    std::fabs(r.delta_f_exact - r.delta_f_ebm));
        std::printf("  ess exact=%.1f ebm=%.1f\n", r.metrics["ess"]["exact"].get<double>(),
                    r.metrics["ess"]["ebm"].get<double>());
        const auto& lps = r.timings["likelihood_per_sample"];
        std::printf("  likelihood per sample: exact %.3e s, ebm %.3e s (speedup %.1fx)\n",
                    lps["exact_s"].get<double>(), lps["ebm_s"].get<double>(), lps["speedup"].get<double>());
        return 0;
    }

    if (cmd_te->parsed()) {
        nlohmann::json merged = effective_config(te);
        ExperimentConfig cfg = ExperimentConfig::parse(merged);
        auto target = make_target(cfg.target_name, cfg.target_params);
        Rng root(cfg.seed);
        Rng data_rng = root.fork(Rng::hash_str("data"));
        std::vector<double> data = target->sample_matrix(data_rng, cfg.emulator_train_size + cfg.emulator.val_size);
        Rng train_rng = root.fork(Rng::hash_str("train_emulator"));
        TrainLog log;
        FlowModel model = train_flow(data, target->dim(), cfg.emulator, train_rng, &log);
        save_flow_model(te_out, model);
        std::printf("trained %s emulator on %s: %zu epochs, final val loss %.6g -> %s\n",
                    to_string(cfg.emulator.objective).c_str(), cfg.target_name.c_str(), log.epochs_run,
                    log.val_loss.empty() ? 0.0 : log.val_loss.back(), te_out.c_str());
        return 0;
    }

    if (cmd_sa->parsed()) {
        nlohmann::json merged = effective_config(sa);
        ExperimentConfig cfg = ExperimentConfig::parse(merged);
        FlowModel model = load_flow_model(sa_ckpt);
        SampleOptions opts;
        opts.ode = cfg.ode;
        opts.chunk = sa_chunk;
        opts.with_loglik = sa_loglik;
        opts.divergence = cfg.divergence;
        EmulatorSampleSet set = sample(model, sa_n, cfg.seed, opts);
        write_csv(sa_out, coords_table(set.x, set.dim, set.loglik.empty() ? nullptr : &set.loglik, nullptr));
        write_json(sa_out + ".meta.json", set.metadata);
        std::printf("wrote %zu samples to %s\n", set.size(), sa_out.c_str());
        return 0;
    }

    if (cmd_li->parsed()) {
        nlohmann::json merged = effective_config(li);
        ExperimentConfig cfg = ExperimentConfig::parse(merged);
        FlowModel model = load_flow_model(li_ckpt);
        CsvTable t = read_csv(li_samples);
        std::vector<double> x = read_coords(t, model.dim());
        SampleOptions opts;
        opts.ode = cfg.ode;
        opts.chunk = li_chunk;
        opts.divergence = cfg.divergence;
        LikelihoodResult r = exact_log_likelihood(model, x, t.rows(), opts);
        write_csv(li_out, coords_table(x, model.dim(), &r.loglik, nullptr));
        if (r.approximate)
            std::fprintf(stderr, "note: endpoint model, likelihoods integrate only to t=1e-3 (approximate)\n");
        std::printf("wrote %zu log-likelihoods to %s\n", r.loglik.size(), li_out.c_str());
        return 0;
    }

    if (cmd_tb->parsed()) {
        nlohmann::json merged = effective_config(tb);
        ExperimentConfig cfg = ExperimentConfig::parse(merged);
        std::vector<double> data;
        std::size_t dim = 2;
        if (tb_from_target) {
            auto target = make_target(cfg.target_name, cfg.target_params);
            dim = target->dim();
            Rng data_rng = Rng(cfg.seed).fork(Rng::hash_str("ablation_data"));
            data = target->sample_matrix(data_rng, cfg.ebm_train_size + cfg.ebm.val_size);
        } else {
            require(!tb_samples.empty(), "train-ebm: need --samples or --from-target");
            CsvTable t = read_csv(tb_samples);
            data = read_coords(t, dim);
            const std::size_t rows = std::min(t.rows(), cfg.ebm_train_size + cfg.ebm.val_size);
            data.resize(rows * dim);
        }
        Rng train_rng = Rng(cfg.seed).fork(Rng::hash_str("train_ebm"));
        TrainLog log;
        EnergyModel model = train_ebm(data, dim, cfg.ebm, train_rng, &log);
        save_energy_model(tb_out, model);
        std::printf("trained ebm: %zu epochs, final val loss %.6g -> %s\n", log.epochs_run,
                    log.val_loss.empty() ? 0.0 : log.val_loss.back(), tb_out.c_str());
        return 0;
    }

    if (cmd_ab->parsed()) {
        AblationResult r = run_ablation(effective_config(ab), ab_variants, ab_out);
        for (const auto& [name, v] : r.report["variants"].items())
            std::printf("  %-10s density_l2 = %.6f\n", name.c_str(), v["density_l2"].get<double>());
        if (r.report.contains("best_is_both"))
            std::printf("  best_is_both: %s\n", r.report["best_is_both"].get<bool>() ? "true" : "false");
        return 0;
    }

    if (cmd_rw->parsed()) {
        nlohmann::json merged = effective_config(rw);
        ExperimentConfig cfg = ExperimentConfig::parse(merged);
        auto target = make_target(cfg.target_name, cfg.target_params);
        CsvTable t = read_csv(rw_samples);
        std::vector<double> x = read_coords(t, target->dim());
        std::vector<double> loglik;
        std::string provenance;
        if (!rw_ebm.empty()) {
            EnergyModel ebm = load_energy_model(rw_ebm);
            loglik = log_density_batch(ebm, x, t.rows());
            provenance = "ebm_likelihood";
        } else {
            loglik = t.columns({"loglik"});
            provenance = "exact_likelihood";
        }
        WeightedEnsemble ens = importance_weights(x, t.rows(), *target, loglik, provenance, cfg.ess_warn_frac);
        write_csv(rw_out, coords_table(ens.x, ens.dim, &ens.loglik, &ens.log_w));
        for (const auto& w : ens.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
        std::printf("wrote %zu weighted samples (%s) to %s; ESS = %.1f (%.3f n)\n", ens.size(),
                    provenance.c_str(), rw_out.c_str(), ens.ess(), ens.ess() / static_cast<double>(ens.size()));
        return 0;
    }

    if (cmd_fe->parsed()) {
        CsvTable t = read_csv(fe_weights);
        WeightedEnsemble ens;
        ens.dim = 0;
        while (true) {
            try {
                (void)t.col("x" + std::to_string(ens.dim));
                ++ens.dim;
            } catch (const IoError&) {
                break;
            }
        }
        require(ens.dim >= 1, "free-energy: weights CSV has no coordinate columns");
        ens.x = read_coords(t, ens.dim);
        ens.log_w = t.columns({"log_weight"});
        ens.loglik.assign(ens.size(), 0.0);
        FreeEnergyOptions opts;
        opts.region_lo = fe_region[0];
        opts.region_hi = fe_region[1];
        opts.bins = fe_bins;
        FreeEnergyReport rep = free_energy_difference(ens, coordinate_fn(fe_coord), opts);
        nlohmann::json merged = effective_config(fe);
        rep.seed = merged.at("seed").get<std::uint64_t>();
        write_json(fe_out, rep.to_json());
        if (!fe_hist.empty()) {
            CsvTable h;
            h.headers = {"bin_left", "bin_right", "density"};
            for (std::size_t i = 0; i < rep.densities.size(); ++i) {
                h.values.push_back(rep.edges[i]);
                h.values.push_back(rep.edges[i + 1]);
                h.values.push_back(rep.densities[i]);
            }
            write_csv(fe_hist, h);
        }
        if (!rep.warning.empty()) std::fprintf(stderr, "warning: %s\n", rep.warning.c_str());
        std::printf("delta_f = %.6f (region [%g, %g], %zu bins) -> %s\n", rep.delta_f, rep.region_lo,
                    rep.region_hi, fe_bins, fe_out.c_str());
        return 0;
    }

    if (cmd_mt->parsed()) {
        nlohmann::json merged = effective_config(mt);
        ExperimentConfig cfg = ExperimentConfig::parse(merged);
        auto target = make_target(cfg.target_name, cfg.target_params);
        CsvTable ta = read_csv(mt_samples), tb2 = read_csv(mt_reference);
        std::vector<double> xa = read_coords(ta, target->dim()), xb = read_coords(tb2, target->dim());
        std::vector<double> ea(ta.rows()), eb(tb2.rows());
        for (std::size_t i = 0; i < ta.rows(); ++i) ea[i] = target->energy(xa.data() + i * target->dim());
        for (std::size_t i = 0; i < tb2.rows(); ++i) eb[i] = target->energy(xb.data() + i * target->dim());
        MetricReport rep;
        rep.seed = cfg.seed;
        rep.e_w2 = energy_w2(ea, eb);
        rep.e_w2_batch = std::min(ta.rows(), tb2.rows());
        if (mt_angles) {
            auto afn = coordinate_fn("angle");
            std::vector<double> aa(ta.rows()), ab2(tb2.rows());
            for (std::size_t i = 0; i < ta.rows(); ++i) aa[i] = afn(xa.data() + i * target->dim());
            for (std::size_t i = 0; i < tb2.rows(); ++i) ab2[i] = afn(xb.data() + i * target->dim());
            AngleW2Options aopts;
            aopts.subbatch = cfg.angle_subbatch;
            aopts.repeats = cfg.angle_repeats;
            aopts.metric = cfg.angle_metric == "strict_mod_pi" ? AngleMetric::StrictModPi : AngleMetric::Nearest;
            aopts.seed = cfg.seed;
            rep.t_w2 = angle_w2(aa, ta.rows(), ab2, tb2.rows(), 1, aopts);
        }
        write_json(mt_out, rep.to_json());
        std::printf("%-24s %10s %10s %10s %10s %10s\n", "label", "E-W2", "T-W2", "NLL", "NLL std", "dens L2");
        std::printf("%s\n", rep.summary_line("samples vs reference").c_str());
        return 0;
    }

    if (cmd_dg->parsed()) {
        nlohmann::json merged = effective_config(dg);
        ExperimentConfig cfg = ExperimentConfig::parse(merged);
        auto target = make_target(cfg.target_name, cfg.target_params);
        std::vector<double> lo = dg_lo.empty() ? target->default_lo() : dg_lo;
        std::vector<double> hi = dg_hi.empty() ? target->default_hi() : dg_hi;
        GridQuadrature grid = GridQuadrature::make(lo, hi, dg_points);
        const std::size_t n = grid.size();
        std::vector<double> pts(n * grid.dim());
        for (std::size_t i = 0; i < n; ++i) grid.node(i, pts.data() + i * grid.dim());
        std::vector<double> logd(n);
        const int n_modes = (!dg_ebm.empty()) + (!dg_emulator.empty()) + (dg_target ? 1 : 0);
        require(n_modes == 1, "density-grid: choose exactly one of --ebm, --emulator, --target");
        if (!dg_ebm.empty()) {
            EnergyModel ebm = load_energy_model(dg_ebm);
            logd = log_density_batch(ebm, pts, n);
        } else if (!dg_emulator.empty()) {
            FlowModel model = load_flow_model(dg_emulator);
            SampleOptions opts;
            opts.ode = cfg.ode;
            opts.chunk = dg_chunk;
            opts.divergence = cfg.divergence;
            logd = exact_log_likelihood(model, pts, n, opts).loglik;
        } else {
            for (std::size_t i = 0; i < n; ++i) logd[i] = target->log_density(pts.data() + i * grid.dim());
        }
        CsvTable t;
        for (std::size_t k = 0; k < grid.dim(); ++k) t.headers.push_back("x" + std::to_string(k));
        t.headers.push_back("log_density");
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < grid.dim(); ++k) t.values.push_back(pts[i * grid.dim() + k]);
            t.values.push_back(logd[i]);
        }
        write_csv(dg_out, t);
        std::printf("wrote %zu grid points to %s\n", n, dg_out.c_str());
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
