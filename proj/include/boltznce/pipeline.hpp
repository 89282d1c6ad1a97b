#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "boltznce/ebm.hpp"
#include "boltznce/emulator.hpp"
#include "boltznce/reweight.hpp"

namespace boltznce {

struct ConfigEntry {
    std::string path;  // dotted key
    nlohmann::json def;
    std::string desc;
};

/// Every configuration key with its default and documentation line.
const std::vector<ConfigEntry>& config_schema();

nlohmann::json default_config();

/// Overlays user JSON on the defaults; unknown keys or type mismatches are
/// usage errors (target.params is free-form and validated by the target).
nlohmann::json merge_config(const nlohmann::json& user);

/// Applies one dotted-key override, e.g. "ebm.loss.sm_weight=0".
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Typed view over the merged config.
struct ExperimentConfig {
    nlohmann::json raw;

    std::string target_name;
    nlohmann::json target_params;

    FlowTrainConfig emulator;
    std::size_t emulator_train_size = 65536;

    bool bias_enabled = false;
    std::string bias_coordinate = "angle";
    double bias_mu = 1.0, bias_kappa = 10.0, bias_scale = 150.0, bias_offset = 1.0;

    EbmConfig ebm;
    std::size_t ebm_train_size = 65536;

    std::size_t samples_n = 100000;
    std::size_t samples_chunk = 2048;

    OdeOptions ode;
    DivergenceMode divergence = DivergenceMode::ExactAutodiff;

    std::string reweight_coordinate = "x0";
    double region_lo = 0.0, region_hi = 2.0;
    std::size_t bins = 100;
    double ess_warn_frac = 0.01;

    std::size_t grid_points = 256;
    std::size_t e_w2_batch = 100000;
    std::size_t nll_holdout = 2048;
    bool angle_w2_enabled = false;
    std::size_t angle_subbatch = 2000;
    std::size_t angle_repeats = 5;
    std::string angle_metric = "nearest";

    std::string ablation_data = "target";
    std::size_t ablation_train_size = 32768;
    std::size_t ablation_val_size = 2048;

    std::uint64_t seed = 7;

    static ExperimentConfig parse(const nlohmann::json& merged);
};

/// Scalar collective coordinates on 2D samples: "x0", "x1" (components) or
/// "angle" (atan2(x1, x0)).
std::function<double(const double*)> coordinate_fn(const std::string& name);

struct PipelineResult {
    std::string run_dir;
    nlohmann::json metrics;
    nlohmann::json timings;
    double delta_f_exact = 0.0;
    double delta_f_ebm = 0.0;
};

/// Full workflow: dataset -> emulator -> samples (with exact likelihoods) ->
/// EBM -> both reweighting provenances -> free-energy + metric reports.
/// Stage artifacts are content-addressed by config hash; reruns resume after
/// the last completed stage whose hash still matches.
PipelineResult run_full_pipeline(const nlohmann::json& merged_config, const std::string& out_dir);

struct AblationResult {
    nlohmann::json report;
    std::string run_dir;
};

/// Trains one EBM per loss variant on identical data and training seed;
/// reports the grid-density error per variant.
AblationResult run_ablation(const nlohmann::json& merged_config, const std::vector<std::string>& variants,
                            const std::string& out_dir);

}  // namespace boltznce
