#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "boltznce/coupling.hpp"
#include "boltznce/interpolant.hpp"
#include "boltznce/net.hpp"
#include "boltznce/ode.hpp"

namespace boltznce {

enum class FlowObjective { VectorField, Endpoint, Cfm };

FlowObjective flow_objective_from_string(const std::string& s);
std::string to_string(FlowObjective o);

/// The net predicts either the velocity v(t,x) directly or the data
/// endpoint x0_hat(t,x) converted to a velocity at sampling time.
enum class FlowParameterization { VectorField, Endpoint };

struct FlowTrainConfig {
    FlowObjective objective = FlowObjective::VectorField;
    ScheduleKind schedule = ScheduleKind::Linear;
    CouplingMode coupling = CouplingMode::Ot;
    std::size_t coupling_block = 0;  // 0 = whole batch in one assignment
    std::vector<std::size_t> hidden{128, 128, 128};
    Activation activation = Activation::Tanh;
    std::size_t time_freqs = 8;
    std::size_t epochs = 1000;
    std::size_t batch_size = 512;
    double lr = 1e-3;
    double min_lr = 1e-5;
    std::size_t lr_patience = 20;
    std::size_t early_stop_patience = 100;
    double ema_decay = 0.999;
    std::size_t ema_stride = 10;
    double cfm_sigma = 0.0;
    // Uniform t window; keeps the score/endpoint targets off the exact boundaries.
    double t_lo = 1e-5;
    double t_hi = 1.0 - 1e-5;
    std::size_t val_size = 2048;
};

struct TrainLog {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t epochs_run = 0;
    std::uint64_t iterations = 0;
    double final_lr = 0.0;
    bool early_stopped = false;

    nlohmann::json to_json() const;
};

/// Trained Boltzmann emulator. Inference runs on the EMA weights.
struct FlowModel {
    FlowParameterization parameterization = FlowParameterization::VectorField;
    InterpolantSchedule schedule;
    Mlp net;                  // raw trained parameters
    std::vector<double> ema;  // shadow used for sampling/likelihoods
    AdamState adam;
    nlohmann::json train_meta;

    std::size_t dim() const { return net.spec.x_dim; }
    Mlp inference_net() const {
        Mlp m = net;
        m.params = ema;
        return m;
    }
    double t_floor() const {
        return parameterization == FlowParameterization::Endpoint ? kEndpointTimeFloor : 0.0;
    }
};

/// Minimizes the stated objective over coupled (x0, x1 ~ N(0,I)) pairs with
/// t ~ U(t_lo, t_hi). data is row-major [n x dim]; the last val_size rows are
/// held out for the plateau scheduler / early stopping.
FlowModel train_flow(const std::vector<double>& data, std::size_t dim, const FlowTrainConfig& cfg, Rng& rng,
                     TrainLog* log = nullptr);

/// Velocity field of a trained model, with exact autodiff divergence.
/// Holds mutable evaluation buffers: use one instance per thread.
class FlowField final : public BatchField {
  public:
    FlowField(const FlowModel& model);

    void eval(double t, const double* x, double* v, std::size_t batch) const override;
    void divergence_exact(double t, const double* x, double* div, std::size_t batch) const override;
    bool has_exact_divergence() const override { return true; }

    /// One forward pass shared between value and divergence.
    void eval_with_divergence_exact(double t, const double* x, double* v, double* div,
                                    std::size_t batch) const override;

  private:
    void net_forward(double t, const double* x, std::size_t batch, double* out) const;
    void trace_jacobian(double t, const double* x, std::size_t batch, double* tr) const;

    FlowParameterization param_;
    InterpolantSchedule schedule_;
    Mlp net_;  // EMA weights
    mutable MlpWork work_;
    mutable std::vector<double> buf_, dot_, ydot_;
};

struct EmulatorSampleSet {
    std::size_t dim = 0;
    std::vector<double> x;       // [n x dim]
    std::vector<double> loglik;  // empty, or one value per sample
    nlohmann::json metadata;

    std::size_t size() const { return dim == 0 ? 0 : x.size() / dim; }
};

struct SampleOptions {
    OdeOptions ode;
    std::size_t chunk = 2048;
    bool with_loglik = false;
    DivergenceMode divergence = DivergenceMode::ExactAutodiff;
};

/// Draws x1 ~ N(0,I) and integrates the flow from t=1 down to t=0
/// (vector-field) or t=1e-3 (endpoint). Fixed seed => bit-identical output.
EmulatorSampleSet sample(const FlowModel& model, std::size_t n, std::uint64_t seed, const SampleOptions& opts = {});

struct LikelihoodResult {
    std::vector<double> loglik;
    /// Endpoint models integrate only down to t=1e-3, so their likelihoods
    /// are approximate.
    bool approximate = false;
};

/// log p(x) by reverse integration (data time up to t=1) accumulating the
/// divergence, evaluated in chunks.
LikelihoodResult exact_log_likelihood(const FlowModel& model, const std::vector<double>& x, std::size_t n,
                                      const SampleOptions& opts = {});

double exact_log_likelihood(const FlowModel& model, const double* x, const OdeOptions& ode = {},
                            DivergenceMode mode = DivergenceMode::ExactAutodiff);

struct NllReport {
    double mean = 0.0;
    double stddev = 0.0;  // within-run spread over all samples
    std::vector<double> batch_means;  // over consecutive batches of batch_size
    double stddev_across_batches = 0.0;
    std::size_t batch_size = 1000;
    bool approximate = false;

    nlohmann::json to_json() const;
};

NllReport nll(const FlowModel& model, const std::vector<double>& holdout, std::size_t n,
              const SampleOptions& opts = {}, std::size_t batch_size = 1000);

/// Standard normal log density in d dimensions.
double log_standard_normal(const double* x, std::size_t d);

/// Content hash of the inference parameters, for sample-set provenance.
std::string model_param_hash(const FlowModel& m);

void save_flow_model(const std::string& path, const FlowModel& m);
FlowModel load_flow_model(const std::string& path);

}  // namespace boltznce
