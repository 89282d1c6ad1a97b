#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "boltznce/common.hpp"
#include "boltznce/rng.hpp"

namespace boltznce {

enum class Activation { Tanh, Silu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

/// Architecture of the function approximator: f(t, x) with x in R^x_dim and
/// t embedded as sinusoidal features sin(k*pi*t), cos(k*pi*t), k=1..time_freqs.
/// The activation must be C^2: training losses differentiate through the
/// input gradient of the output.
struct MlpSpec {
    std::size_t x_dim = 2;
    std::size_t out_dim = 1;
    std::vector<std::size_t> hidden{128, 128, 128};
    Activation activation = Activation::Tanh;
    std::size_t time_freqs = 8;
    bool zero_init_last = true;

    std::size_t in_dim() const { return x_dim + 2 * time_freqs; }
};

struct Mlp {
    MlpSpec spec;
    std::vector<double> params;

    // Flat layout bookkeeping (head is the last layer, no activation).
    std::vector<std::size_t> w_off, b_off, dim_in, dim_out;

    static Mlp init(const MlpSpec& spec, Rng& rng);

    std::size_t n_layers() const { return dim_in.size(); }
    std::size_t n_params() const { return params.size(); }

    double* w(std::size_t l) { return params.data() + w_off[l]; }
    const double* w(std::size_t l) const { return params.data() + w_off[l]; }
    double* b(std::size_t l) { return params.data() + b_off[l]; }
    const double* b(std::size_t l) const { return params.data() + b_off[l]; }
};

/// Reusable batch buffers. forward() fills feats/a/z; the differentiation
/// passes reuse them, so keep the workspace alive between calls.
struct MlpWork {
    std::size_t batch = 0;
    std::vector<double> feats;
    std::vector<std::vector<double>> a, z;        // per hidden layer
    std::vector<std::vector<double>> adot, zdot;  // tangent state
    std::vector<double> r0, r1;                   // reverse chain buffers
    std::vector<double> featdot;
};

// t is either one shared value (shared_t = true, t points at a single double)
// or one value per row.

void mlp_forward(const Mlp& m, const double* t, bool shared_t, const double* x, std::size_t batch, MlpWork& w,
                 double* out);

/// d(out)/dx for scalar-output models, exact reverse mode. Call after
/// mlp_forward on the same workspace. gx is [batch x x_dim].
void mlp_input_gradient(const Mlp& m, std::size_t batch, MlpWork& w, double* gx);

/// Forward-mode directional derivative in x: ydot = J_x f . xdot.
/// Call after mlp_forward on the same workspace.
void mlp_jvp(const Mlp& m, std::size_t batch, MlpWork& w, const double* xdot, double* ydot);

/// Accumulates d(loss)/d(params) into grad, given upstream gradients
///   dl_dout [batch x out_dim]  (may be nullptr if dl_dgx given), and
///   dl_dgx  [batch x x_dim]    (nullptr for losses that do not touch the
///                               input gradient; scalar-output models only).
/// The dl_dgx path differentiates through the input-gradient computation
/// (forward-over-reverse), which is what score-matching training needs.
void mlp_backward(const Mlp& m, std::size_t batch, MlpWork& w, const double* dl_dout, const double* dl_dgx,
                  double* grad);

// Convenience single-point evaluation.
double mlp_eval_scalar(const Mlp& m, double t, const double* x);
std::vector<double> mlp_eval(const Mlp& m, double t, const double* x);
std::vector<double> mlp_eval_input_gradient(const Mlp& m, double t, const double* x);

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
struct AdamState {
    std::vector<double> m, v;
    std::uint64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static AdamState init(std::size_t n_params);
    void update(double* params, const double* grad, std::size_t n, double lr);
};

/// Halves the learning rate after `patience` consecutive epochs without
/// improvement, down to min_lr.
struct PlateauScheduler {
    double lr = 1e-3;
    double min_lr = 1e-5;
    std::size_t patience = 20;

    double best = std::numeric_limits<double>::infinity();
    std::size_t bad_epochs = 0;

    /// Feed one epoch loss; returns the learning rate to use next.
    double observe(double epoch_loss);
};

/// Exponential moving average of the parameters, refreshed every `stride`
/// optimizer iterations.
struct EmaShadow {
    double decay = 0.999;
    std::size_t stride = 10;
    std::vector<double> shadow;

    static EmaShadow init(const std::vector<double>& params, double decay = 0.999, std::size_t stride = 10);
    void maybe_update(const std::vector<double>& params, std::uint64_t iter);
    void update(const std::vector<double>& params);
};

// Versioned JSON checkpoint: spec, flat parameters, EMA shadow, optimizer
// state, plus caller-owned metadata. Doubles survive the round trip exactly.
struct NetCheckpoint {
    std::string kind;  // "emulator" | "ebm"
    Mlp net;
    std::vector<double> ema;
    AdamState adam;
    nlohmann::json extra;
};

nlohmann::json checkpoint_to_json(const NetCheckpoint& c);
NetCheckpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::string& path, const NetCheckpoint& c);
NetCheckpoint load_checkpoint(const std::string& path);

}  // namespace boltznce
