#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "boltznce/coupling.hpp"
#include "boltznce/emulator.hpp"  // TrainLog
#include "boltznce/interpolant.hpp"
#include "boltznce/net.hpp"

namespace boltznce {

enum class NegativeBoundary {
    Clip,     // clamp draws into [0,1]; piles an atom on the boundary
    Reflect,  // mirror at 0 and 1; keeps the proposal kernel symmetric
};

NegativeBoundary negative_boundary_from_string(const std::string& s);
std::string to_string(NegativeBoundary b);

/// Negative time points for the contrastive loss: t' ~ N(t, std), folded
/// into [0,1]. One negative per positive is enough in practice.
struct NegativeTimeSampler {
    std::size_t count = 1;
    double std_dev = 0.025;
    NegativeBoundary boundary = NegativeBoundary::Clip;

    void sample(Rng& rng, double t, double* out) const {
        for (std::size_t k = 0; k < count; ++k) {
            double v = t + std_dev * rng.normal();
            if (boundary == NegativeBoundary::Clip) {
                v = std::clamp(v, 0.0, 1.0);
            } else {
                v = std::fabs(v);
                if (v > 1.0) v = 2.0 - v;
                v = std::clamp(v, 0.0, 1.0);  // guards absurd std values
            }
            out[k] = v;
        }
    }
};

struct EbmConfig {
    ScheduleKind schedule = ScheduleKind::Trigonometric;
    CouplingMode coupling = CouplingMode::Ot;
    std::size_t coupling_block = 0;  // 0 = whole batch in one assignment
    std::vector<std::size_t> hidden{128, 128, 128};
    Activation activation = Activation::Tanh;
    std::size_t time_freqs = 8;
    std::size_t negatives_count = 1;
    double negatives_std = 0.025;
    NegativeBoundary negatives_boundary = NegativeBoundary::Clip;
    double sm_weight = 1.0;
    double nce_weight = 1.0;
    std::size_t epochs = 1000;
    std::size_t batch_size = 512;
    double lr = 1e-3;
    double min_lr = 1e-5;
    std::size_t lr_patience = 20;
    std::size_t early_stop_patience = 100;
    double ema_decay = 0.999;
    std::size_t ema_stride = 10;
    double t_lo = 1e-5;
    double t_hi = 1.0 - 1e-5;
    std::size_t val_size = 2048;
};

/// Energy-based model of the training distribution: E_theta(t, x) is the
/// log-density of the interpolant marginal at time t, up to a t-dependent
/// constant that is never computed. All consumers are normalization-free.
struct EnergyModel {
    InterpolantSchedule schedule;
    Mlp net;
    std::vector<double> ema;
    AdamState adam;
    nlohmann::json train_meta;

    std::size_t dim() const { return net.spec.x_dim; }
    Mlp inference_net() const {
        Mlp m = net;
        m.params = ema;
        return m;
    }
};

/// Mean InfoNCE loss from precomputed energies: e_pos is [n], e_neg is
/// [n x k]. Optional softmax gradients (d loss / d energy, already divided
/// by n) for training.
double info_nce_from_energies(const double* e_pos, const double* e_neg, std::size_t n, std::size_t k,
                              double* grad_pos = nullptr, double* grad_neg = nullptr);

/// Contrastive classification of the true (t, x_t) pairing against negative
/// time points on the same sample.
double info_nce_loss(const EnergyModel& model, const std::vector<double>& t, const std::vector<double>& x_t,
                     const std::vector<double>& t_neg, std::size_t negatives_per_sample);

/// mean || sigma(t) * grad_x E(t, x_t) + x1 ||^2 with x_t built from the
/// coupled pair via the schedule.
double score_matching_loss(const EnergyModel& model, const std::vector<double>& t, const std::vector<double>& x0,
                           const std::vector<double>& x1);

/// Trains per the combined objective: OT-couple the batch with prior draws,
/// sample t ~ U, form x_t, minimize sm_weight * L_SM + nce_weight * L_InfoNCE.
/// data is row-major [n x dim]; the last val_size rows are held out.
EnergyModel train_ebm(const std::vector<double>& data, std::size_t dim, const EbmConfig& cfg, Rng& rng,
                      TrainLog* log = nullptr);

/// Unnormalized log-density of the training distribution at data time:
/// E_theta(0, x), defined up to an additive constant.
double log_density(const EnergyModel& model, const double* x);
std::vector<double> log_density_batch(const EnergyModel& model, const std::vector<double>& x, std::size_t n);

void save_energy_model(const std::string& path, const EnergyModel& m);
EnergyModel load_energy_model(const std::string& path);

}  // namespace boltznce
