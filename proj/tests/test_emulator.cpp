#include <doctest.h>

#include <cmath>

#include "boltznce/emulator.hpp"

using namespace boltznce;

namespace {

FlowModel zero_flow_model(FlowParameterization param = FlowParameterization::VectorField) {
    Rng rng(51);
    MlpSpec spec;
    spec.x_dim = 2;
    spec.out_dim = 2;
    spec.hidden = {8, 8};
    spec.time_freqs = 4;
    spec.zero_init_last = true;
    FlowModel m;
    m.parameterization = param;
    m.schedule.kind = ScheduleKind::Linear;
    m.net = Mlp::init(spec, rng);
    std::fill(m.net.params.begin(), m.net.params.end(), 0.0);
    m.ema = m.net.params;
    m.adam = AdamState::init(m.net.n_params());
    return m;
}

}  // namespace

TEST_CASE("sampling the zero model returns prior draws; n=0 gives an empty set") {
    FlowModel m = zero_flow_model();
    EmulatorSampleSet empty = sample(m, 0, 1);
    CHECK(empty.size() == 0);

    EmulatorSampleSet set = sample(m, 64, 17);
    Rng rng(17);
    std::vector<double> x1(64 * 2);
    rng.fill_normal(x1.data(), x1.size());
    for (std::size_t i = 0; i < x1.size(); ++i) CHECK(set.x[i] == doctest::Approx(x1[i]).epsilon(1e-7));
}

TEST_CASE("fixed seed reproduces samples bit-identically") {
    FlowModel m = zero_flow_model();
    // give the net some structure so the flow is nontrivial
    Rng rng(52);
    for (auto& p : m.net.params) p = 0.05 * rng.normal();
    m.ema = m.net.params;
    EmulatorSampleSet a = sample(m, 128, 5);
    EmulatorSampleSet b = sample(m, 128, 5);
    CHECK(a.x == b.x);  // bit-exact
    EmulatorSampleSet c = sample(m, 128, 6);
    CHECK(a.x != c.x);
}

TEST_CASE("zero model log-likelihood is the standard normal density") {
    FlowModel m = zero_flow_model();
    const double x[2] = {0.4, -1.1};
    const double ll = exact_log_likelihood(m, x);
    CHECK(ll == doctest::Approx(log_standard_normal(x, 2)).epsilon(1e-7));
}

TEST_CASE("nll of the zero model at the origin is d/2 log(2 pi); constant batches have zero std") {
    FlowModel m = zero_flow_model();
    std::vector<double> origin(8, 0.0);  // four copies of (0,0)
    NllReport rep = nll(m, origin, 4);
    CHECK(rep.mean == doctest::Approx(std::log(2.0 * M_PI)).epsilon(1e-7));
    CHECK(rep.stddev == doctest::Approx(0.0).epsilon(1e-9));
    CHECK_THROWS_AS(nll(m, {}, 0), UsageError);
}

TEST_CASE("vector-field training starts from the analytic zero-init loss") {
    // with a zero-initialized head the first batch loss is exactly
    // E || dalpha x0 + dsigma x1 ||^2 = E|x0|^2 + d under independent coupling
    Rng data_rng(53);
    const std::size_t n = 512;
    std::vector<double> data(n * 2);
    for (auto& v : data) v = 2.0 * data_rng.normal();  // E|x0|^2 = 8
    FlowTrainConfig cfg;
    cfg.objective = FlowObjective::VectorField;
    cfg.coupling = CouplingMode::Independent;
    cfg.hidden = {8, 8};
    cfg.epochs = 1;
    cfg.batch_size = n;
    cfg.val_size = 0;
    Rng rng(54);
    TrainLog log;
    (void)train_flow(data, 2, cfg, rng, &log);
    REQUIRE(log.train_loss.size() == 1);
    CHECK(log.train_loss[0] == doctest::Approx(10.0).epsilon(0.15));  // 3 sigma MC band
}

TEST_CASE("endpoint training: perfect predictor has zero loss, weights are clamped") {
    // loss = mean t_w |x0_hat - x0|^2; a model that outputs x0 exactly is the
    // zero-loss optimum. The zero model predicts 0, so the loss is
    // mean t_w |x0|^2 with t_w <= 100 even from t ~ 0.
    Rng data_rng(55);
    const std::size_t n = 256;
    std::vector<double> data(n * 2, 0.0);  // x0 = 0 makes the zero net the perfect predictor
    FlowTrainConfig cfg;
    cfg.objective = FlowObjective::Endpoint;
    cfg.hidden = {8, 8};
    cfg.epochs = 1;
    cfg.batch_size = n;
    cfg.val_size = 0;
    cfg.t_lo = 1e-9;  // drives t_w into the upper clamp region
    Rng rng(56);
    TrainLog log;
    (void)train_flow(data, 2, cfg, rng, &log);
    REQUIRE(log.train_loss.size() == 1);
    CHECK(log.train_loss[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cfm with sigma=0 regresses onto x1 - x0 along the linear path") {
    Rng data_rng(57);
    const std::size_t n = 512;
    std::vector<double> data(n * 2);
    for (auto& v : data) v = data_rng.normal();
    FlowTrainConfig cfg;
    cfg.objective = FlowObjective::Cfm;
    cfg.coupling = CouplingMode::Independent;
    cfg.cfm_sigma = 0.0;
    cfg.hidden = {8, 8};
    cfg.epochs = 1;
    cfg.batch_size = n;
    cfg.val_size = 0;
    Rng rng(58);
    TrainLog log;
    (void)train_flow(data, 2, cfg, rng, &log);
    // zero net: loss = E|x1 - x0|^2 = 2d = 4 for standard normal pairs
    CHECK(log.train_loss[0] == doctest::Approx(4.0).epsilon(0.2));
}

TEST_CASE("flow model checkpoints round trip and reproduce samples") {
    FlowModel m = zero_flow_model();
    Rng rng(59);
    for (auto& p : m.net.params) p = 0.1 * rng.normal();
    m.ema = m.net.params;
    m.train_meta = {{"note", "test"}};
    const std::string path = "/tmp/boltznce_emulator_test.ckpt";
    save_flow_model(path, m);
    FlowModel r = load_flow_model(path);
    CHECK(r.net.params == m.net.params);
    CHECK(r.ema == m.ema);
    CHECK(r.parameterization == m.parameterization);
    EmulatorSampleSet a = sample(m, 32, 7), b = sample(r, 32, 7);
    CHECK(a.x == b.x);
    CHECK(model_param_hash(m) == model_param_hash(r));
}
