#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "boltznce/artifacts.hpp"
#include "boltznce/ebm.hpp"
#include "boltznce/emulator.hpp"
#include "boltznce/metrics.hpp"
#include "boltznce/pipeline.hpp"
#include "boltznce/reweight.hpp"

namespace py = pybind11;
using namespace boltznce;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const DoubleArray& a) {
    return std::vector<double>(a.data(), a.data() + a.size());
}

std::pair<std::vector<double>, std::size_t> to_matrix(const DoubleArray& a) {
    if (a.ndim() != 2) throw UsageError("expected a 2D array [n x dim]");
    return {to_vec(a), static_cast<std::size_t>(a.shape(0))};
}

py::array_t<double> to_array(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    py::array_t<double> out({rows, cols});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

nlohmann::json parse_params(const std::string& s) {
    return s.empty() ? nlohmann::json::object() : nlohmann::json::parse(s);
}

}  // namespace

PYBIND11_MODULE(_boltznce, m) {
    m.doc() = "Flow emulators + energy-based likelihood models for Boltzmann reweighting";

    py::register_exception<UsageError>(m, "UsageError");
    py::register_exception<NumericalError>(m, "NumericalError");
    py::register_exception<IoError>(m, "BoltznceIoError");

    py::class_<TargetDensity>(m, "TargetDensity")
        .def_property_readonly("name", &TargetDensity::name)
        .def_property_readonly("dim", &TargetDensity::dim)
        .def_property_readonly("kbt", &TargetDensity::kbt)
        .def("energy",
             [](const TargetDensity& t, DoubleArray x) {
                 auto v = to_vec(x);
                 require(v.size() == t.dim(), "energy: wrong dimension");
                 return t.energy(v.data());
             })
        .def("log_density",
             [](const TargetDensity& t, DoubleArray x) {
                 auto v = to_vec(x);
                 require(v.size() == t.dim(), "log_density: wrong dimension");
                 return t.log_density(v.data());
             })
        .def("sample", [](const TargetDensity& t, std::size_t n, std::uint64_t seed) {
            Rng rng(seed);
            return to_array(t.sample_matrix(rng, n), n, t.dim());
        });

    m.def(
        "make_target",
        [](const std::string& name, const std::string& params_json) {
            return make_target(name, parse_params(params_json));
        },
        py::arg("name"), py::arg("params_json") = "");

    m.def(
        "log_partition",
        [](const TargetDensity& t, std::size_t points) {
            auto grid = GridQuadrature::make(t.default_lo(), t.default_hi(), points);
            return log_partition(t, grid);
        },
        py::arg("target"), py::arg("points") = 256);

    py::class_<InterpolantSchedule>(m, "InterpolantSchedule")
        .def(py::init([](const std::string& kind) { return InterpolantSchedule{schedule_from_string(kind)}; }))
        .def("alpha", &InterpolantSchedule::alpha)
        .def("sigma", &InterpolantSchedule::sigma)
        .def("dalpha", &InterpolantSchedule::dalpha)
        .def("dsigma", &InterpolantSchedule::dsigma);

    m.def("interpolate", [](const InterpolantSchedule& s, double t, DoubleArray x0, DoubleArray x1) {
        auto a = to_vec(x0);
        auto b = to_vec(x1);
        auto xt = interpolate(s, t, a, b);
        return to_array(xt, 1, xt.size());
    });
    m.def("endpoint_coefficient",
          [](const InterpolantSchedule& s, double t) { return endpoint_coefficient(s, t); });

    m.def("hungarian_couple", [](DoubleArray x0, DoubleArray x1) {
        auto [a, n0] = to_matrix(x0);
        auto [b, n1] = to_matrix(x1);
        require(n0 == n1 && n0 >= 1, "hungarian_couple: need equal non-empty batches");
        const std::size_t dim = a.size() / n0;
        Coupling c = hungarian_couple(a.data(), b.data(), n0, dim);
        py::list perm;
        for (auto p : c.perm) perm.append(p);
        return py::make_tuple(perm, c.cost);
    });

    m.def("energy_w2", [](DoubleArray a, DoubleArray b) { return energy_w2(to_vec(a), to_vec(b)); });

    m.def(
        "angle_w2",
        [](DoubleArray a, DoubleArray b, std::size_t subbatch, std::size_t repeats, const std::string& metric,
           std::uint64_t seed) {
            auto av = to_vec(a);
            auto bv = to_vec(b);
            AngleW2Options opts;
            opts.subbatch = subbatch;
            opts.repeats = repeats;
            opts.metric = metric == "strict_mod_pi" ? AngleMetric::StrictModPi : AngleMetric::Nearest;
            opts.seed = seed;
            return angle_w2(av, av.size(), bv, bv.size(), 1, opts);
        },
        py::arg("a"), py::arg("b"), py::arg("subbatch") = 2000, py::arg("repeats") = 5,
        py::arg("metric") = "nearest", py::arg("seed") = 0);

    m.def("ess", [](DoubleArray log_w) {
        WeightedEnsemble ens;
        ens.dim = 1;
        ens.log_w = to_vec(log_w);
        ens.x.assign(ens.log_w.size(), 0.0);
        ens.loglik.assign(ens.log_w.size(), 0.0);
        return ens.ess();
    });

    m.def(
        "von_mises_weight",
        [](double phi, double mu, double kappa, double scale, double offset) {
            return von_mises_weight(phi, mu, kappa, scale, offset);
        },
        py::arg("phi"), py::arg("mu") = 1.0, py::arg("kappa") = 10.0, py::arg("scale") = 150.0,
        py::arg("offset") = 1.0);

    py::class_<FlowModel>(m, "FlowModel")
        .def_property_readonly("dim", &FlowModel::dim)
        .def(
            "sample",
            [](const FlowModel& model, std::size_t n, std::uint64_t seed, bool with_loglik) {
                SampleOptions opts;
                opts.with_loglik = with_loglik;
                EmulatorSampleSet set = sample(model, n, seed, opts);
                py::dict out;
                out["x"] = to_array(set.x, set.size(), set.dim);
                if (with_loglik) out["loglik"] = to_array(set.loglik, set.size(), 1);
                out["metadata"] = set.metadata.dump();
                return out;
            },
            py::arg("n"), py::arg("seed"), py::arg("with_loglik") = false)
        .def("log_likelihood", [](const FlowModel& model, DoubleArray x) {
            auto [v, n] = to_matrix(x);
            LikelihoodResult r = exact_log_likelihood(model, v, n);
            return to_array(r.loglik, n, 1);
        });
    m.def("load_flow_model", &load_flow_model);

    py::class_<EnergyModel>(m, "EnergyModel")
        .def_property_readonly("dim", &EnergyModel::dim)
        .def("log_density", [](const EnergyModel& model, DoubleArray x) {
            auto [v, n] = to_matrix(x);
            return to_array(log_density_batch(model, v, n), n, 1);
        });
    m.def("load_energy_model", &load_energy_model);

    m.def("default_config", [] { return default_config().dump(2); });
    m.def(
        "run_pipeline",
        [](const std::string& config_json, const std::string& out_dir) {
            nlohmann::json merged = merge_config(nlohmann::json::parse(config_json));
            PipelineResult r = run_full_pipeline(merged, out_dir);
            return r.metrics.dump();
        },
        py::arg("config_json"), py::arg("out_dir"));
    m.def(
        "run_ablation",
        [](const std::string& config_json, const std::vector<std::string>& variants, const std::string& out_dir) {
            nlohmann::json merged = merge_config(nlohmann::json::parse(config_json));
            return run_ablation(merged, variants, out_dir).report.dump();
        },
        py::arg("config_json"), py::arg("variants"), py::arg("out_dir"));
}
