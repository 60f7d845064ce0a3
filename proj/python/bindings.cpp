#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "frdesign/config.hpp"
#include "frdesign/session_io.hpp"
#include "frdesign/static_design.hpp"
#include "frdesign/study.hpp"

namespace py = pybind11;
using namespace frdesign;

// Structured values cross the boundary as JSON text; the Python package decodes them.

namespace {

Json parse(const std::string& text) { return text.empty() ? Json::object() : Json::parse(text); }

std::string simulate(const std::string& config) {
  const auto j = parse(config);
  const auto cfg = session_config_from_json(j, "", {"truth"});
  if (!j.contains("truth")) throw ValidationError("simulate needs a hidden truth", "/truth");
  const auto truth = read_truth(j["truth"], "/truth");
  Json out = Json::array();
  for (const auto& r : run_simulation(cfg, truth.model, truth.params)) out.push_back(record_to_json(r));
  return out.dump();
}

std::string study(const std::string& manifest) {
  const auto records = run_study(manifest_from_json(parse(manifest)));
  return records_to_jsonl(records);
}

std::pair<double, double> static_utility_estimate(const std::vector<int>& design, const std::string& kind, double tau,
                                                  int B, std::uint64_t seed) {
  const auto models = default_models();
  const auto e = expected_static_utility(models, design, tau, utility_kind_from_string(kind), B, seed);
  return {e.estimate, e.se};
}

}  // namespace

PYBIND11_MODULE(_frdesign, m) {
  m.doc() = "Sequential Bayesian design of functional-response experiments";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ConflictError>(m, "ConflictError", PyExc_RuntimeError);
  py::register_exception<InvalidParameter>(m, "InvalidParameter", PyExc_ValueError);

  m.attr("SCHEMA_VERSION") = kSessionSchemaVersion;

  m.def(
      "expected_proportion",
      [](int model_id, double a, double th, int n0, double tau) {
        const auto model = make_model(model_id);
        return expected_proportion(model.mech, Params::from_natural(a, th), n0, tau);
      },
      py::arg("model_id"), py::arg("a"), py::arg("th"), py::arg("n0"), py::arg("tau") = 24.0);

  m.def(
      "log_likelihood",
      [](int model_id, double a, double th, std::optional<double> lambda, int n0, int n, double tau) {
        const auto model = make_model(model_id);
        return log_likelihood(model, Params::from_natural(a, th, lambda), Observation{n0, n, tau});
      },
      py::arg("model_id"), py::arg("a"), py::arg("th"), py::arg("lambda_") = py::none(), py::arg("n0"), py::arg("n"),
      py::arg("tau") = 24.0);

  m.def("_simulate", &simulate, py::call_guard<py::gil_scoped_release>());
  m.def("_study", &study, py::call_guard<py::gil_scoped_release>());
  m.def("_summary_csv", [](const std::string& jsonl) {
    const auto records = records_from_jsonl(jsonl);
    return summary_csv(summarize(records));
  });
  m.def("static_utility", &static_utility_estimate, py::arg("design"), py::arg("kind") = "PE", py::arg("tau") = 24.0,
        py::arg("B") = 100, py::arg("seed") = 0, py::call_guard<py::gil_scoped_release>());

  py::class_<Session>(m, "_Session")
      .def(py::init([](const std::string& config) { return Session(session_config_from_json(parse(config))); }))
      .def_static("_from_json", [](const std::string& text) { return session_from_json(parse(text)); })
      .def("_to_json", [](const Session& s) { return session_to_json(s).dump(); })
      .def("status", [](const Session& s) { return to_string(s.status()); })
      .def("model_probs", &Session::model_probs)
      .def(
          "propose",
          [](Session& s) {
            const auto& p = s.propose_next_design();
            Json out{{"d", p.d}};
            if (p.surface) out["surface"] = surface_to_json(*p.surface);
            return out.dump();
          },
          py::call_guard<py::gil_scoped_release>())
      .def(
          "observe", [](Session& s, int d, int n) { return record_to_json(s.record_observation(d, n)).dump(); },
          py::arg("d"), py::arg("n"), py::call_guard<py::gil_scoped_release>())
      .def("_history", [](const Session& s) {
        Json out = Json::array();
        for (const auto& r : s.history()) out.push_back(record_to_json(r));
        return out.dump();
      });
}
