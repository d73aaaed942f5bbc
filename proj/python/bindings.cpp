#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "missmod/errors.hpp"
#include "missmod/experiment.hpp"

namespace py = pybind11;
using namespace missmod;

namespace {

nn::Tensor matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw InputError("empty matrix");
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw InputError("ragged matrix");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return nn::Tensor::from({rows.size(), rows.front().size()}, std::move(flat));
}

std::vector<std::vector<double>> rows_of(const nn::Tensor& t) {
  const auto v = t.to_vector();
  std::vector<std::vector<double>> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) out[i].assign(v.begin() + i * t.cols(), v.begin() + (i + 1) * t.cols());
  return out;
}

std::vector<std::vector<bool>> mask_rows(const nn::AttentionMask& m) {
  std::vector<std::vector<bool>> out(m.size(), std::vector<bool>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) out[i][j] = m.allowed(i, j);
  }
  return out;
}

py::dict sample_dict(const Sample& s) {
  py::dict d;
  d["id"] = s.id;
  d["m1"] = s.m1 ? py::cast(*s.m1) : py::none();
  d["m2"] = s.m2 ? py::cast(*s.m2) : py::none();
  if (const auto* c = std::get_if<std::size_t>(&s.label)) d["label"] = *c;
  else d["label"] = std::get<std::vector<std::uint8_t>>(s.label);
  return d;
}

py::dict result_dict(const ExperimentResult& r) {
  py::dict out;
  out["config_hash"] = r.config_hash;
  py::list rows, summary;
  for (const auto& row : r.rows) {
    rows.append(py::dict(py::arg("seed") = row.seed, py::arg("method") = row.method,
                         py::arg("train_pattern") = row.train_pattern, py::arg("test_pattern") = row.test_pattern,
                         py::arg("metric") = row.metric, py::arg("value") = row.value));
  }
  for (const auto& s : r.summary) {
    summary.append(py::dict(py::arg("method") = s.method, py::arg("train_pattern") = s.train_pattern,
                            py::arg("test_pattern") = s.test_pattern, py::arg("metric") = s.metric,
                            py::arg("mean") = s.mean, py::arg("std") = s.std ? py::cast(*s.std) : py::none(),
                            py::arg("count") = s.count));
  }
  out["rows"] = rows;
  out["summary"] = summary;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<PatternError>(m, "PatternError", base.ptr());
  py::register_exception<MetricError>(m, "MetricError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());

  m.def(
      "read_only_mask",
      [](std::size_t seq_len, std::size_t prompt_len, bool diagonal) {
        return mask_rows(
            build_read_only_mask(seq_len, prompt_len, diagonal ? PromptAttention::diagonal : PromptAttention::all));
      },
      py::arg("seq_len"), py::arg("prompt_len"), py::arg("diagonal") = false,
      "Allowed-attention matrix over [CLS, inputs, prompts].");

  m.def(
      "pattern_from_rates",
      [](double m1, double m2) {
        const auto p = pattern_from_rates(m1, m2);
        return py::make_tuple(p.p_both, p.p_m1_only, p.p_m2_only);
      },
      py::arg("m1_rate"), py::arg("m2_rate"), "(p_both, p_m1_only, p_m2_only) for per-modality presence rates.");
  m.def(
      "subset_sizes", [](std::size_t n, double m1, double m2) { return subset_sizes(n, pattern_from_rates(m1, m2)); },
      py::arg("n"), py::arg("m1_rate"), py::arg("m2_rate"));

  m.def(
      "vicreg",
      [](const std::vector<std::vector<double>>& z, const std::vector<std::vector<double>>& zhat, double lambda,
         double mu, double nu, double gamma, double eps) {
        VicregCoefficients c{lambda, mu, nu, gamma, eps};
        c.validate();
        const auto t = vicreg_loss(matrix(z), matrix(zhat), c, {});
        return py::dict(py::arg("s") = t.s.item(), py::arg("v") = t.v.item(), py::arg("c") = t.c.item(),
                        py::arg("loss") = t.loss.item());
      },
      py::arg("z"), py::arg("zhat"), py::arg("lam") = 50.0, py::arg("mu") = 50.0, py::arg("nu") = 1.0,
      py::arg("gamma") = 1.0, py::arg("eps") = 1e-4, "VICReg terms between true and predicted embeddings.");

  m.def(
      "late_fusion",
      [](const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
        return rows_of(late_fusion(matrix(a), matrix(b)));
      },
      py::arg("logits_m1"), py::arg("logits_m2"));

  m.def(
      "f1_macro",
      [](const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target, std::size_t n_labels) {
        return f1_macro(pred, target, n_labels);
      },
      py::arg("predicted"), py::arg("target"), py::arg("n_labels"), "Row-major 0/1 matrices.");
  m.def(
      "auroc",
      [](const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) { return auroc(scores, labels); },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "generate_dataset",
      [](const std::string& config_json, const std::vector<std::string>& overrides) {
        const auto cfg = parse_experiment_config(config_json, overrides);
        py::list out;
        for (const auto& s : generate_dataset(cfg.task)) out.append(sample_dict(s));
        return out;
      },
      py::arg("config_json") = "{}", py::arg("overrides") = std::vector<std::string>{},
      "Synthetic samples for the task section of an experiment config.");

  m.def(
      "effective_config",
      [](const std::string& config_json, const std::vector<std::string>& overrides) {
        return to_json_text(parse_experiment_config(config_json, overrides));
      },
      py::arg("config_json") = "{}", py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::vector<std::string>& overrides, std::optional<std::string> out) {
        const auto cfg = parse_experiment_config(config_json, overrides);
        std::optional<std::filesystem::path> dir;
        if (out) dir = *out;
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg, dir);
        }
        return result_dict(r);
      },
      py::arg("config_json") = "{}", py::arg("overrides") = std::vector<std::string>{}, py::arg("out") = py::none(),
      "Train and evaluate every job of a config; returns rows and seed summaries.");

  m.def("report", [](const std::string& dir) { return report_text(dir); }, py::arg("dir"));
}
