// Copyright 2026 The transvw Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include <sstream>

#include "transvw/cli.hpp"
#include "transvw/io.hpp"
#include "transvw/phantom.hpp"
#include "transvw/transfer.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

py::array_t<float> to_numpy(const tvw::Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

std::vector<float> flat(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

py::dict ttest_dict(const tvw::transfer::TTest& t) {
  py::dict d;
  d["t"] = t.t;
  d["df"] = t.df;
  d["p"] = t.p;
  d["p_greater"] = t.p_greater();
  d["degenerate"] = t.degenerate;
  return d;
}

}  // namespace

PYBIND11_MODULE(_transvw, m) {
  m.doc() = "Bindings for the transvw C++ library";

  py::register_exception<tvw::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<tvw::UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<tvw::NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<tvw::IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);

  m.def("auc", &tvw::transfer::auc, py::arg("scores"), py::arg("labels"));
  m.def(
      "dice_iou",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& truth) {
        const auto p = flat(pred), t = flat(truth);
        const auto o = tvw::transfer::dice_iou(p, t);
        return py::make_tuple(o.dice, o.iou);
      },
      py::arg("pred"), py::arg("truth"));
  m.def("ttest_independent", [](const std::vector<double>& a, const std::vector<double>& b) {
    return ttest_dict(tvw::transfer::ttest_independent(a, b));
  });
  m.def("ttest_paired", [](const std::vector<double>& a, const std::vector<double>& b) {
    return ttest_dict(tvw::transfer::ttest_paired(a, b));
  });

  m.def(
      "_generate_cohort",
      [](const std::string& config, std::size_t patients, std::uint64_t first_id) {
        const auto pc = tvw::phantom::PhantomConfig::from_json(json::parse(config));
        const auto cohort = tvw::phantom::generate_cohort(pc, patients, first_id);
        py::list volumes;
        for (const auto& v : cohort.patients) volumes.append(to_numpy(v.data));
        return py::make_tuple(volumes, tvw::phantom::layouts_to_json(cohort.layouts).dump());
      },
      py::arg("config"), py::arg("patients"), py::arg("first_id") = 0);

  m.def("_read_tensor_file", [](const std::string& path) {
    const auto bundle = tvw::read_tensor_bundle<float>(path);
    py::dict tensors;
    for (const auto& [name, t] : bundle.tensors) tensors[py::str(name)] = to_numpy(t);
    return py::make_tuple(tensors, bundle.meta.dump());
  });

  m.def("_config_digest", [](const std::string& config) {
    return tvw::cli::RunConfig::from_json(json::parse(config)).digest();
  });
  m.def("_resolved_config", [](const std::string& config) {
    return tvw::cli::RunConfig::from_json(json::parse(config)).to_json().dump();
  });

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = tvw::cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
