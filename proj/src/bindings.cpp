#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "deeplight/checkpoint.hpp"
#include "deeplight/dataset.hpp"
#include "deeplight/loss.hpp"
#include "deeplight/metrics.hpp"
#include "deeplight/network.hpp"
#include "deeplight/serialize.hpp"
#include "deeplight/synthetic.hpp"

namespace py = pybind11;
using namespace deeplight;
using json = nlohmann::json;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

TensorF to_tensor(const FloatArray& a) {
  std::vector<std::int64_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] = a.shape(i);
  TensorF t(std::move(shape));
  std::copy(a.data(), a.data() + a.size(), t.data.begin());
  return t;
}

py::array_t<float> to_array(const TensorF& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> a(shape);
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

json py_to_json(const py::handle& obj) {
  if (obj.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(obj)) return obj.cast<bool>();
  if (py::isinstance<py::int_>(obj)) return obj.cast<std::int64_t>();
  if (py::isinstance<py::float_>(obj)) return obj.cast<double>();
  if (py::isinstance<py::str>(obj)) return obj.cast<std::string>();
  if (py::isinstance<py::dict>(obj)) {
    json j = json::object();
    for (auto item : obj.cast<py::dict>()) {
      j[item.first.cast<std::string>()] = py_to_json(item.second);
    }
    return j;
  }
  if (py::isinstance<py::list>(obj) || py::isinstance<py::tuple>(obj)) {
    json j = json::array();
    for (auto item : obj.cast<py::sequence>()) j.push_back(py_to_json(item));
    return j;
  }
  throw py::type_error("cannot convert to JSON: " +
                       py::repr(obj).cast<std::string>());
}

py::object json_to_py(const json& j) {
  switch (j.type()) {
    case json::value_t::null:
      return py::none();
    case json::value_t::boolean:
      return py::bool_(j.get<bool>());
    case json::value_t::number_integer:
    case json::value_t::number_unsigned:
      return py::int_(j.get<std::int64_t>());
    case json::value_t::number_float:
      return py::float_(j.get<double>());
    case json::value_t::string:
      return py::str(j.get<std::string>());
    case json::value_t::array: {
      py::list out;
      for (const auto& v : j) out.append(json_to_py(v));
      return out;
    }
    case json::value_t::object: {
      py::dict out;
      for (auto it = j.begin(); it != j.end(); ++it) {
        out[py::str(it.key())] = json_to_py(it.value());
      }
      return out;
    }
    default:
      throw py::type_error("unsupported JSON value");
  }
}

LossConfig loss_from_kwargs(double spatial_value, double temporal_value,
                            bool value_is_variance, double pos_weight,
                            double eps, bool use_hazy) {
  LossConfig cfg;
  cfg.spatial_value = spatial_value;
  cfg.temporal_value = temporal_value;
  cfg.value_is_variance = value_is_variance;
  cfg.pos_weight = pos_weight;
  cfg.eps = eps;
  cfg.use_hazy = use_hazy;
  cfg.validate();
  return cfg;
}

// Parameterized forecaster: config plus weights, loadable from a checkpoint.
struct Model {
  ModelConfig cfg;
  ParamStore params;

  Model(const py::dict& config, std::uint64_t seed) {
    cfg = model_from_json(py_to_json(config));
    cfg.validate();
    params = init_params(cfg, seed);
  }
  Model(ModelConfig c, ParamStore p) : cfg(std::move(c)), params(std::move(p)) {}

  py::array_t<float> forward(const FloatArray& light_in,
                             const FloatArray& aux_in) const {
    SampleWindow w;
    w.light_in = to_tensor(light_in);
    w.aux_in = to_tensor(aux_in);
    if (w.light_in.rank() != 4 || w.light_in.dim(0) != cfg.s ||
        w.light_in.dim(1) != 3 || w.light_in.dim(2) != cfg.rows ||
        w.light_in.dim(3) != cfg.cols) {
      throw py::value_error("light_in must have shape (s, 3, rows, cols)");
    }
    if (w.aux_in.rank() != 4 || w.aux_in.dim(0) != cfg.s ||
        w.aux_in.dim(1) != 4 || w.aux_in.dim(2) != cfg.rows ||
        w.aux_in.dim(3) != cfg.cols) {
      throw py::value_error("aux_in must have shape (s, 4, rows, cols)");
    }
    w.target = TensorF({cfg.h, cfg.rows, cfg.cols});
    return to_array(deeplight_forward(w, cfg, params));
  }

  void save(const std::string& prefix, const py::dict& metadata) const {
    save_checkpoint(prefix, cfg, params, py_to_json(metadata));
  }

  py::dict config() const {
    return json_to_py(model_to_json(cfg)).cast<py::dict>();
  }
};

py::dict dataset_to_dict(const Dataset& ds) {
  py::dict out;
  py::list hours, splits;
  for (const auto& h : ds.manifest.hours) hours.append(h);
  for (Split s : ds.manifest.split_tags) splits.append(std::string(split_name(s)));
  out["hours"] = hours;
  out["splits"] = splits;
  py::dict features;
  const std::int64_t n = ds.manifest.hour_count();
  for (const auto& [f, frames] : ds.frames) {
    const std::int64_t rows = ds.manifest.grid.rows;
    const std::int64_t cols = ds.manifest.grid.cols;
    TensorF stack({n, rows, cols});
    for (std::int64_t t = 0; t < n; ++t) {
      std::copy(frames[static_cast<std::size_t>(t)].data.begin(),
                frames[static_cast<std::size_t>(t)].data.end(),
                stack.data.begin() + t * rows * cols);
    }
    features[py::str(feature_name(f))] = to_array(stack);
  }
  out["features"] = features;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "deeplight core operations (C++)";

  py::register_exception<Error>(m, "DeeplightError", PyExc_RuntimeError);

  py::class_<Model>(m, "Model")
      .def(py::init<const py::dict&, std::uint64_t>(), py::arg("config"),
           py::arg("seed") = 0,
           "Fresh model from a config dict (unknown keys rejected).")
      .def_static(
          "load",
          [](const std::string& path) {
            Checkpoint c = load_checkpoint(path);
            return Model(std::move(c.model), std::move(c.params));
          },
          py::arg("path"), "Load a checkpoint by prefix or file path.")
      .def("forward", &Model::forward, py::arg("light_in"), py::arg("aux_in"),
           "Probability frames of shape (h, rows, cols).")
      .def("save", &Model::save, py::arg("prefix"),
           py::arg("metadata") = py::dict())
      .def_property_readonly("config", &Model::config);

  m.def(
      "generate",
      [](std::int64_t grid, int hours, const py::dict& storm) {
        GridSpec g{grid,
                   grid,
                   30.0,
                   30.0 + 0.04 * static_cast<double>(grid),
                   -100.0,
                   -100.0 + 0.04 * static_cast<double>(grid),
                   4.0};
        StormParams p = storm.empty() ? StormParams{}
                                      : storm_from_json(py_to_json(storm));
        return dataset_to_dict(generate_dataset(g, hours, p));
      },
      py::arg("grid") = 32, py::arg("hours") = 400,
      py::arg("storm") = py::dict(),
      "Synthetic scene as {'hours', 'splits', 'features': {name: (H,R,C)}}.");

  m.def(
      "load_dataset",
      [](const std::string& dir) { return dataset_to_dict(load_dataset(dir)); },
      py::arg("dir"), "Stored dataset in the same layout as generate().");

  m.def(
      "blur_ground_truth",
      [](const FloatArray& truth, double spatial_value, double temporal_value,
         bool value_is_variance) {
        LossConfig cfg;
        cfg.spatial_value = spatial_value;
        cfg.temporal_value = temporal_value;
        cfg.value_is_variance = value_is_variance;
        cfg.validate();
        return to_array(blur_ground_truth(to_tensor(truth),
                                          gaussian_kernel_3d(cfg)));
      },
      py::arg("truth"), py::arg("spatial_value") = 19.21,
      py::arg("temporal_value") = 0.96, py::arg("value_is_variance") = true,
      "Gaussian-blurred labels, each lead slice rescaled to peak 1.");

  m.def(
      "total_loss",
      [](const FloatArray& pred, const FloatArray& truth, double spatial_value,
         double temporal_value, bool value_is_variance, double pos_weight,
         double eps, bool use_hazy) {
        return total_loss(to_tensor(pred), to_tensor(truth),
                          loss_from_kwargs(spatial_value, temporal_value,
                                           value_is_variance, pos_weight, eps,
                                           use_hazy));
      },
      py::arg("pred"), py::arg("truth"), py::arg("spatial_value") = 19.21,
      py::arg("temporal_value") = 0.96, py::arg("value_is_variance") = true,
      py::arg("pos_weight") = 20.0, py::arg("eps") = 1e-7,
      py::arg("use_hazy") = true);

  m.def(
      "wbce_loss",
      [](const FloatArray& pred, const FloatArray& truth, double pos_weight,
         double eps) {
        return wbce_loss(to_tensor(pred), to_tensor(truth), pos_weight, eps);
      },
      py::arg("pred"), py::arg("truth"), py::arg("pos_weight") = 20.0,
      py::arg("eps") = 1e-7);

  m.def(
      "scores",
      [](const FloatArray& pred, const FloatArray& truth,
         const std::vector<int>& horizons, const std::string& mode,
         double threshold, const std::string& pooling) {
        const auto rows =
            cumulative_scores(to_tensor(pred), to_tensor(truth), horizons,
                              count_mode_from_name(mode), threshold,
                              pooling_from_name(pooling));
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["mode"] = count_mode_name(r.mode);
          d["horizon"] = r.horizon;
          d["tp"] = r.counts.tp;
          d["fp"] = r.counts.fp;
          d["fn"] = r.counts.fn;
          d["tn"] = r.counts.tn;
          d["n"] = r.counts.n_total;
          d["pod"] = r.scores.pod;
          d["far"] = r.scores.far;
          d["ets"] = r.scores.ets;
          d["micro_f1"] = r.scores.micro_f1;
          d["macro_f1"] = r.scores.macro_f1;
          out.append(d);
        }
        return out;
      },
      py::arg("pred"), py::arg("truth"),
      py::arg("horizons") = std::vector<int>{1, 3, 6}, py::arg("mode") = "strict",
      py::arg("threshold") = 0.5, py::arg("pooling") = "count_pool",
      "Confusion counts and verification scores pooled per horizon.");

  m.def(
      "persistence",
      [](const FloatArray& light_in, int h) {
        SampleWindow w;
        w.light_in = to_tensor(light_in);
        if (w.light_in.rank() != 4 || w.light_in.dim(1) != 3) {
          throw py::value_error("light_in must have shape (s, 3, rows, cols)");
        }
        w.target = TensorF({h, w.light_in.dim(2), w.light_in.dim(3)});
        return to_array(persistence_forecast(w));
      },
      py::arg("light_in"), py::arg("h"),
      "Repeats the last observed occurrence frame for every lead.");
}
