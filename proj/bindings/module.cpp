#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fld/errors.hpp"
#include "fld/goodwin.hpp"
#include "fld/model.hpp"
#include "fld/train.hpp"

namespace py = pybind11;
using namespace fld;

namespace {

std::vector<const IMTSInstance*> pick(const Dataset& ds,
                                      const std::vector<std::string>& ids) {
  return select_instances(ds, ids);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Functional latent dynamics: forecasting irregularly sampled "
      "multivariate time series with explicit latent curves. Containers "
      "cross the boundary by value; mutate them in Python and pass them "
      "back rather than poking at returned lists in place.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const UnsplittableError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ParseError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ShapeError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  py::class_<IMTSInstance>(m, "Instance")
      .def(py::init<>())
      .def_readwrite("id", &IMTSInstance::id)
      .def_readwrite("channels", &IMTSInstance::channels)
      .def_readwrite("times", &IMTSInstance::times)
      .def_readwrite("values", &IMTSInstance::values)
      .def_readwrite("query_times", &IMTSInstance::query_times)
      .def_readwrite("targets", &IMTSInstance::targets)
      .def_property_readonly("n_obs", &IMTSInstance::n_obs)
      .def_property_readonly("n_query", &IMTSInstance::n_query)
      .def_property_readonly("has_query", &IMTSInstance::has_query)
      .def("__repr__", [](const IMTSInstance& i) {
        return "<Instance '" + i.id + "' " + std::to_string(i.n_obs()) +
               " obs x " + std::to_string(i.channels) + " ch, " +
               std::to_string(i.n_query()) + " queries>";
      });

  py::class_<Normalization>(m, "Normalization")
      .def_readonly("mean", &Normalization::mean)
      .def_readonly("stdev", &Normalization::stdev);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<>())
      .def_readwrite("channels", &Dataset::channels)
      .def_readwrite("channel_names", &Dataset::channel_names)
      .def_readwrite("instances", &Dataset::instances)
      .def_readonly("normalization", &Dataset::normalization)
      .def("__len__", [](const Dataset& ds) { return ds.instances.size(); })
      .def("ids",
           [](const Dataset& ds) {
             std::vector<std::string> out;
             for (const auto& inst : ds.instances) out.push_back(inst.id);
             return out;
           })
      .def("by_id", &Dataset::by_id, py::arg("id"))
      .def("__repr__", [](const Dataset& ds) {
        return "<Dataset " + std::to_string(ds.instances.size()) +
               " instances x " + std::to_string(ds.channels) + " channels>";
      });

  py::class_<FoldSplit>(m, "FoldSplit")
      .def_readonly("train", &FoldSplit::train)
      .def_readonly("valid", &FoldSplit::valid)
      .def_readonly("test", &FoldSplit::test);

  py::class_<FLDConfig>(m, "FLDConfig")
      .def(py::init([](const std::string& curve, int latent, int heads, int embed,
                       int decoder_depth, int channels) {
             FLDConfig cfg;
             cfg.curve = parse_curve(curve);
             cfg.latent = latent;
             cfg.heads = heads;
             cfg.embed = embed;
             cfg.decoder_depth = decoder_depth;
             cfg.channels = channels;
             return cfg;
           }),
           py::arg("curve") = "linear", py::arg("latent") = 32,
           py::arg("heads") = 4, py::arg("embed") = 4,
           py::arg("decoder_depth") = 2, py::arg("channels") = 0)
      .def_property(
          "curve", [](const FLDConfig& c) { return curve_name(c.curve); },
          [](FLDConfig& c, const std::string& name) { c.curve = parse_curve(name); })
      .def_readwrite("latent", &FLDConfig::latent)
      .def_readwrite("heads", &FLDConfig::heads)
      .def_readwrite("embed", &FLDConfig::embed)
      .def_readwrite("decoder_depth", &FLDConfig::decoder_depth)
      .def_readwrite("channels", &FLDConfig::channels)
      .def("validate", &FLDConfig::validate)
      .def("__repr__", [](const FLDConfig& c) {
        return "<FLDConfig " + curve_name(c.curve) + " L=" +
               std::to_string(c.latent) + " H=" + std::to_string(c.heads) +
               " D=" + std::to_string(c.embed) + " depth=" +
               std::to_string(c.decoder_depth) + " C=" +
               std::to_string(c.channels) + ">";
      });

  py::class_<ModelParams>(m, "ModelParams")
      .def_property_readonly("parameter_count", &ModelParams::parameter_count);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](double lr, double l2, int batch_size, int max_epochs,
                       int patience, std::uint64_t seed) {
             TrainConfig tc;
             tc.lr = lr;
             tc.l2 = l2;
             tc.batch_size = batch_size;
             tc.max_epochs = max_epochs;
             tc.patience = patience;
             tc.seed = seed;
             return tc;
           }),
           py::arg("lr") = 1e-4, py::arg("l2") = 1e-3,
           py::arg("batch_size") = 64, py::arg("max_epochs") = 300,
           py::arg("patience") = 30, py::arg("seed") = 0)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("l2", &TrainConfig::l2)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("max_epochs", &TrainConfig::max_epochs)
      .def_readwrite("patience", &TrainConfig::patience)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<EpochStats>(m, "EpochStats")
      .def_readonly("epoch", &EpochStats::epoch)
      .def_readonly("train_mse", &EpochStats::train_mse)
      .def_readonly("valid_mse", &EpochStats::valid_mse)
      .def_readonly("seconds", &EpochStats::seconds);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("best_params", &TrainResult::best_params)
      .def_readonly("best_epoch", &TrainResult::best_epoch)
      .def_readonly("best_valid", &TrainResult::best_valid)
      .def_readonly("history", &TrainResult::history);

  py::class_<InstanceLoss>(m, "InstanceLoss")
      .def_readonly("id", &InstanceLoss::id)
      .def_readonly("mse", &InstanceLoss::mse)
      .def_readonly("count", &InstanceLoss::count);

  py::class_<EvalResult>(m, "EvalResult")
      .def_readonly("mse", &EvalResult::mse)
      .def_readonly("count", &EvalResult::count)
      .def_readonly("per_instance", &EvalResult::per_instance);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def(py::init<>())
      .def_readwrite("config", &Checkpoint::config)
      .def_readwrite("params", &Checkpoint::params)
      .def_readwrite("channel_names", &Checkpoint::channel_names)
      .def_readwrite("normalization", &Checkpoint::normalization)
      .def_readwrite("task", &Checkpoint::task)
      .def_readwrite("seed", &Checkpoint::seed)
      .def_readwrite("fold", &Checkpoint::fold);

  m.def(
      "generate_goodwin",
      [](int count, std::uint64_t seed, int points, double sigma, double drop,
         const std::vector<int>& observe) {
        SamplingSpec sampling;
        sampling.points_per_instance = points;
        sampling.noise_sigma = sigma;
        sampling.drop_prob = drop;
        sampling.observe = observe;
        return generate_goodwin(count, seed, sampling);
      },
      py::arg("count"), py::arg("seed"), py::arg("points") = 50,
      py::arg("sigma") = 0.0, py::arg("drop") = 0.0,
      py::arg("observe") = std::vector<int>{0, 1},
      py::call_guard<py::gil_scoped_release>(),
      "Simulate Goodwin-oscillator series with irregular sampling.");

  m.def(
      "split_task",
      [](const Dataset& ds, const std::string& task) {
        return split_dataset(ds, TaskSpec::parse(task)).dataset;
      },
      py::arg("dataset"), py::arg("task"),
      "Apply a forecasting task split (obs75-next3, obs75-fc25, obs50-fc50).");

  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));

  m.def("make_folds", &make_folds, py::arg("ids"), py::arg("n_folds") = 5,
        py::arg("valid_frac") = 0.2, py::arg("test_frac") = 0.1,
        py::arg("seed") = 0);

  m.def(
      "normalize_fit",
      [](const Dataset& ds, const std::vector<std::string>& ids) {
        return normalize_fit(pick(ds, ids), ds.channels);
      },
      py::arg("dataset"), py::arg("ids"),
      "Per-channel z-score statistics over the given instances.");
  m.def("normalize_apply", &normalize_apply, py::arg("dataset"), py::arg("norm"));

  m.def("init_params", &init_params, py::arg("config"), py::arg("seed"));

  m.def(
      "train",
      [](const FLDConfig& config, const ModelParams& init, const Dataset& ds,
         const std::vector<std::string>& train_ids,
         const std::vector<std::string>& valid_ids, const TrainConfig& tc) {
        return train(config, init, pick(ds, train_ids), pick(ds, valid_ids), tc);
      },
      py::arg("config"), py::arg("init"), py::arg("dataset"),
      py::arg("train_ids"), py::arg("valid_ids"),
      py::arg("train_config") = TrainConfig{},
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "evaluate",
      [](const ModelParams& params, const FLDConfig& config, const Dataset& ds,
         const std::vector<std::string>& ids) {
        return evaluate(params, config, pick(ds, ids));
      },
      py::arg("params"), py::arg("config"), py::arg("dataset"), py::arg("ids"),
      py::call_guard<py::gil_scoped_release>());

  m.def("predict", &predict_values, py::arg("instance"), py::arg("params"),
        py::arg("config"),
        "Model outputs at the instance's query times, row-major n_query x "
        "channels; empty when the instance has no query part.");

  m.def("save_checkpoint", &save_checkpoint, py::arg("checkpoint"),
        py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.attr("__version__") = FLD_VERSION;
}
