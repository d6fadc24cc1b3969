#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "esam3/error.hpp"
#include "esam3/losses.hpp"
#include "esam3/matching.hpp"
#include "esam3/memory/cost.hpp"
#include "esam3/schedule/evaluate.hpp"
#include "esam3/schedule/run.hpp"
#include "esam3/sim/metrics.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace esam3;
using num::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  num::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.vec().begin(), t.vec().end(), out.mutable_data());
  return out;
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

std::vector<Tensor> tensors(const std::vector<Array>& v) {
  std::vector<Tensor> out;
  for (const auto& a : v) out.push_back(to_tensor(a));
  return out;
}

loss::LossWeights weights(const py::dict& kw) {
  loss::LossWeights w;
  if (kw.contains("alpha")) w.focal_alpha = kw["alpha"].cast<double>();
  if (kw.contains("gamma")) w.focal_gamma = kw["gamma"].cast<double>();
  if (kw.contains("eps")) w.dice_eps = kw["eps"].cast<double>();
  return w;
}

py::dict scene_dict(const sim::SceneConfig& cfg, const sim::SyntheticScene& s) {
  py::list instances;
  for (const auto& inst : s.instances) {
    py::dict d;
    d["identity"] = inst.identity;
    d["concept_id"] = inst.concept_id;
    d["concept"] = sim::concept_name(cfg, inst.concept_id);
    d["mask"] = to_array(inst.mask);
    d["center"] = py::make_tuple(inst.cx, inst.cy);
    d["radius"] = inst.radius;
    instances.append(d);
  }
  py::dict out;
  out["seed"] = s.seed;
  out["frame_index"] = s.frame_index;
  out["image"] = to_array(s.image);
  out["instances"] = instances;
  return out;
}

sim::SceneConfig scene_config(const py::object& cfg) {
  return cfg.is_none() ? sim::SceneConfig{} : from_py(cfg).get<sim::SceneConfig>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Desk-scale progressive distillation core";

  static py::exception<Error> error_type(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error_type.ptr(), e.what());
    }
  });

  m.def(
      "dice_loss", [](const Array& probs, const Array& target, double eps) {
        return loss::dice_loss(to_tensor(probs), to_tensor(target), eps);
      },
      py::arg("probs"), py::arg("target"), py::arg("eps") = 1.0);
  m.def(
      "focal_loss",
      [](const Array& logits, const Array& target, double alpha, double gamma) {
        return loss::focal_loss(to_tensor(logits), to_tensor(target), alpha, gamma);
      },
      py::arg("logits"), py::arg("target"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);
  m.def("feature_mse", [](const Array& s, const Array& t) { return loss::feature_mse(to_tensor(s), to_tensor(t)); });
  m.def("score_bce", [](const Array& l, const Array& t) { return loss::score_bce(to_tensor(l), to_tensor(t)); });

  m.def(
      "hungarian",
      [](const Array& cost) {
        if (cost.ndim() != 2) throw py::value_error("cost must be 2-D");
        const auto a = match::hungarian(match::CostMatrix(
            static_cast<std::size_t>(cost.shape(0)), static_cast<std::size_t>(cost.shape(1)),
            std::vector<double>(cost.data(), cost.data() + cost.size())));
        return py::make_tuple(a.row_to_col, a.total);
      },
      "Minimum-cost assignment: (row_to_col, total).");
  m.def(
      "mask_cost",
      [](const std::vector<Array>& probs, const std::vector<Array>& masks, const py::kwargs& kw) {
        const auto c = match::mask_cost(tensors(probs), tensors(masks), weights(kw));
        return to_array(Tensor({static_cast<std::int64_t>(c.rows()), static_cast<std::int64_t>(c.cols())}, c.values()));
      });

  m.def("mask_iou", [](const Array& a, const Array& b) { return sim::mask_iou(to_tensor(a), to_tensor(b)); });
  m.def("boundary_f", [](const Array& a, const Array& b) { return sim::boundary_f(to_tensor(a), to_tensor(b)); });
  m.def("eval_miou", [](const std::vector<std::vector<Array>>& pred, const std::vector<std::vector<Array>>& gt) {
    std::vector<std::vector<Tensor>> p, g;
    for (const auto& s : pred) p.push_back(tensors(s));
    for (const auto& s : gt) g.push_back(tensors(s));
    const auto r = sim::eval_miou(p, g);
    return py::make_tuple(r.miou, r.per_scene);
  });
  m.def("eval_jf", [](const std::vector<std::vector<Array>>& pred, const std::vector<std::vector<Array>>& gt) {
    std::vector<sim::MaskTrack> p, g;
    for (const auto& t : pred) p.push_back(tensors(t));
    for (const auto& t : gt) g.push_back(tensors(t));
    const auto s = sim::eval_jf(p, g);
    return py::make_tuple(s.j, s.f, s.jf);
  });

  m.def(
      "attention_cost",
      [](std::int64_t n, std::int64_t k, std::int64_t c, std::int64_t dk, std::int64_t queries) {
        const auto a = mem::attention_cost(n, k, c, dk, queries);
        return py::make_tuple(a.flops_dense, a.flops_compressed, a.ratio());
      },
      py::arg("n_tokens"), py::arg("k"), py::arg("c"), py::arg("d_k"), py::arg("queries") = 1);
  m.def(
      "bench_readout",
      [](std::int64_t n, std::int64_t k, std::int64_t c, std::int64_t dk, std::int64_t queries, int repeats,
         std::uint64_t seed) {
        const auto r = mem::bench_readout(n, k, c, dk, queries, repeats, seed);
        py::dict d;
        d["flops_dense"] = r.flops_dense;
        d["flops_compressed"] = r.flops_compressed;
        d["wall_us_dense"] = r.wall_us_dense;
        d["wall_us_compressed"] = r.wall_us_compressed;
        return d;
      },
      py::arg("n_tokens"), py::arg("k"), py::arg("c"), py::arg("d_k"), py::arg("queries") = 64,
      py::arg("repeats") = 20, py::arg("seed") = 42);

  m.def("scene_config", [](const py::object& overrides) { return to_py(json(scene_config(overrides))); },
        py::arg("overrides") = py::none(), "Default scene config, with optional overrides applied.");
  m.def(
      "gen_scene",
      [](std::uint64_t seed, const py::object& cfg) {
        const auto c = scene_config(cfg);
        return scene_dict(c, sim::gen_scene(c, seed));
      },
      py::arg("seed"), py::arg("config") = py::none());
  m.def(
      "gen_clip",
      [](std::uint64_t seed, int length, const py::object& cfg) {
        const auto c = scene_config(cfg);
        py::list frames;
        for (const auto& s : sim::gen_clip(c, seed, length)) frames.append(scene_dict(c, s));
        return frames;
      },
      py::arg("seed"), py::arg("length") = 0, py::arg("config") = py::none());

  m.def("desk_preset", [](int stage) { return to_py(json(sched::desk_preset(stage))); });
  m.def("full_preset", [](int stage) { return to_py(json(sched::full_preset(stage))); });
  m.def("lr_at", [](int step, const py::object& cfg) { return sched::lr_at(step, from_py(cfg).get<sched::StageConfig>()); });
  m.def("model_zoo", [] {
    py::list out;
    for (const auto& e : sched::model_zoo()) {
      py::dict d;
      d["name"] = e.name;
      d["family"] = e.family;
      d["backbone"] = e.backbone;
      d["nominal_params_m"] = e.nominal_params_m;
      d["encoder_params"] = model::encoder_param_count(e.encoder);
      out.append(d);
    }
    return out;
  });

  m.def(
      "train",
      [](int stage, const std::string& out, const py::object& config, const std::string& from_checkpoint,
         const std::string& model_name) {
        auto cfg = config.is_none() ? sched::desk_preset(stage) : from_py(config).get<sched::StageConfig>();
        sched::Checkpoint input;
        if (!from_checkpoint.empty()) {
          input = sched::load_checkpoint(from_checkpoint);
        } else {
          model::ModelConfig mcfg;
          mcfg.encoder = sched::zoo_entry(model_name).encoder;
          input = sched::initial_checkpoint(model_name, mcfg, {}, sim::SceneConfig{}, cfg.seed);
        }
        sched::RunOptions opt;
        opt.out_dir = out;
        sched::RunResult r;
        {
          py::gil_scoped_release release;
          r = sched::run_stage(cfg, input, sched::DataSource{input.scene, nullptr, cfg.seed}, opt);
        }
        py::list log;
        for (const auto& rec : r.metrics) log.append(to_py(rec));
        return log;
      },
      py::arg("stage"), py::arg("out"), py::arg("config") = py::none(), py::arg("from_checkpoint") = "",
      py::arg("model") = "ES-RV-S", "Runs one stage; returns the metrics log.");
  m.def(
      "eval_miou_checkpoint",
      [](const std::string& path, int count, std::uint64_t seed, const std::string& predictor) {
        const auto ck = sched::load_checkpoint(path);
        const auto teacher = sched::make_teacher(ck.teacher, ck.model, ck.scene);
        const auto r = sched::eval_prompt_miou(ck.eval_student(), teacher, ck.scene,
                                               sched::eval_scenes(ck.scene, seed, count), seed,
                                               sched::predictor_from_name(predictor));
        return py::make_tuple(r.report.miou, r.report.per_scene);
      },
      py::arg("checkpoint"), py::arg("count") = 10, py::arg("seed") = 1234, py::arg("predictor") = "student");
}
