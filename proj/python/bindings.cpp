#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "bttrain/bram_planner.hpp"
#include "bttrain/checkpoint.hpp"
#include "bttrain/config.hpp"
#include "bttrain/costmodel.hpp"
#include "bttrain/dataset.hpp"
#include "bttrain/gradcheck.hpp"
#include "bttrain/schedule.hpp"
#include "bttrain/trainer.hpp"
#include "bttrain/tt_linear.hpp"
#include "bttrain/ttm_embedding.hpp"

namespace py = pybind11;
using namespace bttrain;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

Tensor<double> to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor<double>& t) {
  Array a(t.shape());
  std::copy(t.storage().begin(), t.storage().end(), a.mutable_data());
  return a;
}

nlohmann::json parse(const std::string& s) { return s.empty() ? nlohmann::json::object() : nlohmann::json::parse(s); }

std::vector<std::size_t> all_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

LayerConfig layer(std::vector<std::size_t> out, std::vector<std::size_t> in, std::size_t rank, std::size_t K) {
  return LayerConfig::uniform(std::move(out), std::move(in), rank, K);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Tensor-train transformer training core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<TTLinear<double>>(m, "TTLinear")
      .def_static(
          "random",
          [](std::vector<std::size_t> out, std::vector<std::size_t> in, std::vector<std::size_t> ranks, bool bias,
             std::uint64_t seed) {
            Rng rng(seed);
            return TTLinear<double>::random(std::move(out), std::move(in), std::move(ranks), bias, rng);
          },
          py::arg("out_modes"), py::arg("in_modes"), py::arg("ranks"), py::arg("bias") = true, py::arg("seed") = 0)
      .def_property_readonly("rows", &TTLinear<double>::rows)
      .def_property_readonly("cols", &TTLinear<double>::cols)
      .def_property_readonly("param_count",
                             [](const TTLinear<double>& l) { return l.weight().param_count() + l.bias().size(); })
      .def("cores",
           [](const TTLinear<double>& l) {
             std::vector<Array> out;
             for (std::size_t k = 0; k < 2 * l.d(); ++k) out.push_back(to_array(l.weight().core(k)));
             return out;
           })
      .def("set_core",
           [](TTLinear<double>& l, std::size_t k, const Array& a) {
             auto t = to_tensor(a);
             if (t.shape() != l.weight().core(k).shape()) throw ShapeError("core shape mismatch");
             l.weight().core(k) = std::move(t);
           })
      .def("bias", [](const TTLinear<double>& l) { return to_array(l.bias()); })
      .def("dense", [](const TTLinear<double>& l) { return to_array(as_matrix(l.weight())); })
      .def("forward_rtl", [](const TTLinear<double>& l, const Array& x) { return to_array(l.forward_rtl(to_tensor(x))); })
      .def(
          "forward_btt",
          [](TTLinear<double>& l, const Array& x, bool parallel) {
            return to_array(l.forward_btt(to_tensor(x), true, parallel ? Exec::Parallel : Exec::Serial));
          },
          py::arg("x"), py::arg("parallel") = false)
      .def("backward",
           [](TTLinear<double>& l, const Array& dy) {
             const auto g = l.backward_cores(to_tensor(dy));
             const auto dx = l.backward_activation(to_tensor(dy));
             std::vector<Array> cores;
             for (const auto& c : g.cores) cores.push_back(to_array(c));
             return py::make_tuple(to_array(dx), cores, g.bias.empty() ? py::object(py::none()) : py::object(to_array(g.bias)));
           })
      .def(
          "meter",
          [](const TTLinear<double>& l, std::size_t K, const std::string& scheme) {
            BufferMeter meter;
            const Tensor<double> x = Tensor<double>::matrix(l.cols(), K);
            if (scheme == "rtl")
              l.forward_rtl(x, &meter);
            else if (scheme == "btt")
              const_cast<TTLinear<double>&>(l).forward_btt(x, false, Exec::Serial, &meter);
            else
              throw std::invalid_argument("scheme must be 'rtl' or 'btt'");
            return py::make_tuple(meter.muls(), meter.peak());
          },
          py::arg("K"), py::arg("scheme") = "btt");

  py::class_<TTMEmbedding<double>>(m, "TTMEmbedding")
      .def_static(
          "random",
          [](std::vector<std::size_t> emb, std::vector<std::size_t> vocab, std::vector<std::size_t> ranks,
             std::uint64_t seed, double variance) {
            Rng rng(seed);
            return TTMEmbedding<double>::random(std::move(emb), std::move(vocab), std::move(ranks), rng, variance);
          },
          py::arg("emb_modes"), py::arg("vocab_modes"), py::arg("ranks"), py::arg("seed") = 0,
          py::arg("variance") = 1.0 / 3.0)
      .def_property_readonly("dim", &TTMEmbedding<double>::dim)
      .def_property_readonly("vocab", &TTMEmbedding<double>::vocab)
      .def_property_readonly("param_count", [](const TTMEmbedding<double>& e) { return e.table().param_count(); })
      .def("lookup", [](const TTMEmbedding<double>& e, const std::vector<std::size_t>& ids) { return to_array(e.lookup(ids)); })
      .def("dense", [](const TTMEmbedding<double>& e) { return to_array(e.lookup(all_ids(e.vocab()))); });

  m.def(
      "cost_report",
      [](std::vector<std::size_t> out, std::vector<std::size_t> in, std::size_t rank, std::size_t K) {
        return report_json(compare_report(layer(std::move(out), std::move(in), rank, K))).dump();
      },
      py::arg("out_modes"), py::arg("in_modes"), py::arg("rank"), py::arg("K"));
  m.def(
      "sweep",
      [](std::vector<std::size_t> out, std::vector<std::size_t> in, std::size_t rank, std::size_t K,
         const std::string& axis, const std::vector<std::size_t>& values) {
        if (axis != "K" && axis != "rank") throw std::invalid_argument("axis must be 'K' or 'rank'");
        const SweepAxis a = axis == "K" ? SweepAxis::K : SweepAxis::Rank;
        return sweep_json(a, sweep(layer(std::move(out), std::move(in), rank, K), a, values)).dump();
      },
      py::arg("out_modes"), py::arg("in_modes"), py::arg("rank"), py::arg("K"), py::arg("axis"), py::arg("values"));
  m.def("closed_forms", [](std::vector<std::size_t> out, std::vector<std::size_t> in, std::vector<std::size_t> ranks,
                           std::size_t K) {
    LayerConfig c{std::move(out), std::move(in), std::move(ranks), K, {}};
    c.validate();
    py::dict d;
    d["mul_mm"] = mul_mm(c);
    d["mem_mm"] = mem_mm(c);
    d["mul_rtl"] = mul_tt_rtl(c);
    d["mem_rtl"] = mem_tt_rtl(c);
    d["mul_btt"] = mul_btt(c);
    d["mem_btt"] = mem_btt(c);
    d["mul_ttm"] = mul_ttm(c);
    d["mem_ttm"] = mem_ttm(c);
    d["tt_params"] = tt_weight_elems(c);
    return d;
  });

  m.def(
      "schedule_qkv",
      [](bool naive, std::size_t layers, std::size_t d) {
        const auto t = schedule_qkv(naive, layers, d);
        check_schedule(t);
        py::dict out;
        out["mul0_instances"] = t.instance_count(Kernel::MUL0);
        out["makespan"] = t.makespan;
        return out;
      },
      py::arg("naive"), py::arg("layers") = 3, py::arg("d") = 2);
  m.def(
      "bram_plan",
      [](const std::string& manifest, std::size_t g_max) {
        const auto arrays = arrays_from_json(nlohmann::json::parse(manifest));
        OptimizeOptions opt;
        opt.g_max = g_max;
        return plan_json(optimize(arrays, BlockSpec{}, opt), arrays).dump();
      },
      py::arg("manifest"), py::arg("g_max") = 8);

  m.def(
      "synthesize",
      [](std::size_t classes, std::size_t length, std::size_t count, std::uint64_t seed, std::size_t vocab) {
        std::ostringstream os;
        write_jsonl(os, synthesize(SyntheticSpec{classes, length, count, seed, vocab}));
        return os.str();
      },
      py::arg("classes") = 2, py::arg("length") = 32, py::arg("count") = 500, py::arg("seed") = 7,
      py::arg("vocab") = 100);
  m.def(
      "train",
      [](const std::string& config, std::size_t epochs) {
        RunConfig c = parse_config(parse(config));
        if (epochs) c.train.epochs = epochs;
        const auto data = synthesize(c.data.synthetic);
        check_dataset(data, c.model);
        TransformerModel<float> model(c.model, c.train.seed);
        std::vector<EpochMetrics> metrics;
        {
          py::gil_scoped_release release;
          metrics = train(model, data, c.train, c.data.slots && c.model.num_slot_labels > 0);
        }
        py::list rows;
        for (const auto& e : metrics) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["loss"] = e.loss;
          d["intent_acc"] = e.intent_acc;
          d["slot_acc"] = e.slot_acc;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config") = "", py::arg("epochs") = 0);
  m.def(
      "gradcheck",
      [](const std::string& config) {
        const RunConfig c = parse_config(parse(config));
        TransformerModel<double> model(c.model, c.train.seed);
        SyntheticSpec s = c.data.synthetic;
        s.length = c.gradcheck.seq;
        s.count = c.gradcheck.batch;
        s.vocab = std::min(s.vocab, c.model.vocab());
        const auto data = synthesize(s);
        const Batch b = make_batch(data, all_ids(data.size()), c.gradcheck.seq, c.model.num_slot_labels > 0);
        const auto r = gradcheck_model(model, b, c.gradcheck.h);
        py::dict d;
        d["max_rel_error"] = r.max_rel_error;
        d["worst"] = r.worst;
        d["checked"] = r.checked;
        return d;
      },
      py::arg("config") = "");
  m.def("compression", [](const std::string& config) {
    const RunConfig c = parse_config(parse(config));
    TransformerModel<float> model(c.model, c.train.seed);
    return py::make_tuple(model.param_count(), model.dense_param_count());
  });
}
