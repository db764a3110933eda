#include "commands.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "bttrain/checkpoint.hpp"
#include "bttrain/costmodel.hpp"
#include "bttrain/dataset.hpp"
#include "bttrain/gradcheck.hpp"
#include "bttrain/schedule.hpp"
#include "bttrain/trainer.hpp"
#include "bttrain/tt_linear.hpp"

namespace bttrain::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os << content;
  if (!os) throw std::runtime_error("failed to write " + p.string());
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

std::vector<Example> load_data(const RunConfig& c) {
  std::vector<Example> data = c.data.path.empty() ? synthesize(c.data.synthetic) : load_jsonl(c.data.path);
  check_dataset(data, c.model);
  return data;
}

json compression_json(TransformerModel<float>& model) {
  const std::size_t n = model.param_count();
  const std::size_t dense = model.dense_param_count();
  return {{"compressed_params", n}, {"dense_params", dense}, {"compressed_bytes", 4 * n},
          {"dense_bytes", 4 * dense}, {"ratio", static_cast<double>(dense) / static_cast<double>(n)}};
}

json bram_json(const std::vector<FactorArray>& arrays, const BramConfig& b) {
  OptimizeOptions opt;
  opt.g_max = b.g_max;
  const BramPlan best = optimize(arrays, b.spec, opt);
  const BramPlan base = best_ungrouped(arrays, b.spec, Strategy::Partition);
  return {{"optimized", plan_json(best, arrays)},
          {"baseline_partition", plan_json(base, arrays)},
          {"eta_gain", best.efficiency() / base.efficiency()}};
}

}  // namespace

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? parse_config(json::object()) : load_config(o.config_path);
  if (o.seed) c.train.seed = *o.seed;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.threads) {
    if (*o.threads == 0) throw ConfigError("--threads must be >= 1");
    c.train.threads = *o.threads;
  }
  if (o.spill) c.train.spill_activations = true;
  return c;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve_config(o);
  const auto data = load_data(c);
  fs::create_directories(o.out);
  TransformerModel<float> model(c.model, c.train.seed);
  if (c.train.spill_activations) model.enable_spill(o.out / "activations.spill");
  const bool slots = c.data.slots && c.model.num_slot_labels > 0;

  std::ofstream metrics(o.out / "metrics.csv", std::ios::trunc);
  write_metrics_header(metrics);
  train(model, data, c.train, slots, [&](const EpochMetrics& m) {
    write_metrics_row(metrics, m);
    metrics.flush();
    if (o.verbosity >= 0)
      std::cout << "epoch " << m.epoch << " loss " << m.loss << " intent_acc " << m.intent_acc << " slot_acc "
                << m.slot_acc << "\n";
  });
  const json cfg = config_to_json(c);
  save_checkpoint(o.out / "checkpoint.bin", model, cfg);

  json side;
  side["cost_report"] = report_json(compare_report(c.cost_layer(), c.costmodel.multiplier));
  side["bram"] = bram_json(factor_inventory(model_params(model), c.bram.element_bits), c.bram);
  side["compression"] = compression_json(model);
  write_file(o.out / "sidecar.json", pretty(side));
  if (o.verbosity >= 0)
    std::cout << "compression " << side["compression"]["ratio"].get<double>() << "x, wrote " << o.out.string() << "\n";
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const RunConfig c = resolve_config(o);
  fs::create_directories(o.out);
  TransformerModel<double> model(c.model, c.train.seed);
  SyntheticSpec s = c.data.synthetic;
  s.length = c.gradcheck.seq;
  s.count = c.gradcheck.batch;
  s.vocab = std::min(s.vocab, c.model.vocab());
  auto data = synthesize(s);
  check_dataset(data, c.model);
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  ModelConfig mc = c.model;
  const Batch b = make_batch(data, idx, c.gradcheck.seq, mc.num_slot_labels > 0);
  const GradcheckResult r = gradcheck_model(model, b, c.gradcheck.h);
  const bool ok = r.max_rel_error <= c.gradcheck.threshold;
  json j = {{"checked", r.checked}, {"max_rel_error", r.max_rel_error}, {"worst", r.worst},
            {"threshold", c.gradcheck.threshold}, {"h", c.gradcheck.h}, {"pass", ok}};
  write_file(o.out / "gradcheck.json", pretty(j));
  std::cout << "gradcheck: " << r.checked << " parameters, max rel. err " << r.max_rel_error << " (" << r.worst
            << "), threshold " << c.gradcheck.threshold << (ok ? " PASS" : " FAIL") << "\n";
  return ok ? 0 : 1;
}

int cmd_costmodel(const Options& o) {
  const RunConfig c = resolve_config(o);
  fs::create_directories(o.out);
  const LayerConfig layer = c.cost_layer();
  const CostReport rep = compare_report(layer, c.costmodel.multiplier);
  {
    std::ostringstream os;
    write_report_csv(os, rep);
    write_file(o.out / "report.csv", os.str());
    write_file(o.out / "report.json", pretty(report_json(rep)));
  }
  for (auto axis : {SweepAxis::K, SweepAxis::Rank}) {
    const auto& values = axis == SweepAxis::K ? c.costmodel.sweep_K : c.costmodel.sweep_rank;
    const auto rows = sweep(layer, axis, values, c.costmodel.multiplier);
    std::ostringstream os;
    write_sweep_csv(os, axis, rows);
    const std::string stem = std::string("sweep_") + sweep_axis_name(axis);
    write_file(o.out / (stem + ".csv"), os.str());
    write_file(o.out / (stem + ".json"), pretty(sweep_json(axis, rows)));
  }

  // Execute the layer once per scheme with instrumentation.
  Rng rng = Rng::substream(c.train.seed, "costmodel");
  auto tt = TTLinear<double>::random(layer.out_modes, layer.in_modes, layer.ranks, false, rng);
  Tensor<double> x = Tensor<double>::matrix(layer.N(), layer.K);
  for (auto& v : x.storage()) v = rng.uniform(-1, 1);
  Tensor<double> dy = Tensor<double>::matrix(layer.M(), layer.K);
  for (auto& v : dy.storage()) v = rng.uniform(-1, 1);
  BufferMeter rtl, btt, bp_fused, bp_unfused;
  tt.forward_rtl(x, &rtl);
  tt.forward_btt(x, true, Exec::Serial, &btt);
  tt.backward_cores(dy, &bp_fused, BpFusion::Fused);
  tt.backward_cores(dy, &bp_unfused, BpFusion::Unfused);
  {
    std::ostringstream os;
    BufferMeter::write_csv_header(os);
    rtl.write_csv(os, "layer", "rtl");
    btt.write_csv(os, "layer", "btt");
    bp_fused.write_csv(os, "layer", "bp_fused");
    bp_unfused.write_csv(os, "layer", "bp_unfused");
    write_file(o.out / "meter.csv", os.str());
  }

  const auto naive = schedule_qkv(true);
  const auto resched = schedule_qkv(false);
  check_schedule(naive);
  check_schedule(resched);
  const auto fused = schedule_fused_bp(layer, true);
  const auto unfused = schedule_fused_bp(layer, false);
  check_schedule(fused);
  check_schedule(unfused);
  json sched = {{"qkv_naive", {{"MUL0_instances", naive.instance_count(Kernel::MUL0)}, {"makespan", naive.makespan}}},
                {"qkv_rescheduled",
                 {{"MUL0_instances", resched.instance_count(Kernel::MUL0)}, {"makespan", resched.makespan}}},
                {"bp_fused_peak", fused.peak_buffer},
                {"bp_unfused_peak", unfused.peak_buffer}};
  write_file(o.out / "schedule.json", pretty(sched));

  const bool exact = rtl.muls() == mul_tt_rtl(layer) && rtl.peak() == mem_tt_rtl(layer) &&
                     btt.muls() == mul_btt(layer) && btt.peak() == mem_btt(layer);
  std::cout << "MM " << rep.get(Scheme::MM).muls << " muls; BTT " << rep.get(Scheme::BTT).muls << " muls ("
            << rep.compute_ratio(Scheme::BTT) << "x); instrumented counts "
            << (exact ? "match" : "DO NOT match") << " the closed forms\n";
  return exact ? 0 : 1;
}

int cmd_bramplan(const Options& o) {
  const RunConfig c = resolve_config(o);
  fs::create_directories(o.out);
  std::vector<FactorArray> arrays;
  if (!c.bram.manifest.empty()) {
    std::ifstream is(c.bram.manifest);
    if (!is) throw std::runtime_error("cannot open manifest " + c.bram.manifest);
    arrays = arrays_from_json(json::parse(is));
  } else {
    TransformerModel<float> model(c.model, c.train.seed);
    arrays = factor_inventory(model_params(model), c.bram.element_bits);
  }
  write_file(o.out / "inventory.json", pretty(arrays_json(arrays)));
  OptimizeOptions opt;
  opt.g_max = c.bram.g_max;
  const BramPlan best = optimize(arrays, c.bram.spec, opt);
  const BramPlan part = best_ungrouped(arrays, c.bram.spec, Strategy::Partition);
  const BramPlan resh = best_ungrouped(arrays, c.bram.spec, Strategy::Reshape);
  write_file(o.out / "plan.json", pretty(plan_json(best, arrays)));
  std::ostringstream os;
  write_plan_csv_header(os);
  write_plan_csv_row(os, best, "optimized");
  write_plan_csv_row(os, part, "partition_ungrouped");
  write_plan_csv_row(os, resh, "reshape_ungrouped");
  write_file(o.out / "plan.csv", os.str());
  std::cout << arrays.size() << " arrays: optimized " << best.n_total << " blocks (eta " << best.efficiency()
            << "), ungrouped partitioning " << part.n_total << " blocks (eta " << part.efficiency() << ")\n";
  return 0;
}

int cmd_synthdata(const Options& o) {
  RunConfig c = resolve_config(o);
  SyntheticSpec s = c.data.synthetic;
  if (o.classes) s.classes = *o.classes;
  if (o.length) s.length = *o.length;
  if (o.count) s.count = *o.count;
  if (o.vocab) s.vocab = *o.vocab;
  if (o.seed) s.seed = *o.seed;
  fs::create_directories(o.out);
  std::ostringstream os;
  write_jsonl(os, synthesize(s));
  write_file(o.out / "data.jsonl", os.str());
  std::cout << "wrote " << s.count << " records to " << (o.out / "data.jsonl").string() << "\n";
  return 0;
}

}  // namespace bttrain::cli
