// Command-line entry point: every experiment in the repo runs from a flat
// key=value config plus --set overrides, and writes its artifacts (resolved
// config, version stamp, CSVs, checkpoints) into one output directory.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "softmoe/analysis.hpp"
#include "softmoe/bench.hpp"
#include "softmoe/checkpoint.hpp"
#include "softmoe/config.hpp"
#include "softmoe/flops.hpp"
#include "softmoe/train.hpp"
#include "softmoe/version.hpp"

namespace fs = std::filesystem;
using namespace softmoe;

namespace {

struct RunContext {
  ExperimentConfig cfg;
  std::string out_dir;
  int parallel = 1;
};

void prepare_out_dir(RunContext& ctx) {
  fs::create_directories(ctx.out_dir);
  std::ofstream resolved(ctx.out_dir + "/config.resolved");
  resolved << "# " << kVersion << "\n" << ctx.cfg.resolved();
  std::ofstream version(ctx.out_dir + "/version.txt");
  version << kVersion << "\n";
}

FILE* open_csv(const std::string& path, const char* header) {
  FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + path);
  std::fprintf(f, "%s\n", header);
  return f;
}

int run_train(RunContext& ctx) {
  EncoderConfig enc_cfg = ctx.cfg.encoder_config();
  enc_cfg.validate();
  SynthTask task = ctx.cfg.synth_task();
  TrainHyper hyper = ctx.cfg.train_hyper();
  hyper.out_dir = ctx.out_dir;

  Rng init_rng = Rng::fork(ctx.cfg.seed(), 0x696e6974);
  Encoder model(enc_cfg, init_rng);
  TrainState state = init_train_state(model, ctx.cfg.seed());

  FILE* metrics = open_csv(ctx.out_dir + "/metrics.csv",
                           "step,loss,acc,drop_rate,aux_loss,wall_ms");
  train(model, state, task, hyper,
        [&](const StepMetrics& m, const Encoder::ForwardResult&) {
          std::fprintf(metrics, "%ld,%.9g,%.9g,%.9g,%.9g,%.3f\n", m.step, m.loss,
                       m.acc, m.drop_rate, m.aux_loss, m.wall_ms);
        });
  std::fclose(metrics);

  EvalResult ev = evaluate(model, eval_set(task, hyper.eval_size));
  std::printf("trained %ld steps (%s); eval accuracy %.4f, eval loss %.4f\n",
              state.step, state.stopped_early ? "stopped early" : "full run",
              ev.accuracy, ev.mean_loss);
  std::printf("parameters: %ld\n", model.param_count());
  return 0;
}

int run_drop_sweep(RunContext& ctx) {
  auto rows = dropping_sweep(ctx.cfg.sweep_config(), ctx.cfg.seed(), ctx.parallel);
  FILE* f = open_csv(ctx.out_dir + "/sweep.csv",
                     "router,E,K,c,bpr,group,drop_rate,multi_select_rate,max_load,"
                     "min_load");
  for (const auto& r : rows)
    std::fprintf(f, "%s,%ld,%ld,%.9g,%s,%ld,%.9g,%.9g,%.9g,%.9g\n",
                 r.cell.router.c_str(), r.cell.experts, r.cell.k, r.cell.c,
                 r.cell.bpr ? "true" : "false", r.cell.group_tokens, r.drop_rate,
                 r.multi_select_rate, r.max_load, r.min_load);
  std::fclose(f);
  std::printf("drop-sweep: %zu cells -> %s/sweep.csv\n", rows.size(),
              ctx.out_dir.c_str());
  return 0;
}

int run_collapse(RunContext& ctx) {
  const auto dims = ctx.cfg.get_long_list("collapse.dims");
  const long trials = ctx.cfg.get_long("collapse.trials");
  const long tokens = ctx.cfg.get_long("collapse.tokens");
  const long slots = ctx.cfg.get_long("collapse.slots");

  FILE* f = open_csv(ctx.out_dir + "/collapse.csv",
                     "d,normalized,mean_max_dispatch,mean_max_combine");
  FILE* lf = open_csv(ctx.out_dir + "/collapse_long.csv", "x,y,series");
  for (bool normalized : {false, true}) {
    Rng rng = Rng::fork(ctx.cfg.seed(), 0xc011, normalized ? 1 : 0);
    CollapseReport rep =
        collapse_experiment(dims, trials, normalized, rng, tokens, slots);
    for (const auto& rec : rep.records) {
      std::fprintf(f, "%ld,%s,%.9g,%.9g\n", rec.d,
                   rec.normalized ? "true" : "false", rec.mean_max_dispatch,
                   rec.mean_max_combine);
      const char* tag = normalized ? "normalized" : "unnormalized";
      std::fprintf(lf, "%ld,%.9g,%s_dispatch\n", rec.d, rec.mean_max_dispatch, tag);
      std::fprintf(lf, "%ld,%.9g,%s_combine\n", rec.d, rec.mean_max_combine, tag);
    }
  }
  std::fclose(f);
  std::fclose(lf);
  std::printf("collapse: %zu widths x 2 -> %s/collapse.csv\n", dims.size(),
              ctx.out_dir.c_str());
  return 0;
}

int run_flops(RunContext& ctx) {
  const std::string name = ctx.cfg.get_string("flops.model");
  const long res = ctx.cfg.get_long("flops.resolution");
  EncoderConfig cfg;
  try {
    cfg = name == "config" ? ctx.cfg.encoder_config() : model_preset(name);
  } catch (const UsageError& e) {
    throw ConfigError(std::string(e.what()) + " (key 'flops.model')");
  }
  CostModel c = flop_estimate(cfg, res);

  FILE* f = open_csv(ctx.out_dir + "/flops.csv", "component,flops");
  std::printf("%-18s %16s %10s\n", "component", "FLOPs/img", "GFLOP");
  for (const auto& [comp, v] : c.components()) {
    std::printf("%-18s %16.0f %10.2f\n", comp.c_str(), v, v / 1e9);
    std::fprintf(f, "%s,%.0f\n", comp.c_str(), v);
  }
  std::printf("%-18s %16.0f %10.2f\n", "total", c.total(), c.total() / 1e9);
  std::fprintf(f, "total,%.0f\n", c.total());
  std::fclose(f);
  return 0;
}

int run_bench(RunContext& ctx) {
  auto rows = throughput_bench(ctx.cfg.bench_grid(), ctx.cfg.seed());
  FILE* f = open_csv(ctx.out_dir + "/bench.csv", "router,E,slots,median_ms,reps");
  FILE* lf = open_csv(ctx.out_dir + "/bench_long.csv", "x,y,series");
  for (const auto& r : rows) {
    std::fprintf(f, "%s,%ld,%ld,%.6f,%ld\n", r.router.c_str(), r.experts, r.slots,
                 r.median_ms, r.reps);
    std::fprintf(lf, "%ld,%.6f,%s\n", r.experts, r.median_ms, r.router.c_str());
  }
  std::fclose(f);
  std::fclose(lf);
  std::printf("bench: %zu cells -> %s/bench.csv\n", rows.size(), ctx.out_dir.c_str());
  return 0;
}

int run_inspect(RunContext& ctx) {
  const std::string ckpt = ctx.cfg.get_string("inspect.checkpoint");
  if (ckpt.empty())
    throw ConfigError("key 'inspect.checkpoint' must name a checkpoint file");
  EncoderConfig enc_cfg = ctx.cfg.encoder_config();
  if (enc_cfg.moe.layers.empty() || (enc_cfg.moe.router != RouterKind::kSoft &&
                                     enc_cfg.moe.router != RouterKind::kVariant))
    throw ConfigError(
        "inspect requires a soft or variant router (key 'moe.router')");

  Rng init_rng = Rng::fork(ctx.cfg.seed(), 0x696e6974);
  Encoder model(enc_cfg, init_rng);
  load_into(model, ckpt);

  SynthTask task = ctx.cfg.synth_task();
  const long samples = ctx.cfg.get_long("inspect.samples");
  std::vector<Tensor> images;
  for (long i = 0; i < samples; ++i) images.push_back(task.sample(i).first);

  Graph g;
  Encoder::ForwardOptions opts;
  opts.capture_routing = true;
  Encoder::ForwardResult fwd = model.forward(g, images, opts);

  FILE* tc = open_csv(ctx.out_dir + "/token_contribution.csv",
                      "layer,sequence,token,summed_dispatch_weight");
  FILE* cd = open_csv(ctx.out_dir + "/cumulative_dispatch.csv",
                      "layer,sequence,slot,rank,cumulative_weight");
  FILE* cc = open_csv(ctx.out_dir + "/cumulative_combine.csv",
                      "layer,sequence,token,rank,cumulative_weight");
  for (const auto& diag : fwd.moe_diags) {
    for (size_t s = 0; s < diag.routing.size(); ++s) {
      const RoutingWeights& w = diag.routing[s];
      const auto contrib = token_contribution(w.dispatch);
      for (size_t t = 0; t < contrib.size(); ++t)
        std::fprintf(tc, "%ld,%zu,%zu,%.9g\n", diag.block, s, t, contrib[t]);
      const Tensor disp =
          cumulative_weight_curves(w.dispatch, WeightOrientation::kDispatch);
      for (long slot = 0; slot < disp.rows(); ++slot)
        for (long rank = 0; rank < disp.cols(); ++rank)
          std::fprintf(cd, "%ld,%zu,%ld,%ld,%.9g\n", diag.block, s, slot, rank + 1,
                       disp.at(slot, rank));
      const Tensor comb =
          cumulative_weight_curves(w.combine, WeightOrientation::kCombine);
      for (long tok = 0; tok < comb.rows(); ++tok)
        for (long rank = 0; rank < comb.cols(); ++rank)
          std::fprintf(cc, "%ld,%zu,%ld,%ld,%.9g\n", diag.block, s, tok, rank + 1,
                       comb.at(tok, rank));
    }
  }
  std::fclose(tc);
  std::fclose(cd);
  std::fclose(cc);

  FILE* sc = open_csv(ctx.out_dir + "/slot_correlation.csv",
                      "layer,slot_i,slot_j,cosine");
  for (const auto& [name, tensor] : model.param_refs()) {
    const size_t pos = name.find(".moe.phi");
    if (pos == std::string::npos) continue;
    const long block = std::stol(name.substr(5, pos - 5));  // "blockN.moe.phi"
    const Tensor corr = slot_correlation(*tensor);
    for (long i = 0; i < corr.rows(); ++i)
      for (long j = 0; j < corr.cols(); ++j)
        std::fprintf(sc, "%ld,%ld,%ld,%.9g\n", block, i, j, corr.at(i, j));
  }
  std::fclose(sc);
  std::printf("inspect: %zu MoE layers -> %s\n", fwd.moe_diags.size(),
              ctx.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"soft mixture-of-experts routing laboratory"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  long long seed_override = -1;
  int parallel = 1;
  std::string flops_model;
  long long flops_res = 0;

  app.add_option("--config", config_path, "experiment config file (key = value)");
  app.add_option("--set", overrides, "override a config key (key=value)")
      ->take_all();
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed_override, "seed override");
  app.add_option("--parallel", parallel, "worker threads for sweep cells");

  CLI::App* cmd_train =
      app.add_subcommand("train", "train an encoder on the synthetic task");
  CLI::App* cmd_sweep =
      app.add_subcommand("drop-sweep", "token-dropping statistics grid");
  CLI::App* cmd_collapse =
      app.add_subcommand("collapse", "softmax saturation study over widths");
  CLI::App* cmd_flops = app.add_subcommand("flops", "analytic per-image FLOP table");
  CLI::App* cmd_bench =
      app.add_subcommand("bench", "forward+backward throughput grid");
  CLI::App* cmd_inspect =
      app.add_subcommand("inspect", "routing-weight reports from a checkpoint");
  cmd_flops->add_option("--model", flops_model, "model preset (or 'config')");
  cmd_flops->add_option("--res", flops_res, "input resolution");

  CLI11_PARSE(app, argc, argv);

  try {
    RunContext ctx;
    if (!config_path.empty()) ctx.cfg.load_file(config_path);
    for (const std::string& kv : overrides) ctx.cfg.set_kv(kv);
    if (seed_override >= 0) ctx.cfg.set("seed", std::to_string(seed_override));
    if (!flops_model.empty()) ctx.cfg.set("flops.model", flops_model);
    if (flops_res > 0) ctx.cfg.set("flops.resolution", std::to_string(flops_res));
    ctx.parallel = parallel;

    const std::string sub = app.get_subcommands().front()->get_name();
    ctx.out_dir = out_dir.empty() ? "runs/" + sub : out_dir;
    prepare_out_dir(ctx);

    if (cmd_train->parsed()) return run_train(ctx);
    if (cmd_sweep->parsed()) return run_drop_sweep(ctx);
    if (cmd_collapse->parsed()) return run_collapse(ctx);
    if (cmd_flops->parsed()) return run_flops(ctx);
    if (cmd_bench->parsed()) return run_bench(ctx);
    if (cmd_inspect->parsed()) return run_inspect(ctx);
    return 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
