// Command-line front end for the state-based retrieval pipeline.
//
// Verbs mirror the pipeline stages: gen-data, train-wm, retrieve,
// train-policy, eval, pipeline, experiment, export-embeddings. Every verb is
// driven by a JSON config (--config); --seed narrows the run to one seed,
// --out overrides the config's output directory, --no-cache forces stages to
// re-run. Logging level comes from SBR_LOG_LEVEL (error|warn|info|debug).

#include <CLI11.hpp>

#include "sbr/pipeline.hpp"

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool cache = true;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "pipeline config JSON")->required();
  cmd->add_option("--seed", args.seed, "override the config's seed list with one seed");
  cmd->add_option("--out", args.out_dir, "override the config's out_dir");
  cmd->add_flag("--cache,!--no-cache", args.cache, "reuse cached stage artifacts");
}

sbr::PipelineConfig load_config(const CommonArgs& args) {
  sbr::PipelineConfig cfg = sbr::PipelineConfig::from_file(args.config_path);
  if (args.seed.has_value()) {
    cfg.seeds = {*args.seed};
  }
  if (!args.out_dir.empty()) {
    cfg.out_dir = args.out_dir;
  }
  cfg.validate();
  return cfg;
}

void print_stage(const sbr::StageInfo& info) {
  std::printf("%-14s %-8s %.2fs\n", info.name.c_str(), info.status.c_str(), info.seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"state-based retrieval for offline imitation learning"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string embeddings_out = "embeddings.csv";

  CLI::App* gen_data = app.add_subcommand("gen-data", "generate expert/offline datasets");
  add_common(gen_data, args);
  CLI::App* train_wm = app.add_subcommand("train-wm", "train the world model");
  add_common(train_wm, args);
  CLI::App* retrieve = app.add_subcommand("retrieve", "run the state-based search");
  add_common(retrieve, args);
  CLI::App* train_policy = app.add_subcommand("train-policy", "behavior-clone the policy");
  add_common(train_policy, args);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate the trained policy");
  add_common(eval_cmd, args);
  CLI::App* pipeline = app.add_subcommand("pipeline", "run all stages in order");
  add_common(pipeline, args);
  CLI::App* experiment = app.add_subcommand("experiment", "run a mode x seed x layout matrix");
  add_common(experiment, args);
  CLI::App* export_emb =
      app.add_subcommand("export-embeddings", "dump encoded states to CSV");
  add_common(export_emb, args);
  export_emb->add_option("--csv", embeddings_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_data->parsed()) {
      sbr::stage_gen_data(load_config(args), args.cache);
    } else if (train_wm->parsed()) {
      const sbr::PipelineConfig cfg = load_config(args);
      sbr::stage_gen_data(cfg, args.cache);
      for (const auto seed : cfg.seeds) {
        print_stage(sbr::stage_train_wm(cfg, seed, args.cache));
      }
    } else if (retrieve->parsed()) {
      const sbr::PipelineConfig cfg = load_config(args);
      for (const auto seed : cfg.seeds) {
        print_stage(sbr::stage_retrieve(cfg, seed, args.cache));
      }
    } else if (train_policy->parsed()) {
      const sbr::PipelineConfig cfg = load_config(args);
      for (const auto seed : cfg.seeds) {
        print_stage(sbr::stage_train_policy(cfg, seed, args.cache));
      }
    } else if (eval_cmd->parsed()) {
      const sbr::PipelineConfig cfg = load_config(args);
      for (const auto seed : cfg.seeds) {
        sbr::EvalReport report;
        double score = 0.0;
        print_stage(sbr::stage_eval(cfg, seed, args.cache, &report, &score));
        std::printf("seed %llu: return %.4f  disc %.4f  success %.2f  norm_score %.2f\n",
                    static_cast<unsigned long long>(seed), report.mean_return,
                    report.mean_discounted, report.success_rate, score);
      }
    } else if (pipeline->parsed()) {
      const sbr::PipelineConfig cfg = load_config(args);
      const sbr::RunRecord record = sbr::run_pipeline(cfg, args.cache);
      for (const auto& run : record.runs) {
        std::printf("seed %llu: return %.4f  success %.2f  norm_score %.2f\n",
                    static_cast<unsigned long long>(run.seed), run.eval.mean_return,
                    run.eval.success_rate, run.norm_score);
      }
      std::printf("run record: %s/run_record.json\n", cfg.out_dir.c_str());
    } else if (experiment->parsed()) {
      const sbr::ExperimentConfig cfg = sbr::ExperimentConfig::from_file(args.config_path);
      const auto cells = sbr::run_experiment(cfg, args.cache);
      int failures = 0;
      for (const auto& cell : cells) {
        if (cell.status != "ok") {
          ++failures;
        }
      }
      std::printf("experiment: %zu cells, %d failed; results at %s/results.csv\n",
                  cells.size(), failures, cfg.out_dir.c_str());
      return failures == 0 ? 0 : 1;
    } else if (export_emb->parsed()) {
      const sbr::PipelineConfig cfg = load_config(args);
      sbr::export_embeddings_cmd(cfg, cfg.seeds.front(), embeddings_out);
      std::printf("embeddings written to %s\n", embeddings_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
