#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flexclip/data.hpp"
#include "flexclip/errors.hpp"
#include "flexclip/pipeline.hpp"
#include "flexclip/synth.hpp"

namespace fs = std::filesystem;
using namespace flexclip;

namespace {

struct CommonFlags {
  std::string config;
  std::string preset = "synthetic";
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> x_shot;
  pipeline::Ablation ablation;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* app, CommonFlags& f, bool ablations) {
  app->add_option("-c,--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--preset", f.preset, "preset when no config is given");
  app->add_option("-o,--out", f.out, "output directory");
  app->add_option("--seed", f.seed, "run a single seed");
  app->add_option("--x-shot", f.x_shot, "run a single x-shot value");
  if (ablations) {
    app->add_flag("--no-vae", f.ablation.no_vae, "drop the VAE path of stage 1");
    app->add_flag("--no-generation", f.ablation.no_generation, "skip stage 1 entirely");
    app->add_flag("--no-gate", f.ablation.no_gate, "fix the fusion gate open");
    app->add_flag("--no-l1", f.ablation.no_l1, "drop the cross-entropy loss");
    app->add_flag("--no-l2", f.ablation.no_l2, "drop the consistency loss");
    app->add_flag("--no-l3", f.ablation.no_l3, "drop the contrastive loss");
    app->add_option("--workers", f.workers, "grid cells run concurrently");
  }
}

pipeline::ExperimentConfig resolve(const CommonFlags& f) {
  pipeline::ExperimentConfig cfg =
      f.config.empty() ? pipeline::preset_config(f.preset) : pipeline::load_config(f.config);
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.seed) cfg.seeds = {*f.seed};
  if (f.x_shot) cfg.x_shots = {*f.x_shot};
  if (f.workers) cfg.workers = *f.workers;
  auto& a = cfg.ablation;
  a.no_vae |= f.ablation.no_vae;
  a.no_generation |= f.ablation.no_generation;
  a.no_gate |= f.ablation.no_gate;
  a.no_l1 |= f.ablation.no_l1;
  a.no_l2 |= f.ablation.no_l2;
  a.no_l3 |= f.ablation.no_l3;
  cfg.validate();
  return cfg;
}

void print_report(const retrieval::EvaluationReport& r) {
  std::printf("%s  Img2Txt %.4f  Txt2Img %.4f  Avg %.4f\n", retrieval::to_string(r.domain).c_str(),
              double(r.img2txt.map), double(r.txt2img.map), double(r.avg));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flexclip: X-shot cross-modal retrieval"};
  app.require_subcommand(1);

  data::SynthSpec spec;
  std::string data_out = "synthetic_corpus";
  auto* make_data = app.add_subcommand("make-data", "write a synthetic corpus to disk");
  make_data->add_option("-o,--out", data_out, "output directory");
  make_data->add_option("--classes", spec.n_classes);
  make_data->add_option("--per-class", spec.per_class);
  make_data->add_option("--dim", spec.dim);
  make_data->add_option("--gap", spec.modality_gap);
  make_data->add_option("--noise", spec.noise_sigma);
  make_data->add_option("--mixing", spec.modality_mixing);
  make_data->add_option("--rank", spec.semantic_rank);
  make_data->add_option("--seed", spec.seed);

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "full grid: stage 1, synthesis, stage 2, evaluation");
  add_common(run, run_flags, true);
  bool print_config = false;
  run->add_flag("--print-config", print_config, "print the resolved config and exit");

  CommonFlags synth_flags;
  auto* synth = app.add_subcommand("synth", "stage 1 and pseudo-pair synthesis for one cell");
  add_common(synth, synth_flags, true);

  CommonFlags proj_flags;
  std::string pseudo_dir;
  auto* train_proj = app.add_subcommand("train-proj", "stage 2 for one cell");
  add_common(train_proj, proj_flags, true);
  train_proj->add_option("--pseudo", pseudo_dir, "pseudo corpus written by synth")
      ->check(CLI::ExistingDirectory);

  CommonFlags eval_flags;
  std::string checkpoint;
  std::string domain = "target";
  auto* eval = app.add_subcommand("eval", "evaluate a projection checkpoint");
  add_common(eval, eval_flags, false);
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--domain", domain)->check(CLI::IsMember({"source", "target"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make_data) {
      const data::Corpus corpus = data::synth_corpus(spec);
      fs::create_directories(data_out);
      data::write_corpus(corpus, data::CorpusPaths::in_dir(data_out));
      std::printf("wrote %zu pairs, %zu classes, dim %zu to %s\n", corpus.size(),
                  corpus.classes().size(), corpus.dim(), data_out.c_str());
      return 0;
    }

    if (*run) {
      const auto cfg = resolve(run_flags);
      if (print_config) {
        std::cout << pipeline::to_json(cfg).dump(2) << '\n';
        return 0;
      }
      const auto record = pipeline::run_experiment(cfg, true);
      for (const auto& c : record.cells) {
        if (!c.ok) {
          std::printf("x=%zu seed=%llu FAILED: %s\n", c.x_shot, (unsigned long long)c.seed,
                      c.error.c_str());
          continue;
        }
        std::printf("x=%zu seed=%llu  ", c.x_shot, (unsigned long long)c.seed);
        print_report(c.target);
        for (const auto& w : c.warnings) std::printf("  warning: %s\n", w.c_str());
      }
      std::printf("run record: %s\n", (cfg.output_dir / "run_record.json").c_str());
      return record.all_ok() ? 0 : 1;
    }

    auto single_cell = [](const CommonFlags& f, const pipeline::ExperimentConfig& cfg) {
      if (cfg.x_shots.size() != 1 || cfg.seeds.size() != 1) {
        throw ConfigError("this command runs one cell: give --x-shot and --seed");
      }
      (void)f;
      return std::pair{cfg.x_shots.front(), cfg.seeds.front()};
    };

    if (*synth) {
      const auto cfg = resolve(synth_flags);
      const auto [x, seed] = single_cell(synth_flags, cfg);
      const auto out = pipeline::run_synth(cfg, x, seed, cfg.output_dir);
      std::printf("recon image %.5f -> %.5f, text %.5f -> %.5f\n", double(out.image_log.initial.recon),
                  double(out.image_log.final.recon), double(out.text_log.initial.recon),
                  double(out.text_log.final.recon));
      std::printf("checkpoints: %s %s\npseudo corpus: %s\n", out.image_checkpoint.c_str(),
                  out.text_checkpoint.c_str(), out.pseudo_dir.c_str());
      return 0;
    }

    if (*train_proj) {
      const auto cfg = resolve(proj_flags);
      const auto [x, seed] = single_cell(proj_flags, cfg);
      std::optional<fs::path> pseudo;
      if (!pseudo_dir.empty()) pseudo = pseudo_dir;
      print_report(pipeline::run_train_projection(cfg, x, seed, pseudo, cfg.output_dir));
      return 0;
    }

    if (*eval) {
      const auto cfg = resolve(eval_flags);
      const auto [x, seed] = single_cell(eval_flags, cfg);
      const auto d = domain == "source" ? retrieval::Domain::source : retrieval::Domain::target;
      const auto report = pipeline::run_eval(checkpoint, cfg, x, seed, d);
      print_report(report);
      std::cout << retrieval::to_json(report).dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
