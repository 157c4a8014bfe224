#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "flexclip/data.hpp"
#include "flexclip/generation.hpp"
#include "flexclip/projection.hpp"
#include "flexclip/retrieval.hpp"
#include "flexclip/split.hpp"
#include "flexclip/synth.hpp"

namespace flexclip::pipeline {

inline constexpr const char* kArtifactVersion = "flexclip 1.0.0";

struct Ablation {
  bool no_vae = false;
  bool no_generation = false;
  bool no_gate = false;
  bool no_l1 = false;
  bool no_l2 = false;
  bool no_l3 = false;

  bool operator==(const Ablation&) const = default;
};

/// Where the corpus comes from: exactly one of the three is set.
struct CorpusSource {
  std::optional<data::SynthSpec> synthetic;
  std::optional<std::filesystem::path> dir;
  std::optional<data::CorpusPaths> files;
};

struct ExperimentConfig {
  std::string preset = "synthetic";
  CorpusSource corpus;
  std::vector<std::size_t> x_shots{0, 1, 3, 5, 7};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  data::SplitOptions split;
  generation::GenHyperParams generation;
  projection::ProjHyperParams projection;
  /// Pseudo pairs per target class.
  std::size_t gen_num = 30;
  Ablation ablation;
  std::filesystem::path output_dir = "flexclip_out";
  /// Grid cells evaluated concurrently.
  std::size_t workers = 1;
  bool save_checkpoints = true;
  bool evaluate_source = true;

  void validate() const;
};

/// Named presets: "synthetic" (desk-scale benchmark with its own corpus)
/// and the four dataset presets "wikipedia", "pascal", "nuswide",
/// "nuswide10k", which expect embedding files.
ExperimentConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

/// Starts from the preset named in j["preset"] (default "synthetic") and
/// overlays every other key. Unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Fully resolved config, every defaulted value included.
nlohmann::json to_json(const ExperimentConfig& cfg);
/// FNV-1a of the resolved config, hex.
std::string fingerprint(const ExperimentConfig& cfg);

data::Corpus load_experiment_corpus(const ExperimentConfig& cfg);

/// Stage hyperparameters for one (x_shot, seed) cell with seeds fanned out
/// into named streams and ablations applied.
generation::GenHyperParams cell_generation_hparams(const ExperimentConfig& cfg, std::uint64_t seed);
projection::ProjHyperParams cell_projection_hparams(const ExperimentConfig& cfg, std::uint64_t seed);
data::XShotSplit cell_split(const ExperimentConfig& cfg, const data::Corpus& corpus,
                            std::size_t x_shot, std::uint64_t seed);

struct StageTimings {
  double split_s = 0;
  double generation_s = 0;
  double synthesis_s = 0;
  double projection_s = 0;
  double evaluation_s = 0;
};

struct CellResult {
  std::size_t x_shot = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<std::string> warnings;
  retrieval::EvaluationReport target;
  std::optional<retrieval::EvaluationReport> source;
  /// Raw-feature cosine baseline on the same target split.
  retrieval::EvaluationReport baseline;
  std::optional<generation::GenerationLog> image_generation_log;
  std::optional<generation::GenerationLog> text_generation_log;
  projection::ProjectionLog projection_log;
  std::size_t pseudo_pairs = 0;
  /// Hash of the stage-1 parameters before and after stage 2.
  std::string stage1_checksum_before;
  std::string stage1_checksum_after;
  std::vector<std::string> checkpoints;
  StageTimings timings;
};

struct RunRecord {
  std::string artifact_version = kArtifactVersion;
  std::string config_fingerprint;
  nlohmann::json resolved_config;
  std::vector<CellResult> cells;

  bool all_ok() const;
};

/// Hash of every parameter value of a stage-1 model.
std::string parameter_checksum(const generation::VaeGanModel& model);

/// Runs one grid cell in memory. Checkpoints go under `cell_dir` when set.
CellResult run_cell(const ExperimentConfig& cfg, const data::Corpus& corpus, std::size_t x_shot,
                    std::uint64_t seed,
                    const std::optional<std::filesystem::path>& cell_dir = std::nullopt);

/// Every (x_shot, seed) cell; a failing cell records its error and the rest
/// proceed. Writes per-cell report.json and run_record.json under
/// cfg.output_dir when `write_files`.
RunRecord run_experiment(const ExperimentConfig& cfg, bool write_files = true);

std::filesystem::path cell_directory(const ExperimentConfig& cfg, std::size_t x_shot,
                                     std::uint64_t seed);

nlohmann::json to_json(const CellResult& cell);
nlohmann::json to_json(const RunRecord& record);
/// Only the retrieval reports of every cell; identical configs give identical values.
nlohmann::json reports_json(const RunRecord& record);

struct SynthOutput {
  std::filesystem::path image_checkpoint;
  std::filesystem::path text_checkpoint;
  std::filesystem::path pseudo_dir;
  generation::GenerationLog image_log;
  generation::GenerationLog text_log;
};

/// Stage 1 plus synthesis for one cell; writes both checkpoints and the
/// pseudo corpus (in the embedding file format) under `out_dir`.
SynthOutput run_synth(const ExperimentConfig& cfg, std::size_t x_shot, std::uint64_t seed,
                      const std::filesystem::path& out_dir);

/// Stage 2 for one cell, optionally on a pseudo corpus directory written by
/// run_synth; writes projection.ckpt and report.json under `out_dir`.
retrieval::EvaluationReport run_train_projection(const ExperimentConfig& cfg, std::size_t x_shot,
                                                 std::uint64_t seed,
                                                 const std::optional<std::filesystem::path>& pseudo_dir,
                                                 const std::filesystem::path& out_dir);

/// Loads a projection checkpoint and evaluates it on the cell's split.
retrieval::EvaluationReport run_eval(const std::filesystem::path& checkpoint,
                                     const ExperimentConfig& cfg, std::size_t x_shot,
                                     std::uint64_t seed, retrieval::Domain domain);

}  // namespace flexclip::pipeline
