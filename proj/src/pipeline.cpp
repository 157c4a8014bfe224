#include "flexclip/pipeline.hpp"

#include <chrono>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "flexclip/checkpoint.hpp"
#include "flexclip/errors.hpp"
#include "flexclip/hparams_json.hpp"
#include "flexclip/rng.hpp"

namespace flexclip::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

generation::GenHyperParams desk_generation() {
  generation::GenHyperParams hp;
  hp.latent_dim = 32;
  hp.encoder_widths = {128, 96, 64};
  hp.generator_hidden = 96;
  hp.critic_hidden = 96;
  hp.batch = 32;
  hp.lr = Real(1e-3);
  hp.epochs = 60;
  return hp;
}

projection::ProjHyperParams desk_projection() {
  projection::ProjHyperParams hp;
  hp.projector_hidden = 128;
  hp.gate_hidden = 128;
  hp.batch = 64;
  hp.lr = Real(1e-3);
  hp.epochs = 40;
  return hp;
}

json synth_to_json(const data::SynthSpec& s) {
  return json{{"n_classes", s.n_classes},   {"per_class", s.per_class},
              {"dim", s.dim},               {"modality_gap", s.modality_gap},
              {"noise_sigma", s.noise_sigma}, {"modality_mixing", s.modality_mixing},
              {"seed", s.seed},
              {"semantic_rank", s.semantic_rank}, {"normalize", s.normalize}};
}

data::SynthSpec synth_from_json(const json& j, data::SynthSpec s) {
  const std::string sec = "corpus.synthetic";
  reject_unknown_keys(j,
                      {"n_classes", "per_class", "dim", "modality_gap", "noise_sigma", "modality_mixing", "seed",
                       "semantic_rank", "normalize"},
                      sec);
  read_key(j, "n_classes", s.n_classes, sec);
  read_key(j, "per_class", s.per_class, sec);
  read_key(j, "dim", s.dim, sec);
  read_key(j, "modality_gap", s.modality_gap, sec);
  read_key(j, "noise_sigma", s.noise_sigma, sec);
  read_key(j, "modality_mixing", s.modality_mixing, sec);
  read_key(j, "seed", s.seed, sec);
  read_key(j, "semantic_rank", s.semantic_rank, sec);
  read_key(j, "normalize", s.normalize, sec);
  return s;
}

std::string read_path_key(const json& j, const char* key, const std::string& section) {
  std::string s;
  read_key(j, key, s, section);
  if (s.empty()) throw ConfigError(section + "." + key + " is required");
  return s;
}

}  // namespace

// ------------------------------------------------------------------ config

void ExperimentConfig::validate() const {
  const int sources = int(corpus.synthetic.has_value()) + int(corpus.dir.has_value()) +
                      int(corpus.files.has_value());
  if (sources != 1) {
    throw ConfigError("corpus: exactly one of 'synthetic', 'dir', 'files' must be given (preset '" +
                      preset + "' has no built-in corpus)");
  }
  if (x_shots.empty()) throw ConfigError("x_shot list is empty");
  if (seeds.empty()) throw ConfigError("seeds list is empty");
  if (gen_num == 0) throw ConfigError("gen_num must be positive");
  if (workers == 0) throw ConfigError("workers must be positive");
  if (!(split.query_fraction > 0 && split.query_fraction < 1)) {
    throw ConfigError("split.query_fraction must lie in (0, 1)");
  }
  generation.validate();
  projection.validate();
}

std::vector<std::string> preset_names() {
  return {"synthetic", "wikipedia", "pascal", "nuswide", "nuswide10k"};
}

ExperimentConfig preset_config(std::string_view name) {
  ExperimentConfig cfg;
  cfg.preset = std::string(name);
  if (name == "synthetic") {
    cfg.corpus.synthetic = data::SynthSpec{};
    cfg.generation = desk_generation();
    cfg.projection = desk_projection();
    cfg.gen_num = 30;
    return cfg;
  }
  // Dataset presets: full-size networks; batch / learning rate / pseudo count per dataset.
  struct Row {
    const char* name;
    std::size_t gen_batch;
    Real gen_lr;
    std::size_t gen_num;
    std::size_t proj_batch;
    Real proj_lr;
  };
  static constexpr Row kRows[] = {
      {"wikipedia", 256, Real(1e-3), 70, 256, Real(1e-3)},
      {"pascal", 64, Real(1e-3), 30, 64, Real(4e-4)},
      {"nuswide", 512, Real(2e-3), 500, 512, Real(4e-4)},
      {"nuswide10k", 2048, Real(1e-3), 300, 2048, Real(5e-3)},
  };
  for (const Row& r : kRows) {
    if (name != r.name) continue;
    cfg.x_shots = {0, 1, 3, 5};
    cfg.generation.batch = r.gen_batch;
    cfg.generation.lr = r.gen_lr;
    cfg.gen_num = r.gen_num;
    cfg.projection.batch = r.proj_batch;
    cfg.projection.lr = r.proj_lr;
    return cfg;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

ExperimentConfig config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"preset", "corpus", "x_shot", "seeds", "split", "generation", "projection",
                       "gen_num", "ablation", "output_dir", "workers", "save_checkpoints",
                       "evaluate_source"},
                      "config");
  std::string preset = "synthetic";
  read_key(j, "preset", preset, "config");
  ExperimentConfig cfg = preset_config(preset);

  if (const auto it = j.find("corpus"); it != j.end()) {
    reject_unknown_keys(*it, {"synthetic", "dir", "files"}, "corpus");
    CorpusSource src;
    if (it->contains("synthetic")) {
      src.synthetic = synth_from_json(it->at("synthetic"),
                                      cfg.corpus.synthetic.value_or(data::SynthSpec{}));
    }
    if (it->contains("dir")) src.dir = read_path_key(*it, "dir", "corpus");
    if (it->contains("files")) {
      const json& f = it->at("files");
      reject_unknown_keys(f, {"image", "text", "labels", "attrs", "attr_classes"}, "corpus.files");
      src.files = data::CorpusPaths{read_path_key(f, "image", "corpus.files"),
                                    read_path_key(f, "text", "corpus.files"),
                                    read_path_key(f, "labels", "corpus.files"),
                                    read_path_key(f, "attrs", "corpus.files"),
                                    read_path_key(f, "attr_classes", "corpus.files")};
    }
    cfg.corpus = src;
  }
  read_key(j, "x_shot", cfg.x_shots, "config");
  read_key(j, "seeds", cfg.seeds, "config");
  if (const auto it = j.find("split"); it != j.end()) {
    reject_unknown_keys(*it, {"query_fraction", "source_holdout_fraction", "few_shot_in_gallery"},
                        "split");
    read_key(*it, "query_fraction", cfg.split.query_fraction, "split");
    read_key(*it, "source_holdout_fraction", cfg.split.source_holdout_fraction, "split");
    read_key(*it, "few_shot_in_gallery", cfg.split.few_shot_in_gallery, "split");
  }
  if (const auto it = j.find("generation"); it != j.end()) {
    cfg.generation = gen_hparams_from_json(*it, cfg.generation);
  }
  if (const auto it = j.find("projection"); it != j.end()) {
    cfg.projection = proj_hparams_from_json(*it, cfg.projection);
  }
  read_key(j, "gen_num", cfg.gen_num, "config");
  if (const auto it = j.find("ablation"); it != j.end()) {
    reject_unknown_keys(*it, {"no_vae", "no_generation", "no_gate", "no_l1", "no_l2", "no_l3"},
                        "ablation");
    read_key(*it, "no_vae", cfg.ablation.no_vae, "ablation");
    read_key(*it, "no_generation", cfg.ablation.no_generation, "ablation");
    read_key(*it, "no_gate", cfg.ablation.no_gate, "ablation");
    read_key(*it, "no_l1", cfg.ablation.no_l1, "ablation");
    read_key(*it, "no_l2", cfg.ablation.no_l2, "ablation");
    read_key(*it, "no_l3", cfg.ablation.no_l3, "ablation");
  }
  std::string out;
  read_key(j, "output_dir", out, "config");
  if (!out.empty()) cfg.output_dir = out;
  read_key(j, "workers", cfg.workers, "config");
  read_key(j, "save_checkpoints", cfg.save_checkpoints, "config");
  read_key(j, "evaluate_source", cfg.evaluate_source, "config");
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json to_json(const ExperimentConfig& cfg) {
  json corpus = json::object();
  if (cfg.corpus.synthetic) corpus["synthetic"] = synth_to_json(*cfg.corpus.synthetic);
  if (cfg.corpus.dir) corpus["dir"] = cfg.corpus.dir->string();
  if (cfg.corpus.files) {
    const auto& f = *cfg.corpus.files;
    corpus["files"] = json{{"image", f.image.string()},   {"text", f.text.string()},
                           {"labels", f.labels.string()}, {"attrs", f.attrs.string()},
                           {"attr_classes", f.attr_classes.string()}};
  }
  return json{{"preset", cfg.preset},
              {"corpus", corpus},
              {"x_shot", cfg.x_shots},
              {"seeds", cfg.seeds},
              {"split",
               {{"query_fraction", cfg.split.query_fraction},
                {"source_holdout_fraction", cfg.split.source_holdout_fraction},
                {"few_shot_in_gallery", cfg.split.few_shot_in_gallery}}},
              {"generation", flexclip::to_json(cfg.generation)},
              {"projection", flexclip::to_json(cfg.projection)},
              {"gen_num", cfg.gen_num},
              {"ablation",
               {{"no_vae", cfg.ablation.no_vae},
                {"no_generation", cfg.ablation.no_generation},
                {"no_gate", cfg.ablation.no_gate},
                {"no_l1", cfg.ablation.no_l1},
                {"no_l2", cfg.ablation.no_l2},
                {"no_l3", cfg.ablation.no_l3}}},
              {"output_dir", cfg.output_dir.string()},
              {"workers", cfg.workers},
              {"save_checkpoints", cfg.save_checkpoints},
              {"evaluate_source", cfg.evaluate_source}};
}

std::string fingerprint(const ExperimentConfig& cfg) {
  const std::string s = to_json(cfg).dump();
  return hex64(fnv1a(s.data(), s.size()));
}

data::Corpus load_experiment_corpus(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.corpus.synthetic) return data::synth_corpus(*cfg.corpus.synthetic);
  if (cfg.corpus.dir) return data::load_corpus(data::CorpusPaths::in_dir(*cfg.corpus.dir));
  return data::load_corpus(*cfg.corpus.files);
}

generation::GenHyperParams cell_generation_hparams(const ExperimentConfig& cfg, std::uint64_t seed) {
  generation::GenHyperParams hp = cfg.generation;
  hp.seed = stream_seed(seed, "generation");
  hp.use_vae = hp.use_vae && !cfg.ablation.no_vae;
  return hp;
}

projection::ProjHyperParams cell_projection_hparams(const ExperimentConfig& cfg, std::uint64_t seed) {
  projection::ProjHyperParams hp = cfg.projection;
  hp.seed = stream_seed(seed, "projection");
  hp.use_gate = hp.use_gate && !cfg.ablation.no_gate;
  if (cfg.ablation.no_l1) hp.alpha = 0;
  if (cfg.ablation.no_l2) hp.beta = 0;
  if (cfg.ablation.no_l3) hp.gamma = 0;
  return hp;
}

data::XShotSplit cell_split(const ExperimentConfig& cfg, const data::Corpus& corpus,
                            std::size_t x_shot, std::uint64_t seed) {
  return data::split_xshot(corpus, x_shot, stream_seed(seed, "split"), cfg.split);
}

fs::path cell_directory(const ExperimentConfig& cfg, std::size_t x_shot, std::uint64_t seed) {
  return cfg.output_dir / ("cell_x" + std::to_string(x_shot) + "_s" + std::to_string(seed));
}

std::string parameter_checksum(const generation::VaeGanModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter* p : model.all_parameters()) {
    const auto v = p->value.values();
    h = fnv1a(v.data(), v.size_bytes(), h);
  }
  return hex64(h);
}

// -------------------------------------------------------------------- cells

CellResult run_cell(const ExperimentConfig& cfg, const data::Corpus& corpus, std::size_t x_shot,
                    std::uint64_t seed, const std::optional<fs::path>& cell_dir) {
  CellResult cell;
  cell.x_shot = x_shot;
  cell.seed = seed;
  try {
    Stopwatch clock;
    const data::XShotSplit split = cell_split(cfg, corpus, x_shot, seed);
    cell.warnings = split.warnings;
    if (cell_dir) fs::create_directories(*cell_dir);
    cell.timings.split_s = clock.lap();

    data::Corpus pseudo;
    std::optional<generation::TrainedGeneration> stage1;
    if (!cfg.ablation.no_generation) {
      stage1 = generation::train_generation(split, corpus, cell_generation_hparams(cfg, seed));
      cell.image_generation_log = stage1->image_log;
      cell.text_generation_log = stage1->text_log;
      cell.timings.generation_s = clock.lap();
      pseudo = generation::synthesize_target_set(stage1->image, stage1->text, split.target_classes,
                                                 corpus.class_attrs, cfg.gen_num,
                                                 stream_seed(seed, "synthesize"));
      cell.pseudo_pairs = pseudo.size();
      cell.stage1_checksum_before =
          parameter_checksum(stage1->image) + parameter_checksum(stage1->text);
      if (cell_dir && cfg.save_checkpoints) {
        for (const auto* m : {&stage1->image, &stage1->text}) {
          const fs::path p = *cell_dir / ("generation_" + m->modality + ".ckpt");
          generation::save_checkpoint(*m, p);
          cell.checkpoints.push_back(p.string());
        }
      }
      cell.timings.synthesis_s = clock.lap();
    }

    const projection::ProjectionModel model = projection::train_projection(
        split, corpus, pseudo, cell_projection_hparams(cfg, seed), &cell.projection_log);
    if (stage1) {
      cell.stage1_checksum_after =
          parameter_checksum(stage1->image) + parameter_checksum(stage1->text);
    }
    if (cell_dir && cfg.save_checkpoints) {
      const fs::path p = *cell_dir / "projection.ckpt";
      projection::save_checkpoint(model, p);
      cell.checkpoints.push_back(p.string());
    }
    cell.timings.projection_s = clock.lap();

    cell.target = retrieval::evaluate(model, split, corpus, retrieval::Domain::target);
    cell.baseline = retrieval::evaluate_raw(split, corpus, retrieval::Domain::target);
    if (cfg.evaluate_source && !split.source_query.empty() && !split.source_gallery.empty()) {
      cell.source = retrieval::evaluate(model, split, corpus, retrieval::Domain::source);
    }
    cell.timings.evaluation_s = clock.lap();
    cell.ok = true;
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.error = e.what();
  }
  return cell;
}

bool RunRecord::all_ok() const {
  return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok; });
}

namespace {

json gen_stats_json(const generation::GenEpochStats& s) {
  return json{{"kl", s.kl},     {"recon", s.recon}, {"vae", s.vae},
              {"gan1", s.gan1}, {"gan2", s.gan2},   {"total", s.total},
              {"critic_gap", s.critic_gap}};
}

json gen_log_json(const generation::GenerationLog& log) {
  json epochs = json::array();
  for (const auto& e : log.epochs) epochs.push_back(gen_stats_json(e));
  return json{{"initial", gen_stats_json(log.initial)},
              {"epochs", epochs},
              {"final", gen_stats_json(log.final)}};
}

}  // namespace

json to_json(const CellResult& c) {
  json j{{"x_shot", c.x_shot}, {"seed", c.seed}, {"ok", c.ok}, {"warnings", c.warnings}};
  if (!c.ok) {
    j["error"] = c.error;
    return j;
  }
  j["target"] = retrieval::to_json(c.target);
  j["baseline_raw"] = retrieval::to_json(c.baseline);
  if (c.source) j["source"] = retrieval::to_json(*c.source);
  json curves;
  if (c.image_generation_log) curves["generation_image"] = gen_log_json(*c.image_generation_log);
  if (c.text_generation_log) curves["generation_text"] = gen_log_json(*c.text_generation_log);
  json proj = json::array();
  for (const auto& e : c.projection_log.epochs) {
    proj.push_back(json{{"ce", e.ce},
                        {"consistency", e.consistency},
                        {"contrastive", e.contrastive},
                        {"total", e.total}});
  }
  curves["projection"] = proj;
  j["loss_curves"] = curves;
  j["pseudo_pairs"] = c.pseudo_pairs;
  j["stage1_checksum_before"] = c.stage1_checksum_before;
  j["stage1_checksum_after"] = c.stage1_checksum_after;
  j["checkpoints"] = c.checkpoints;
  j["timings_s"] = json{{"split", c.timings.split_s},
                        {"generation", c.timings.generation_s},
                        {"synthesis", c.timings.synthesis_s},
                        {"projection", c.timings.projection_s},
                        {"evaluation", c.timings.evaluation_s}};
  return j;
}

json to_json(const RunRecord& r) {
  json cells = json::array();
  for (const auto& c : r.cells) cells.push_back(to_json(c));
  return json{{"artifact_version", r.artifact_version},
              {"config_fingerprint", r.config_fingerprint},
              {"config", r.resolved_config},
              {"all_ok", r.all_ok()},
              {"cells", cells}};
}

json reports_json(const RunRecord& r) {
  json out = json::array();
  for (const auto& c : r.cells) {
    json j{{"x_shot", c.x_shot}, {"seed", c.seed}, {"ok", c.ok}};
    if (c.ok) {
      j["target"] = retrieval::to_json(c.target);
      j["baseline_raw"] = retrieval::to_json(c.baseline);
      if (c.source) j["source"] = retrieval::to_json(*c.source);
    }
    out.push_back(j);
  }
  return out;
}

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& cfg, bool write_files) {
  cfg.validate();
  RunRecord record;
  record.config_fingerprint = fingerprint(cfg);
  record.resolved_config = to_json(cfg);
  const data::Corpus corpus = load_experiment_corpus(cfg);
  if (write_files) fs::create_directories(cfg.output_dir);

  struct Job {
    std::size_t x;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t x : cfg.x_shots)
    for (std::uint64_t s : cfg.seeds) jobs.push_back({x, s});
  record.cells.resize(jobs.size());

  std::mutex io;
  auto work = [&](std::size_t i) {
    const Job& job = jobs[i];
    std::optional<fs::path> dir;
    if (write_files) dir = cell_directory(cfg, job.x, job.seed);
    CellResult cell = run_cell(cfg, corpus, job.x, job.seed, dir);
    if (write_files) {
      json report = to_json(cell);
      report["config"] = record.resolved_config;
      report["config_fingerprint"] = record.config_fingerprint;
      report["artifact_version"] = record.artifact_version;
      std::lock_guard lock(io);
      if (dir) {
        fs::create_directories(*dir);
        write_json(*dir / "report.json", report);
      }
    }
    record.cells[i] = std::move(cell);
  };

  if (cfg.workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(cfg.workers, jobs.size()); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  if (write_files) write_json(cfg.output_dir / "run_record.json", to_json(record));
  return record;
}

// ----------------------------------------------------- single-stage commands

SynthOutput run_synth(const ExperimentConfig& cfg, std::size_t x_shot, std::uint64_t seed,
                      const fs::path& out_dir) {
  const data::Corpus corpus = load_experiment_corpus(cfg);
  const data::XShotSplit split = cell_split(cfg, corpus, x_shot, seed);
  auto stage1 = generation::train_generation(split, corpus, cell_generation_hparams(cfg, seed));
  const data::Corpus pseudo = generation::synthesize_target_set(
      stage1.image, stage1.text, split.target_classes, corpus.class_attrs, cfg.gen_num,
      stream_seed(seed, "synthesize"));
  fs::create_directories(out_dir / "pseudo");
  SynthOutput out;
  out.image_checkpoint = out_dir / "generation_image.ckpt";
  out.text_checkpoint = out_dir / "generation_text.ckpt";
  out.pseudo_dir = out_dir / "pseudo";
  generation::save_checkpoint(stage1.image, out.image_checkpoint);
  generation::save_checkpoint(stage1.text, out.text_checkpoint);
  data::write_corpus(pseudo, data::CorpusPaths::in_dir(out.pseudo_dir));
  out.image_log = std::move(stage1.image_log);
  out.text_log = std::move(stage1.text_log);
  return out;
}

retrieval::EvaluationReport run_train_projection(const ExperimentConfig& cfg, std::size_t x_shot,
                                                 std::uint64_t seed,
                                                 const std::optional<fs::path>& pseudo_dir,
                                                 const fs::path& out_dir) {
  const data::Corpus corpus = load_experiment_corpus(cfg);
  const data::XShotSplit split = cell_split(cfg, corpus, x_shot, seed);
  data::Corpus pseudo;
  if (pseudo_dir) pseudo = data::load_corpus(data::CorpusPaths::in_dir(*pseudo_dir));
  const auto model =
      projection::train_projection(split, corpus, pseudo, cell_projection_hparams(cfg, seed));
  fs::create_directories(out_dir);
  projection::save_checkpoint(model, out_dir / "projection.ckpt");
  const auto report = retrieval::evaluate(model, split, corpus, retrieval::Domain::target);
  json j = retrieval::to_json(report);
  j["x_shot"] = x_shot;
  j["seed"] = seed;
  j["config"] = to_json(cfg);
  write_json(out_dir / "report.json", j);
  return report;
}

retrieval::EvaluationReport run_eval(const fs::path& checkpoint, const ExperimentConfig& cfg,
                                     std::size_t x_shot, std::uint64_t seed,
                                     retrieval::Domain domain) {
  const auto model = projection::load_projection_checkpoint(checkpoint);
  const data::Corpus corpus = load_experiment_corpus(cfg);
  const data::XShotSplit split = cell_split(cfg, corpus, x_shot, seed);
  return retrieval::evaluate(model, split, corpus, domain);
}

}  // namespace flexclip::pipeline
