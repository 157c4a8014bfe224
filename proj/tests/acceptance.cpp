// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "flexclip/generation.hpp"
#include "flexclip/pipeline.hpp"
#include "flexclip/projection.hpp"
#include "flexclip/retrieval.hpp"
#include "flexclip/split.hpp"
#include "flexclip/synth.hpp"
#include "support.hpp"

using namespace flexclip;
using testing::check_gradients;
using testing::random_matrix;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int n, const char* title, const Outcome& o, double seconds) {
  std::printf("criterion %d  %-34s %s  (%.1f s) %s\n", n, title, o.pass ? "PASS" : "FAIL", seconds,
              o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

template <class F>
void run(int n, const char* title, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(n, title, o, s);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome gradients() {
  constexpr std::size_t n = 4, d = 16;
  constexpr Real tol = Real(1e-4);
  Real worst = 0, worst_raw = 0;
  std::string worst_name = "none";
  std::size_t checked = 0;
  auto take = [&](const char* loss, const testing::GradCheck& r) {
    checked += r.checked;
    worst_raw = std::max(worst_raw, r.max_raw_rel_error);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = std::string(loss) + " " + r.worst_parameter;
    }
  };

  generation::GenHyperParams hp;
  hp.latent_dim = 6;
  hp.encoder_widths = {20, 14, 10};
  hp.generator_hidden = 14;
  hp.critic_hidden = 20;
  hp.batch = n;
  hp.seed = 21;
  Rng feat(22);
  const generation::GenerationBatch batch{uniform(n, d, Real(0.05), Real(0.95), feat),
                                          random_matrix(n, d, 23)};
  generation::VaeGanModel model("image", d, d, hp);
  using generation::GenerationLosses;
  auto build = [&](Var (*pick)(const GenerationLosses&)) {
    return [&, pick](Tape& t) {
      Rng noise = make_stream(5, "noise");
      Rng eps = make_stream(5, "eps");
      return pick(generation::generation_losses(t, model, batch, noise, eps));
    };
  };
  Var (*vae)(const GenerationLosses&) = [](const GenerationLosses& l) { return l.vae; };
  Var (*gan1)(const GenerationLosses&) = [](const GenerationLosses& l) { return l.gan1; };
  Var (*gan2)(const GenerationLosses&) = [](const GenerationLosses& l) { return l.gan2; };

  take("vae", check_gradients(model.encoder_generator_parameters(), build(vae)));
  take("gan1", check_gradients(model.critic_parameters(), build(gan1)));
  take("gan2", check_gradients(model.critic_parameters(), build(gan2)));
  // The penalty sits on constant interpolates: no encoder/generator path.
  model.hp.lambda_gp = 0;
  take("gan1", check_gradients(model.encoder_generator_parameters(), build(gan1)));
  take("gan2", check_gradients(model.encoder_generator_parameters(), build(gan2)));

  projection::ProjHyperParams php;
  php.projector_hidden = 20;
  php.gate_hidden = 12;
  php.batch = n;
  projection::ProjectionModel pm(d, {0, 1, 2}, php);
  const Matrix xv = random_matrix(n, d, 31), xt = random_matrix(n, d, 32);
  const std::vector<std::size_t> y{0, 2, 1, 2};
  auto fused = [&](Tape& t) {
    return std::pair{pm.image.fuse(t.constant(xv)).u, pm.text.fuse(t.constant(xt)).u};
  };
  take("ce", check_gradients(pm.parameters(), [&](Tape& t) {
         auto [uv, ut] = fused(t);
         return projection::loss_ce(pm.head(uv), pm.head(ut), y);
       }));
  take("consistency", check_gradients(pm.parameters(), [&](Tape& t) {
         auto [uv, ut] = fused(t);
         return projection::loss_consistency(uv, ut);
       }));
  take("contrastive", check_gradients(pm.parameters(), [&](Tape& t) {
         auto [uv, ut] = fused(t);
         return projection::loss_contrastive(uv, ut, php.tau);
       }));
  return {worst < tol, std::to_string(checked) + " parameter elements, max rel err " +
                           fmt("%.2e", double(worst)) + " (worst: " + worst_name +
                           "), before roundoff discount " + fmt("%.2e", double(worst_raw))};
}

// ---------------------------------------------------------------- 2

double contrastive_enumeration(const Matrix& uv, const Matrix& ut, double tau) {
  const std::size_t n = uv.rows();
  std::vector<std::vector<double>> z;
  for (const Matrix* m : {&uv, &ut})
    for (std::size_t i = 0; i < n; ++i) z.emplace_back(m->row(i).begin(), m->row(i).end());
  auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      ab += a[k] * b[k];
      aa += a[k] * a[k];
      bb += b[k] * b[k];
    }
    return ab / std::sqrt(aa * bb);
  };
  double total = 0;
  for (std::size_t i = 0; i < 2 * n; ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < 2 * n; ++j)
      if (j != i) denom += std::exp(cosine(z[i], z[j]) / tau);
    total += cosine(z[i], z[(i + n) % (2 * n)]) / tau - std::log(denom);
  }
  return -total / double(n);
}

Outcome closed_forms() {
  Tape t;
  const Real kl0 = generation::kl_loss(t.constant(Matrix(4, 6)), t.constant(Matrix(4, 6))).scalar();
  const Real kl1 = generation::kl_loss(t.constant(Matrix::from_rows({{1}})),
                                       t.constant(Matrix::from_rows({{0}})))
                       .scalar();

  generation::LinearCritic critic(4, 2);
  critic.layer.weight.value = Matrix::from_rows({{1}, {2}, {2}, {0}, {3}, {-1}});
  Rng rng(7);
  const Real gp = generation::gradient_penalty(random_matrix(6, 4, 8), random_matrix(6, 4, 9),
                                               t.constant(random_matrix(6, 2, 10)), critic, rng)
                      .scalar();

  const Matrix uv = Matrix::from_rows({{1, 0, 0, 0}, {0, 1, 0, 0}});
  const Real con = projection::loss_contrastive(t.constant(uv), t.constant(uv), 1).scalar();
  const double oracle = contrastive_enumeration(uv, uv, 1.0);

  const bool pass = kl0 == 0 && kl1 == Real(0.5) && std::abs(gp - 4.0) < 1e-10 &&
                    std::abs(con - oracle) < 1e-12;
  return {pass, "KL " + fmt("%.17g", kl0) + "/" + fmt("%.17g", kl1) + ", GP " + fmt("%.17g", gp) +
                    ", contrastive diff " + fmt("%.1e", std::abs(con - oracle))};
}

// ---------------------------------------------------------------- 3

// Rank of every item counted directly from the similarities (ties by index),
// then precision at each relevant rank.
double brute_force_ap(const std::vector<double>& sim, const std::vector<int>& rel) {
  const std::size_t m = sim.size();
  double total = 0;
  int relevant = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!rel[i]) continue;
    ++relevant;
    int rank = 1, relevant_at_or_above = 1;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      if (sim[j] > sim[i] || (sim[j] == sim[i] && j < i)) {
        ++rank;
        relevant_at_or_above += rel[j];
      }
    }
    total += double(relevant_at_or_above) / rank;
  }
  return total / relevant;
}

Outcome map_oracle() {
  const std::vector<std::uint8_t> h1{0, 1, 0, 1}, h2{0, 0, 1};
  const bool hand = retrieval::average_precision(h1) == Real(0.5) &&
                    retrieval::average_precision(h2) == Real(1) / Real(3);
  Rng rng(99);
  std::uniform_int_distribution<int> label(0, 2), coarse(0, 3);
  double worst = 0;
  int galleries = 0;
  while (galleries < 20) {
    std::vector<Real> sim(8);
    std::vector<int> rel(8);
    // Coarse similarities so that ties occur.
    for (auto& s : sim) s = Real(coarse(rng)) / 4;
    for (auto& r : rel) r = label(rng) == 0;
    if (std::count(rel.begin(), rel.end(), 1) == 0) continue;
    ++galleries;
    const auto ranked = retrieval::rank_gallery(
        0, sim, [&](std::size_t, std::size_t g) { return rel[g] != 0; });
    const double got = *retrieval::average_precision(ranked);
    const std::vector<double> simd(sim.begin(), sim.end());
    worst = std::max(worst, std::abs(got - brute_force_ap(simd, rel)));
  }
  return {hand && worst < 1e-12,
          std::string("hand cases ") + (hand ? "exact" : "WRONG") + ", max diff " + fmt("%.1e", worst)};
}

// ---------------------------------------------------------------- 4

bool bitwise(const Matrix& a, const Matrix& b) {
  return a.same_shape(b) &&
         std::equal(a.values().begin(), a.values().end(), b.values().begin(), b.values().end(),
                    [](Real x, Real y) { return std::memcmp(&x, &y, sizeof(Real)) == 0; });
}

Outcome gate() {
  bool identities = true;
  std::size_t outside = 0, checked = 0;
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix x = random_matrix(16, 12, 1000 + trial);
    Matrix f = random_matrix(16, 12, 2000 + trial);
    for (std::size_t i = 0; i < f.size(); i += 4) f.values()[i] = x.values()[i];
    for (std::size_t i = 1; i < f.size(); i += 7) f.values()[i] = std::nextafter(x.values()[i], Real(9));
    Tape t;
    const Var xv = t.constant(x), fv = t.constant(f);
    identities = identities && bitwise(projection::gated_fusion(xv, fv, t.constant(Matrix(16, 12, 1))).value(), f) &&
                 bitwise(projection::gated_fusion(xv, fv, t.constant(Matrix(16, 12, 0))).value(), x);
    const Matrix u = projection::gated_fusion(xv, fv, t.constant(uniform(16, 12, 0, 1, rng))).value();
    for (std::size_t i = 0; i < u.size(); ++i, ++checked) {
      const Real lo = std::min(x.values()[i], f.values()[i]), hi = std::max(x.values()[i], f.values()[i]);
      outside += u.values()[i] < lo || u.values()[i] > hi;
    }
  }
  // The same through a branch with its gate forced.
  projection::ProjHyperParams hp;
  hp.projector_hidden = 16;
  hp.gate_hidden = 16;
  Rng init(5);
  const projection::ModalityBranch branch("image", 12, hp, init);
  const Matrix x = random_matrix(9, 12, 6);
  Tape t;
  const auto open = branch.fuse(t.constant(x), projection::GateMode::open);
  const auto closed = branch.fuse(t.constant(x), projection::GateMode::closed);
  identities = identities && bitwise(open.u.value(), open.f.value()) && bitwise(closed.u.value(), x);
  return {identities && outside == 0,
          std::string("identities ") + (identities ? "bitwise" : "BROKEN") + ", " +
              std::to_string(outside) + " of " + std::to_string(checked) + " outside the interval"};
}

// ---------------------------------------------------------------- 5

Outcome split_protocol() {
  data::SynthSpec spec;
  spec.n_classes = 10;
  spec.per_class = 12;
  spec.dim = 8;
  spec.semantic_rank = 4;
  const data::Corpus corpus = data::synth_corpus(spec);
  std::size_t splits = 0, bad = 0;
  for (std::size_t x : {0, 1, 3, 5}) {
    for (std::uint64_t seed = 0; seed < 100; ++seed, ++splits) {
      const data::XShotSplit s = data::split_xshot(corpus, x, seed);
      const std::set<data::ClassId> src(s.source_classes.begin(), s.source_classes.end());
      const std::set<data::ClassId> tgt(s.target_classes.begin(), s.target_classes.end());
      std::vector<data::ClassId> both;
      std::set_intersection(src.begin(), src.end(), tgt.begin(), tgt.end(), std::back_inserter(both));
      bool ok = src.size() == 5 && tgt.size() == 5 && both.empty();
      std::map<data::ClassId, std::size_t> per_class;
      for (std::size_t i : s.target_train) ++per_class[corpus.labels[i]];
      for (data::ClassId c : tgt) ok = ok && per_class[c] == x;
      ok = ok && s.target_train.size() == 5 * x && (x != 0 || s.target_train.empty());
      for (std::size_t i : s.source_train) ok = ok && src.count(corpus.labels[i]) == 1;
      bad += !ok;
    }
  }
  return {bad == 0, std::to_string(splits - bad) + " of " + std::to_string(splits) +
                        " splits (x in 0,1,3,5 x 100 seeds) conform"};
}

// ---------------------------------------------------------------- 6, 7, 8

struct Grid {
  pipeline::ExperimentConfig cfg;
  pipeline::RunRecord full, no_vae, no_gen;
  double seconds = 0;
};

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

Grid run_grid() {
  Grid g;
  g.cfg = pipeline::preset_config("synthetic");
  g.cfg.x_shots = {0, 1, 3, 5};
  g.cfg.seeds = {1, 2, 3};
  g.cfg.workers = workers();
  const auto t0 = std::chrono::steady_clock::now();
  g.full = pipeline::run_experiment(g.cfg, false);
  pipeline::ExperimentConfig a = g.cfg;
  a.x_shots = {0};
  a.ablation.no_vae = true;
  g.no_vae = pipeline::run_experiment(a, false);
  a.ablation = {};
  a.ablation.no_generation = true;
  g.no_gen = pipeline::run_experiment(a, false);
  g.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return g;
}

const pipeline::CellResult& cell(const pipeline::RunRecord& r, std::size_t x, std::uint64_t seed) {
  for (const auto& c : r.cells)
    if (c.x_shot == x && c.seed == seed) return c;
  throw std::runtime_error("missing cell");
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

Outcome end_to_end(const Grid& g) {
  for (const auto* r : {&g.full, &g.no_vae, &g.no_gen}) {
    for (const auto& c : r->cells)
      if (!c.ok) return {false, "cell x=" + std::to_string(c.x_shot) + " failed: " + c.error};
  }
  int a = 0, b = 0, d = 0;
  std::string detail = "x0 full/nogen/raw/novae:";
  for (std::uint64_t s : g.cfg.seeds) {
    const double full = cell(g.full, 0, s).target.avg;
    const double nogen = cell(g.no_gen, 0, s).target.avg;
    const double raw = cell(g.full, 0, s).baseline.avg;
    const double novae = cell(g.no_vae, 0, s).target.avg;
    a += full > nogen;
    b += full > raw;
    d += novae <= full;
    detail += " " + fmt("%.4f", full) + "/" + fmt("%.4f", nogen) + "/" + fmt("%.4f", raw) + "/" +
              fmt("%.4f", novae);
  }
  std::vector<double> medians;
  for (std::size_t x : g.cfg.x_shots) {
    std::vector<double> v;
    for (std::uint64_t s : g.cfg.seeds) v.push_back(cell(g.full, x, s).target.avg);
    medians.push_back(median3(v));
  }
  const bool c = std::is_sorted(medians.begin(), medians.end());
  detail += "; medians x0/1/3/5:";
  for (double m : medians) detail += " " + fmt("%.4f", m);
  detail += "; (a) " + std::to_string(a) + "/3 (b) " + std::to_string(b) + "/3 (c) " +
            (c ? "yes" : "no") + " (d) " + std::to_string(d) + "/3; grid " + fmt("%.0f s", g.seconds);
  return {a >= 2 && b >= 2 && c && d >= 2 && g.seconds <= 300, detail};
}

bool same_bytes(const fs::path& p, const fs::path& q) {
  std::ifstream a(p, std::ios::binary), b(q, std::ios::binary);
  return std::equal(std::istreambuf_iterator<char>(a), {}, std::istreambuf_iterator<char>(b), {});
}

Outcome persistence(const Grid& g) {
  const fs::path dir = fs::temp_directory_path() / "flexclip_acceptance";
  fs::remove_all(dir);
  const data::Corpus corpus = pipeline::load_experiment_corpus(g.cfg);
  const auto& in_run = cell(g.full, 0, 1);
  const auto again = pipeline::run_cell(g.cfg, corpus, 0, 1, dir);
  if (!again.ok) return {false, "rerun failed: " + again.error};
  const bool reports = again.target == in_run.target && again.baseline == in_run.baseline &&
                       again.source == in_run.source &&
                       retrieval::to_json(again.target).dump() == retrieval::to_json(in_run.target).dump();

  bool stage1 = true;
  for (const char* m : {"image", "text"}) {
    const fs::path p = dir / (std::string("generation_") + m + ".ckpt");
    const auto loaded = generation::load_vaegan_checkpoint(p);
    generation::save_checkpoint(loaded, dir / "resaved.ckpt");
    stage1 = stage1 && same_bytes(p, dir / "resaved.ckpt");
  }
  const auto model = projection::load_projection_checkpoint(dir / "projection.ckpt");
  projection::save_checkpoint(model, dir / "resaved.ckpt");
  const bool stage2 = same_bytes(dir / "projection.ckpt", dir / "resaved.ckpt");
  const auto re = pipeline::run_eval(dir / "projection.ckpt", g.cfg, 0, 1, retrieval::Domain::target);
  const double diff = std::abs(re.avg - in_run.target.avg);
  const bool pass = reports && stage1 && stage2 && diff < 1e-12 && re == in_run.target;
  fs::remove_all(dir);
  return {pass, std::string("rerun ") + (reports ? "bit-identical" : "DIFFERS") +
                    ", checkpoints " + (stage1 && stage2 ? "round-trip exactly" : "DIFFER") +
                    ", re-eval diff " + fmt("%.1e", diff)};
}

Outcome training_sanity(const Grid& g) {
  double worst_recon = 0, worst_proj = 0;
  for (const auto& c : g.full.cells) {
    for (const auto* log : {&*c.image_generation_log, &*c.text_generation_log})
      worst_recon = std::max(worst_recon, double(log->final.recon / log->initial.recon));
    const auto& e = c.projection_log.epochs;
    worst_proj = std::max(worst_proj, double(e.back().total / e.front().total));
  }
  return {worst_recon <= 0.5 && worst_proj < 1,
          "over " + std::to_string(g.full.cells.size()) + " cells: worst stage-1 recon final/initial " +
              fmt("%.3f", worst_recon) + ", worst stage-2 total final/initial " + fmt("%.3f", worst_proj)};
}

}  // namespace

int main() {
  std::printf("flexclip acceptance (%s, %zu worker(s))\n", pipeline::kArtifactVersion, workers());
  run(1, "gradient correctness", gradients);
  run(2, "closed-form oracles", closed_forms);
  run(3, "mAP oracle", map_oracle);
  run(4, "gate identities", gate);
  run(5, "split protocol", split_protocol);

  std::optional<Grid> grid;
  const auto t0 = std::chrono::steady_clock::now();
  std::string grid_error;
  try {
    grid = run_grid();
  } catch (const std::exception& e) {
    grid_error = e.what();
  }
  const double grid_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (grid) {
    run(6, "synthetic end-to-end", [&] { return end_to_end(*grid); });
    run(7, "determinism and persistence", [&] { return persistence(*grid); });
    run(8, "training sanity", [&] { return training_sanity(*grid); });
  } else {
    for (int n : {6, 7, 8}) report(n, "synthetic grid", {false, "grid failed: " + grid_error}, grid_s);
  }
  std::printf("%s: %d of 8 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
