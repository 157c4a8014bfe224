#include "flexclip/projection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "flexclip/binary_io.hpp"
#include "flexclip/checkpoint.hpp"
#include "flexclip/hparams_json.hpp"

namespace flexclip::projection {

using namespace flexclip::ops;

void ProjHyperParams::validate() const {
  if (!(tau > 0)) throw ConfigError("tau must be positive");
  if (!(alpha >= 0 && beta >= 0 && gamma >= 0)) throw ConfigError("loss weights must be >= 0");
  if (!(lr > 0)) throw ConfigError("projection lr must be positive");
  if (batch < 2) throw ConfigError("projection batch must be >= 2 (contrastive loss)");
  if (projector_hidden == 0 || gate_hidden == 0) throw ConfigError("hidden widths must be positive");
}

Var gated_fusion(Var x, Var f, Var g) {
  Tape& t = x.tape();
  if (!x.value().same_shape(f.value()) || !x.value().same_shape(g.value())) {
    throw DimensionError("gated_fusion: x " + shape_string(x.value()) + ", f " +
                         shape_string(f.value()) + ", g " + shape_string(g.value()));
  }
  // std::lerp is exact at g = 0 and g = 1 and never leaves [min(x,f), max(x,f)].
  Matrix out(x.rows(), x.cols());
  const auto xs = x.value().values(), fs = f.value().values(), gs = g.value().values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::lerp(xs[i], fs[i], gs[i]);
  const std::size_t ix = x.id(), iff = f.id(), ig = g.id();
  const bool needs = t.needs_grad(x) || t.needs_grad(f) || t.needs_grad(g);
  return t.record(std::move(out), needs, [ix, iff, ig](Tape& tp, const Matrix& up) {
    const auto us = up.values();
    const auto xv = tp.value(ix).values(), fv = tp.value(iff).values(), gv = tp.value(ig).values();
    const std::size_t n = us.size();
    if (tp.needs_grad(ix)) {
      Matrix d(tp.value(ix).rows(), tp.value(ix).cols());
      for (std::size_t i = 0; i < n; ++i) d.values()[i] = us[i] * (Real(1) - gv[i]);
      tp.accumulate(ix, d);
    }
    if (tp.needs_grad(iff)) {
      Matrix d(tp.value(iff).rows(), tp.value(iff).cols());
      for (std::size_t i = 0; i < n; ++i) d.values()[i] = us[i] * gv[i];
      tp.accumulate(iff, d);
    }
    if (tp.needs_grad(ig)) {
      Matrix d(tp.value(ig).rows(), tp.value(ig).cols());
      for (std::size_t i = 0; i < n; ++i) d.values()[i] = us[i] * (fv[i] - xv[i]);
      tp.accumulate(ig, d);
    }
  });
}

ModalityBranch::ModalityBranch(const std::string& name, std::size_t dim, const ProjHyperParams& hp,
                               Rng& init)
    : proj_hidden(name + ".proj.0", dim, hp.projector_hidden, init),
      proj_out(name + ".proj.1", hp.projector_hidden, dim, init),
      gate_hidden(name + ".gate.0", 2 * dim, hp.gate_hidden, init),
      gate_out(name + ".gate.1", hp.gate_hidden, dim, init) {}

template <class Self>
FuseOutput ModalityBranch::fuse_impl(Self& self, Var x, GateMode mode) {
  Tape& t = x.tape();
  const Var f = self.proj_out(relu(self.proj_hidden(x)));
  Var g;
  switch (mode) {
    case GateMode::learned:
      g = sigmoid(self.gate_out(relu(self.gate_hidden(concat_cols(x, f)))));
      break;
    case GateMode::open:
      g = t.constant(Matrix(x.rows(), x.cols(), Real(1)));
      break;
    case GateMode::closed:
      g = t.constant(Matrix(x.rows(), x.cols(), Real(0)));
      break;
  }
  return {f, g, gated_fusion(x, f, g)};
}

FuseOutput ModalityBranch::fuse(Var x, GateMode mode) { return fuse_impl(*this, x, mode); }
FuseOutput ModalityBranch::fuse(Var x, GateMode mode) const { return fuse_impl(*this, x, mode); }

std::vector<Parameter*> ModalityBranch::parameters() {
  std::vector<Parameter*> p;
  for (Dense* d : {&proj_hidden, &proj_out, &gate_hidden, &gate_out}) d->collect(p);
  return p;
}

std::vector<const Parameter*> ModalityBranch::parameters() const {
  std::vector<const Parameter*> p;
  for (const Dense* d : {&proj_hidden, &proj_out, &gate_hidden, &gate_out}) d->collect(p);
  return p;
}

// ------------------------------------------------------------------ losses

Var loss_ce(Var logits_v, Var logits_t, std::span<const std::size_t> labels) {
  if (!logits_v.value().same_shape(logits_t.value())) {
    throw DimensionError("loss_ce: " + shape_string(logits_v.value()) + " vs " +
                         shape_string(logits_t.value()));
  }
  for (std::size_t y : labels) {
    if (y >= logits_v.cols()) {
      throw ContractError("label " + std::to_string(y) + " outside [0, " +
                          std::to_string(logits_v.cols()) + ")");
    }
  }
  const Var lv = pick(log_softmax_rows(logits_v), labels);
  const Var lt = pick(log_softmax_rows(logits_t), labels);
  return scale(sum(add(lv, lt)), Real(-1) / static_cast<Real>(labels.size()));
}

Var loss_ce_from_probs(Var probs_v, Var probs_t, std::span<const std::size_t> labels) {
  for (std::size_t y : labels) {
    if (y >= probs_v.cols()) {
      throw ContractError("label " + std::to_string(y) + " outside [0, " +
                          std::to_string(probs_v.cols()) + ")");
    }
  }
  const Var lv = ops::log(pick(probs_v, labels));
  const Var lt = ops::log(pick(probs_t, labels));
  return scale(sum(add(lv, lt)), Real(-1) / static_cast<Real>(labels.size()));
}

Var loss_consistency(Var u_v, Var u_t) { return mean(row_norm(sub(u_v, u_t))); }

Var loss_contrastive(Var u_v, Var u_t, Real tau, bool exclude_self) {
  if (!(tau > 0)) throw ConfigError("tau must be positive");
  if (!u_v.value().same_shape(u_t.value())) {
    throw DimensionError("loss_contrastive: " + shape_string(u_v.value()) + " vs " +
                         shape_string(u_t.value()));
  }
  const std::size_t n = u_v.rows();
  if (n < 2) throw ContractError("contrastive loss needs a batch of at least 2 pairs");
  Tape& t = u_v.tape();
  const Var z = concat_rows(u_v, u_t);
  const Var zn = div_col(z, row_norm(z));
  const Real inv_tau = Real(1) / tau;
  const Var sim = scale(matmul_nt(zn, zn), inv_tau);

  std::vector<std::size_t> partner(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    partner[i] = i + n;
    partner[i + n] = i;
  }
  const Var positive = pick(sim, partner);

  Matrix mask(2 * n, 2 * n, Real(1));
  if (exclude_self)
    for (std::size_t i = 0; i < 2 * n; ++i) mask(i, i) = 0;
  // Shift by the maximum possible similarity 1/tau before exponentiating.
  const Var weights = mul(ops::exp(add_scalar(sim, -inv_tau)), t.constant(std::move(mask)));
  const Var log_denominator = add_scalar(ops::log(row_sum(weights)), inv_tau);
  return scale(sum(sub(positive, log_denominator)), Real(-1) / static_cast<Real>(n));
}

Real total_loss(const LossComponents& c, const ProjHyperParams& hp) {
  return hp.alpha * c.ce + hp.beta * c.consistency + hp.gamma * c.contrastive;
}

Var total_loss(Var ce, Var consistency, Var contrastive, const ProjHyperParams& hp) {
  return add(add(scale(ce, hp.alpha), scale(consistency, hp.beta)), scale(contrastive, hp.gamma));
}

// ------------------------------------------------------------------- model

ProjectionModel::ProjectionModel(std::size_t dim, std::vector<data::ClassId> ids,
                                 const ProjHyperParams& h)
    : hp(h), class_ids(std::move(ids)) {
  hp.validate();
  if (class_ids.empty()) throw ConfigError("projection model needs at least one class");
  Rng init = make_stream(hp.seed, "projection.init");
  image = ModalityBranch("image", dim, hp, init);
  text = ModalityBranch("text", dim, hp, init);
  head = Dense("head", dim, class_ids.size(), init);
}

Matrix ProjectionModel::embed_image(const Matrix& x) const {
  if (x.cols() != dim()) throw DimensionError("embed_image: " + shape_string(x) + " vs model dim " + std::to_string(dim()));
  Tape t;
  return image.fuse(t.constant(x), gate_mode()).u.value();
}

Matrix ProjectionModel::embed_text(const Matrix& x) const {
  if (x.cols() != dim()) throw DimensionError("embed_text: " + shape_string(x) + " vs model dim " + std::to_string(dim()));
  Tape t;
  return text.fuse(t.constant(x), gate_mode()).u.value();
}

std::vector<std::size_t> ProjectionModel::class_indices(std::span<const data::ClassId> labels) const {
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (data::ClassId y : labels) {
    const auto it = std::lower_bound(class_ids.begin(), class_ids.end(), y);
    if (it == class_ids.end() || *it != y) {
      throw ContractError("class " + std::to_string(y) + " is not known to the projection head");
    }
    out.push_back(static_cast<std::size_t>(it - class_ids.begin()));
  }
  return out;
}

std::vector<Parameter*> ProjectionModel::parameters() {
  std::vector<Parameter*> p = image.parameters();
  for (Parameter* q : text.parameters()) p.push_back(q);
  head.collect(p);
  return p;
}

std::vector<const Parameter*> ProjectionModel::parameters() const {
  std::vector<const Parameter*> p = image.parameters();
  for (const Parameter* q : text.parameters()) p.push_back(q);
  head.collect(p);
  return p;
}

// ---------------------------------------------------------------- training

namespace {

// [start, stop) ranges of size `batch`; a trailing singleton joins the
// previous batch so every batch has at least two pairs.
std::vector<std::pair<std::size_t, std::size_t>> make_batches(std::size_t n, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch) out.emplace_back(s, std::min(n, s + batch));
  if (out.size() > 1 && out.back().second - out.back().first < 2) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

struct StepLosses {
  Var ce;
  Var consistency;
  Var contrastive;
  Var total;
};

template <class Model>
StepLosses step_losses(Tape& t, Model& model, const Matrix& image, const Matrix& text,
                       std::span<const std::size_t> cls) {
  const GateMode mode = model.gate_mode();
  const FuseOutput fv = model.image.fuse(t.constant(image), mode);
  const FuseOutput ft = model.text.fuse(t.constant(text), mode);
  StepLosses L;
  L.ce = loss_ce(model.head(fv.u), model.head(ft.u), cls);
  L.consistency = loss_consistency(fv.u, ft.u);
  L.contrastive = loss_contrastive(fv.u, ft.u, model.hp.tau, model.hp.contrastive_exclude_self);
  L.total = total_loss(L.ce, L.consistency, L.contrastive, model.hp);
  return L;
}

}  // namespace

ProjEpochStats evaluate_losses(const ProjectionModel& model, const Matrix& image,
                               const Matrix& text, std::span<const std::size_t> class_idx) {
  ProjEpochStats acc;
  const auto batches = make_batches(image.rows(), model.hp.batch);
  for (const auto& [s, e] : batches) {
    std::vector<std::size_t> idx(e - s);
    std::iota(idx.begin(), idx.end(), s);
    Tape t;
    const StepLosses L = step_losses(t, model, image.gather_rows(idx), text.gather_rows(idx),
                                     class_idx.subspan(s, e - s));
    acc.ce += L.ce.scalar();
    acc.consistency += L.consistency.scalar();
    acc.contrastive += L.contrastive.scalar();
    acc.total += L.total.scalar();
  }
  const Real n = static_cast<Real>(batches.size());
  acc.ce /= n;
  acc.consistency /= n;
  acc.contrastive /= n;
  acc.total /= n;
  return acc;
}

ProjectionModel train_projection(const data::XShotSplit& split, const data::Corpus& corpus,
                                 const data::Corpus& pseudo, const ProjHyperParams& hp,
                                 ProjectionLog* log) {
  hp.validate();
  if (pseudo.size() > 0 && pseudo.dim() != corpus.dim()) {
    throw DimensionError("pseudo corpus dim " + std::to_string(pseudo.dim()) +
                         " does not match corpus dim " + std::to_string(corpus.dim()));
  }
  const std::vector<std::size_t> real_idx = split.training_indices();
  const data::Corpus train = data::concat(corpus.subset(real_idx), pseudo);
  if (train.size() < 2) throw ContractError("stage-2 training set needs at least two pairs");

  std::set<data::ClassId> classes(split.source_classes.begin(), split.source_classes.end());
  classes.insert(split.target_classes.begin(), split.target_classes.end());
  ProjectionModel model(corpus.dim(), {classes.begin(), classes.end()}, hp);
  const std::vector<std::size_t> cls = model.class_indices(train.labels);

  ProjectionLog local;
  ProjectionLog& out_log = log != nullptr ? *log : local;
  out_log.epochs.clear();
  out_log.epochs.push_back(evaluate_losses(model, train.image, train.text, cls));

  Rng shuffle = make_stream(hp.seed, "projection.shuffle");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto params = model.parameters();
  const AdamConfig adam{hp.lr};

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    for (const auto& [s, e] : make_batches(order.size(), hp.batch)) {
      const std::span<const std::size_t> idx(order.data() + s, e - s);
      std::vector<std::size_t> batch_cls;
      batch_cls.reserve(idx.size());
      for (std::size_t i : idx) batch_cls.push_back(cls[i]);
      Tape t;
      const StepLosses L =
          step_losses(t, model, train.image.gather_rows(idx), train.text.gather_rows(idx), batch_cls);
      t.backward(L.total);
      adam_step(params, adam);
    }
    out_log.epochs.push_back(evaluate_losses(model, train.image, train.text, cls));
  }
  return model;
}

// -------------------------------------------------------------- checkpoint

void save_checkpoint(const ProjectionModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot write " + path.string());
  write_checkpoint_header(os, CheckpointKind::projection);
  binio::write_string(os, to_json(model.hp).dump());
  binio::write_u64(os, model.dim());
  binio::write_u32(os, static_cast<std::uint32_t>(model.class_ids.size()));
  for (data::ClassId c : model.class_ids) binio::write_u32(os, static_cast<std::uint32_t>(c));
  const auto params = model.parameters();
  binio::write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) binio::write_parameter(os, *p);
  if (!os) throw CheckpointError("write failed for " + path.string());
}

ProjectionModel load_projection_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  read_checkpoint_header(is, CheckpointKind::projection);
  try {
    const ProjHyperParams hp = proj_hparams_from_json(nlohmann::json::parse(binio::read_string(is)));
    const std::size_t dim = binio::read_u64(is);
    const std::uint32_t n_classes = binio::read_u32(is);
    std::vector<data::ClassId> ids;
    for (std::uint32_t i = 0; i < n_classes; ++i) {
      ids.push_back(static_cast<data::ClassId>(binio::read_u32(is)));
    }
    ProjectionModel model(dim, std::move(ids), hp);
    auto slots = model.parameters();
    if (binio::read_u32(is) != slots.size()) {
      throw CheckpointError("unexpected parameter count in checkpoint");
    }
    for (Parameter* slot : slots) {
      Parameter p = binio::read_parameter(is);
      if (p.name != slot->name || !p.value.same_shape(slot->value)) {
        throw CheckpointError("checkpoint parameter " + p.name + " " + shape_string(p.value) +
                              " does not match " + slot->name + " " + shape_string(slot->value));
      }
      *slot = std::move(p);
    }
    return model;
  } catch (const binio::FormatError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad hyperparameter block: " + e.what());
  }
}

}  // namespace flexclip::projection
