#include "flexclip/generation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>

#include "flexclip/binary_io.hpp"
#include "flexclip/checkpoint.hpp"
#include "flexclip/hparams_json.hpp"

namespace flexclip::generation {

using namespace flexclip::ops;

namespace {

Var bind(Tape& t, Parameter& p) { return t.parameter(p); }
Var bind(Tape& t, const Parameter& p) { return t.constant(p.value); }

template <class Layers>
void append_params(Layers& layers, auto& out) {
  for (auto& layer : layers) layer.collect(out);
}

}  // namespace

void GenHyperParams::validate() const {
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (encoder_widths.empty()) throw ConfigError("encoder needs at least one hidden layer");
  for (std::size_t w : encoder_widths)
    if (w == 0) throw ConfigError("encoder widths must be positive");
  if (generator_hidden == 0 || critic_hidden == 0) throw ConfigError("hidden widths must be positive");
  if (!(lambda_gp >= 0)) throw ConfigError("lambda_gp must be >= 0");
  if (critic_steps < 1) throw ConfigError("critic_steps must be >= 1");
  if (!(lr > 0)) throw ConfigError("generation lr must be positive");
  if (batch == 0) throw ConfigError("generation batch must be positive");
  if (!(leaky_slope > 0 && leaky_slope < 1)) throw ConfigError("leaky_slope must lie in (0, 1)");
  if (!(logvar_clamp > 0)) throw ConfigError("logvar_clamp must be positive");
}

Var reparameterize(Var mu, Var logvar, const Matrix& eps) {
  Tape& t = mu.tape();
  return add(mu, mul(ops::exp(scale(logvar, Real(0.5))), t.constant(eps)));
}

// ---------------------------------------------------------------- Encoder

Encoder::Encoder(std::size_t feat_dim, std::size_t attr_dim, const GenHyperParams& hp, Rng& init)
    : logvar_clamp(hp.logvar_clamp) {
  std::size_t in = feat_dim + attr_dim;
  for (std::size_t i = 0; i < hp.encoder_widths.size(); ++i) {
    trunk.emplace_back("encoder." + std::to_string(i), in, hp.encoder_widths[i], init);
    in = hp.encoder_widths[i];
  }
  mu_head = Dense("encoder.mu", in, hp.latent_dim, init);
  logvar_head = Dense("encoder.logvar", in, hp.latent_dim, init);
}

template <class Self>
EncoderOutput Encoder::encode_impl(Self& self, Var v, Var a, Rng& rng) {
  Var h = concat_cols(v, a);
  for (std::size_t i = 0; i < self.trunk.size(); ++i) {
    h = self.trunk[i](h);
    h = (i + 1 == self.trunk.size()) ? sigmoid(h) : relu(h);
  }
  const Var mu = self.mu_head(h);
  const Var logvar = clamp(self.logvar_head(h), -self.logvar_clamp, self.logvar_clamp);
  const Matrix eps = standard_normal(mu.rows(), mu.cols(), rng);
  return {mu, logvar, reparameterize(mu, logvar, eps)};
}

EncoderOutput Encoder::encode(Var v, Var a, Rng& rng) { return encode_impl(*this, v, a, rng); }
EncoderOutput Encoder::encode(Var v, Var a, Rng& rng) const { return encode_impl(*this, v, a, rng); }

std::vector<Parameter*> Encoder::parameters() {
  std::vector<Parameter*> out;
  append_params(trunk, out);
  mu_head.collect(out);
  logvar_head.collect(out);
  return out;
}

std::vector<const Parameter*> Encoder::parameters() const {
  std::vector<const Parameter*> out;
  append_params(trunk, out);
  mu_head.collect(out);
  logvar_head.collect(out);
  return out;
}

// -------------------------------------------------------------- Generator

Generator::Generator(std::size_t latent_dim, std::size_t attr_dim, std::size_t feat_dim,
                     const GenHyperParams& hp, Rng& init)
    : hidden("generator.0", latent_dim + attr_dim, hp.generator_hidden, init),
      out("generator.1", hp.generator_hidden, feat_dim, init) {}

Var Generator::generate(Var z, Var a) { return sigmoid(out(relu(hidden(concat_cols(z, a))))); }

Var Generator::generate(Var z, Var a) const {
  return sigmoid(out(relu(hidden(concat_cols(z, a)))));
}

std::vector<Parameter*> Generator::parameters() {
  std::vector<Parameter*> p;
  hidden.collect(p);
  out.collect(p);
  return p;
}

std::vector<const Parameter*> Generator::parameters() const {
  std::vector<const Parameter*> p;
  hidden.collect(p);
  out.collect(p);
  return p;
}

// ---------------------------------------------------------- Discriminator

Discriminator::Discriminator(std::size_t feat_dim, std::size_t attr_dim, const GenHyperParams& hp,
                             Rng& init)
    : hidden("critic.0", feat_dim + attr_dim, hp.critic_hidden, init),
      out("critic.1", hp.critic_hidden, 1, init),
      leaky_slope(hp.leaky_slope) {}

Var Discriminator::score(Var x, Var a) {
  return out(leaky_relu(hidden(concat_cols(x, a)), leaky_slope));
}

Var Discriminator::score(Var x, Var a) const {
  return out(leaky_relu(hidden(concat_cols(x, a)), leaky_slope));
}

template <class Self>
Var Discriminator::input_gradient_impl(Self& self, Var x, Var a) {
  Tape& t = x.tape();
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const Var pre = std::as_const(self.hidden)(concat_cols(x, a));
  Matrix mask(pre.rows(), pre.cols());
  {
    auto p = pre.value().values();
    auto m = mask.values();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = p[i] > 0 ? Real(1) : self.leaky_slope;
  }
  const Var w_out = bind(t, self.out.weight);  // H x 1
  const Var w_in = bind(t, self.hidden.weight);  // (d + d_a) x H
  const Var back = mul(t.constant(std::move(mask)), broadcast_rows(transpose(w_out), n));
  return slice_cols(matmul_nt(back, w_in), 0, d);
}

Var Discriminator::input_gradient(Var x, Var a) { return input_gradient_impl(*this, x, a); }
Var Discriminator::input_gradient(Var x, Var a) const { return input_gradient_impl(*this, x, a); }

std::vector<Parameter*> Discriminator::parameters() {
  std::vector<Parameter*> p;
  hidden.collect(p);
  out.collect(p);
  return p;
}

std::vector<const Parameter*> Discriminator::parameters() const {
  std::vector<const Parameter*> p;
  hidden.collect(p);
  out.collect(p);
  return p;
}

// ----------------------------------------------------------- LinearCritic

LinearCritic::LinearCritic(std::size_t fd, std::size_t attr_dim) : feat_dim(fd) {
  layer.weight = Parameter("linear_critic.weight", Matrix(fd + attr_dim, 1));
  layer.bias = Parameter("linear_critic.bias", Matrix(1, 1));
}

Var LinearCritic::score(Var x, Var a) { return layer(concat_cols(x, a)); }

Var LinearCritic::input_gradient(Var x, Var a) {
  (void)a;
  Tape& t = x.tape();
  const Var w = transpose(t.parameter(layer.weight));
  return broadcast_rows(slice_cols(w, 0, feat_dim), x.rows());
}

// ------------------------------------------------------------------ losses

Var kl_loss(Var mu, Var logvar) {
  if (!mu.value().same_shape(logvar.value())) {
    throw DimensionError("kl_loss: mu " + shape_string(mu.value()) + " vs logvar " +
                         shape_string(logvar.value()));
  }
  const Real rows = static_cast<Real>(mu.rows());
  const Var terms = sub(add(ops::exp(logvar), square(mu)), add_scalar(logvar, Real(1)));
  return scale(sum(terms), Real(0.5) / rows);
}

Var recon_loss(Var v, Var v_bar) {
  if (!v.value().same_shape(v_bar.value())) {
    throw DimensionError("recon_loss: " + shape_string(v.value()) + " vs " +
                         shape_string(v_bar.value()));
  }
  return mean(square(sub(v_bar, v)));
}

// ----------------------------------------------------------------- scaler

FeatureScaler FeatureScaler::fit(const Matrix& features) {
  FeatureScaler s;
  const std::size_t d = features.cols();
  s.lo.assign(d, std::numeric_limits<Real>::infinity());
  s.hi.assign(d, -std::numeric_limits<Real>::infinity());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto r = features.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      s.lo[j] = std::min(s.lo[j], r[j]);
      s.hi[j] = std::max(s.hi[j], r[j]);
    }
  }
  return s;
}

Matrix FeatureScaler::to_unit(const Matrix& features) const {
  if (features.cols() != lo.size()) throw DimensionError("scaler: feature dim mismatch");
  Matrix out = features;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      const Real span = hi[j] - lo[j];
      r[j] = span > 0 ? (r[j] - lo[j]) / span : Real(0.5);
    }
  }
  return out;
}

Matrix FeatureScaler::from_unit(const Matrix& unit) const {
  if (unit.cols() != lo.size()) throw DimensionError("scaler: feature dim mismatch");
  Matrix out = unit;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = lo[j] + r[j] * (hi[j] - lo[j]);
  }
  return out;
}

// ------------------------------------------------------------ VaeGanModel

VaeGanModel::VaeGanModel(std::string mod, std::size_t feat_dim, std::size_t attr_dim,
                         const GenHyperParams& h)
    : modality(std::move(mod)), hp(h) {
  hp.validate();
  Rng init = make_stream(hp.seed, modality + ".init");
  encoder = Encoder(feat_dim, attr_dim, hp, init);
  generator = Generator(hp.latent_dim, attr_dim, feat_dim, hp, init);
  critic = Discriminator(feat_dim, attr_dim, hp, init);
}

std::vector<Parameter*> VaeGanModel::encoder_generator_parameters() {
  std::vector<Parameter*> p = hp.use_vae ? encoder.parameters() : std::vector<Parameter*>{};
  for (Parameter* q : generator.parameters()) p.push_back(q);
  return p;
}

std::vector<Parameter*> VaeGanModel::critic_parameters() { return critic.parameters(); }

std::vector<const Parameter*> VaeGanModel::all_parameters() const {
  std::vector<const Parameter*> p = encoder.parameters();
  for (const Parameter* q : generator.parameters()) p.push_back(q);
  for (const Parameter* q : critic.parameters()) p.push_back(q);
  return p;
}

Matrix VaeGanModel::synthesize(const Matrix& attrs, Rng& noise) const {
  Tape t;
  const Matrix z = standard_normal(attrs.rows(), hp.latent_dim, noise);
  const Var out = generator.generate(t.constant(z), t.constant(attrs));
  return scaler.from_unit(out.value());
}

// --------------------------------------------------------- stage-1 losses

namespace {

template <class Enc, class Gen, class Crit>
GenerationLosses losses_impl(Tape& t, Enc& enc, Gen& gen, Crit& crit, const GenHyperParams& hp,
                             const GenerationBatch& batch, Rng& noise, Rng& epsilon) {
  if (batch.features.rows() == 0) throw ContractError("generation_losses on an empty batch");
  if (batch.features.rows() != batch.attrs.rows()) {
    throw DimensionError("generation batch: features " + shape_string(batch.features) +
                         " vs attrs " + shape_string(batch.attrs));
  }
  GenerationLosses L;
  const std::size_t n = batch.features.rows();
  const Var v = t.constant(batch.features);
  const Var a = t.constant(batch.attrs);

  const Var pseudo = gen.generate(t.constant(standard_normal(n, hp.latent_dim, noise)), a);
  const auto gan1 = detail::critic_terms(v, pseudo, a, crit, hp.lambda_gp, epsilon);
  L.gan1 = gan1.objective;
  L.critic_gap = gan1.score_gap;

  if (hp.use_vae) {
    const EncoderOutput eo = enc.encode(v, a, noise);
    const Var recon = gen.generate(eo.z, a);
    L.kl = kl_loss(eo.mu, eo.logvar);
    L.recon = recon_loss(v, recon);
    L.vae = add(L.kl, L.recon);
    L.gan2 = critic_objective(v, recon, a, crit, hp.lambda_gp, epsilon);
  } else {
    L.kl = L.recon = L.vae = L.gan2 = t.constant(Matrix(1, 1));
  }
  L.total = add(add(L.vae, L.gan1), L.gan2);
  return L;
}

GenEpochStats stats_of(const GenerationLosses& L) {
  return {L.kl.scalar(),   L.recon.scalar(), L.vae.scalar(),     L.gan1.scalar(),
          L.gan2.scalar(), L.total.scalar(), L.critic_gap};
}

GenEpochStats evaluation_pass(const VaeGanModel& model, const GenerationBatch& all) {
  Tape t;
  Rng noise = make_stream(model.hp.seed, model.modality + ".eval.noise");
  Rng epsilon = make_stream(model.hp.seed, model.modality + ".eval.epsilon");
  return stats_of(losses_impl(t, model.encoder, model.generator, model.critic, model.hp, all,
                              noise, epsilon));
}

void add_into(GenEpochStats& acc, const GenEpochStats& s) {
  acc.kl += s.kl;
  acc.recon += s.recon;
  acc.vae += s.vae;
  acc.gan1 += s.gan1;
  acc.gan2 += s.gan2;
  acc.total += s.total;
  acc.critic_gap += s.critic_gap;
}

GenEpochStats divided(GenEpochStats s, Real n) {
  s.kl /= n;
  s.recon /= n;
  s.vae /= n;
  s.gan1 /= n;
  s.gan2 /= n;
  s.total /= n;
  s.critic_gap /= n;
  return s;
}

}  // namespace

GenerationLosses generation_losses(Tape& tape, VaeGanModel& model, const GenerationBatch& batch,
                                   Rng& noise, Rng& epsilon) {
  return losses_impl(tape, model.encoder, model.generator, model.critic, model.hp, batch, noise,
                     epsilon);
}

// --------------------------------------------------------------- training

VaeGanModel train_modality(const std::string& modality, const Matrix& features,
                           const Matrix& attrs, const GenHyperParams& hp, GenerationLog& log) {
  if (features.rows() == 0) throw ContractError("stage-1 training set is empty");
  if (features.rows() != attrs.rows()) {
    throw DimensionError("stage-1 features " + shape_string(features) + " vs attrs " +
                         shape_string(attrs));
  }
  VaeGanModel model(modality, features.cols(), attrs.cols(), hp);
  model.scaler = FeatureScaler::fit(features);
  const GenerationBatch all{model.scaler.to_unit(features), attrs};

  Rng shuffle = make_stream(hp.seed, modality + ".shuffle");
  Rng noise = make_stream(hp.seed, modality + ".noise");
  Rng epsilon = make_stream(hp.seed, modality + ".epsilon");
  const AdamConfig adam{hp.lr};

  log = GenerationLog{};
  log.initial = evaluation_pass(model, all);

  std::vector<std::size_t> order(all.features.rows());
  std::iota(order.begin(), order.end(), 0);
  auto eg_params = model.encoder_generator_parameters();
  auto critic_params = model.critic_parameters();

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    GenEpochStats acc;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch) {
      const std::size_t stop = std::min(order.size(), start + hp.batch);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const GenerationBatch batch{all.features.gather_rows(idx), all.attrs.gather_rows(idx)};

      for (std::size_t k = 0; k < hp.critic_steps; ++k) {
        Tape t;
        const GenerationLosses L = losses_impl(t, std::as_const(model.encoder),
                                               std::as_const(model.generator), model.critic,
                                               model.hp, batch, noise, epsilon);
        const Var objective = hp.use_vae ? add(L.gan1, L.gan2) : L.gan1;
        t.backward(scale(objective, Real(-1)));
        adam_step(critic_params, adam);
      }

      Tape t;
      const GenerationLosses L = losses_impl(t, model.encoder, model.generator,
                                             std::as_const(model.critic), model.hp, batch, noise,
                                             epsilon);
      add_into(acc, stats_of(L));
      t.backward(L.total);
      adam_step(eg_params, adam);
      ++batches;
    }
    log.epochs.push_back(divided(acc, static_cast<Real>(batches)));
  }

  log.final = evaluation_pass(model, all);
  model.rng_state = {serialize_rng(shuffle), serialize_rng(noise), serialize_rng(epsilon)};
  return model;
}

TrainedGeneration train_generation(const data::XShotSplit& split, const data::Corpus& corpus,
                                   const GenHyperParams& hp) {
  hp.validate();
  const std::vector<std::size_t> idx = split.training_indices();
  if (idx.empty()) throw ContractError("stage-1 training set is empty");
  const Matrix attrs = corpus.attrs_for(idx);
  const Matrix image = corpus.image.gather_rows(idx);
  const Matrix text = corpus.text.gather_rows(idx);

  TrainedGeneration out;
  if (hp.parallel_modalities) {
    auto text_job = std::async(std::launch::async, [&] {
      return train_modality("text", text, attrs, hp, out.text_log);
    });
    out.image = train_modality("image", image, attrs, hp, out.image_log);
    out.text = text_job.get();
  } else {
    out.image = train_modality("image", image, attrs, hp, out.image_log);
    out.text = train_modality("text", text, attrs, hp, out.text_log);
  }
  return out;
}

data::Corpus synthesize_target_set(const VaeGanModel& image, const VaeGanModel& text,
                                   const std::vector<data::ClassId>& target_classes,
                                   const std::map<data::ClassId, std::vector<Real>>& class_attrs,
                                   std::size_t gen_num, std::uint64_t seed) {
  if (gen_num == 0) throw ConfigError("gen_num must be positive");
  const std::size_t da = image.attr_dim();
  Matrix attrs(target_classes.size() * gen_num, da);
  data::Corpus out;
  out.name = "pseudo";
  std::size_t row = 0;
  for (data::ClassId cls : target_classes) {
    const auto it = class_attrs.find(cls);
    if (it == class_attrs.end()) {
      throw ContractError("no attribute vector for target class " + std::to_string(cls));
    }
    if (it->second.size() != da) throw DimensionError("attribute width does not match generator");
    out.class_attrs[cls] = it->second;
    for (std::size_t k = 0; k < gen_num; ++k, ++row) {
      std::copy(it->second.begin(), it->second.end(), attrs.row(row).begin());
      out.labels.push_back(cls);
    }
  }
  Rng image_noise = make_stream(seed, "synthesize.image");
  Rng text_noise = make_stream(seed, "synthesize.text");
  out.image = image.synthesize(attrs, image_noise);
  out.text = text.synthesize(attrs, text_noise);
  return out;
}

// ------------------------------------------------------------- checkpoint

void save_checkpoint(const VaeGanModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot write " + path.string());
  write_checkpoint_header(os, CheckpointKind::vae_gan);
  binio::write_string(os, model.modality);
  binio::write_string(os, to_json(model.hp).dump());
  binio::write_u64(os, model.feat_dim());
  binio::write_u64(os, model.attr_dim());
  binio::write_matrix(os, Matrix::row_vector(model.scaler.lo));
  binio::write_matrix(os, Matrix::row_vector(model.scaler.hi));
  const auto params = model.all_parameters();
  binio::write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) binio::write_parameter(os, *p);
  binio::write_u32(os, static_cast<std::uint32_t>(model.rng_state.size()));
  for (const auto& s : model.rng_state) binio::write_string(os, s);
  if (!os) throw CheckpointError("write failed for " + path.string());
}

VaeGanModel load_vaegan_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  read_checkpoint_header(is, CheckpointKind::vae_gan);
  try {
    const std::string modality = binio::read_string(is);
    const GenHyperParams hp = gen_hparams_from_json(nlohmann::json::parse(binio::read_string(is)));
    const std::size_t feat_dim = binio::read_u64(is);
    const std::size_t attr_dim = binio::read_u64(is);
    VaeGanModel model(modality, feat_dim, attr_dim, hp);
    const Matrix lo = binio::read_matrix(is);
    const Matrix hi = binio::read_matrix(is);
    model.scaler.lo.assign(lo.values().begin(), lo.values().end());
    model.scaler.hi.assign(hi.values().begin(), hi.values().end());
    if (model.scaler.lo.size() != feat_dim || model.scaler.hi.size() != feat_dim) {
      throw CheckpointError("scaler width does not match feature dim");
    }
    std::vector<Parameter*> slots = model.encoder.parameters();
    for (Parameter* p : model.generator.parameters()) slots.push_back(p);
    for (Parameter* p : model.critic.parameters()) slots.push_back(p);
    const std::uint32_t count = binio::read_u32(is);
    if (count != slots.size()) throw CheckpointError("unexpected parameter count in checkpoint");
    for (Parameter* slot : slots) {
      Parameter p = binio::read_parameter(is);
      if (p.name != slot->name || !p.value.same_shape(slot->value)) {
        throw CheckpointError("checkpoint parameter " + p.name + " " + shape_string(p.value) +
                              " does not match " + slot->name + " " + shape_string(slot->value));
      }
      *slot = std::move(p);
    }
    const std::uint32_t n_rng = binio::read_u32(is);
    for (std::uint32_t i = 0; i < n_rng; ++i) model.rng_state.push_back(binio::read_string(is));
    return model;
  } catch (const binio::FormatError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad hyperparameter block: " + e.what());
  }
}

}  // namespace flexclip::generation
