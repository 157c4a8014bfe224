#pragma once

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flexclip/data.hpp"
#include "flexclip/errors.hpp"
#include "flexclip/nn.hpp"
#include "flexclip/split.hpp"

namespace flexclip::generation {

/// Stage-1 hyperparameters. Defaults are the full-size networks for
/// 1,024-d embeddings; the synthetic preset shrinks the widths.
struct GenHyperParams {
  std::size_t latent_dim = 512;
  std::vector<std::size_t> encoder_widths{1024, 800, 512};
  std::size_t generator_hidden = 800;
  std::size_t critic_hidden = 2048;
  Real lambda_gp = 10;
  std::size_t critic_steps = 5;
  Real lr = Real(1e-3);
  std::size_t batch = 256;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  Real leaky_slope = Real(0.2);
  Real logvar_clamp = 10;
  /// false trains a plain conditional WGAN-GP (no encoder, no KL or
  /// reconstruction term, no reconstruction-path critic term).
  bool use_vae = true;
  /// Train the image and text networks on two threads.
  bool parallel_modalities = false;

  void validate() const;
  bool operator==(const GenHyperParams&) const = default;
};

struct EncoderOutput {
  Var mu;
  Var logvar;  // clamped to [-logvar_clamp, logvar_clamp]
  Var z;
};

/// z = mu + exp(logvar / 2) * eps.
Var reparameterize(Var mu, Var logvar, const Matrix& eps);

/// q(z | v, a): a ReLU trunk ending in a Sigmoid layer, then linear mean and
/// log-variance heads.
class Encoder {
 public:
  Encoder() = default;
  Encoder(std::size_t feat_dim, std::size_t attr_dim, const GenHyperParams& hp, Rng& init);

  EncoderOutput encode(Var v, Var a, Rng& rng);
  EncoderOutput encode(Var v, Var a, Rng& rng) const;

  std::size_t latent_dim() const { return mu_head.out_features(); }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  std::vector<Dense> trunk;
  Dense mu_head;
  Dense logvar_head;
  Real logvar_clamp = 10;

  bool operator==(const Encoder&) const = default;

 private:
  template <class Self>
  static EncoderOutput encode_impl(Self& self, Var v, Var a, Rng& rng);
};

/// G(z, a) -> feature in (0,1)^d. Doubles as the VAE decoder.
class Generator {
 public:
  Generator() = default;
  Generator(std::size_t latent_dim, std::size_t attr_dim, std::size_t feat_dim,
            const GenHyperParams& hp, Rng& init);

  Var generate(Var z, Var a);
  Var generate(Var z, Var a) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Dense hidden;
  Dense out;

  bool operator==(const Generator&) const = default;
};

/// Class-conditional critic D(x, a) = w2 . leaky(W1 [x; a] + b1) + b2.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(std::size_t feat_dim, std::size_t attr_dim, const GenHyperParams& hp, Rng& init);

  Var score(Var x, Var a);
  Var score(Var x, Var a) const;
  /// dD/dx per row, built from differentiable ops so that a penalty on it
  /// can itself be back-propagated into the critic weights. The LeakyReLU
  /// derivative is piecewise constant, so it enters as a constant mask.
  Var input_gradient(Var x, Var a);
  Var input_gradient(Var x, Var a) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Dense hidden;
  Dense out;
  Real leaky_slope = Real(0.2);

  bool operator==(const Discriminator&) const = default;

 private:
  template <class Self>
  static Var input_gradient_impl(Self& self, Var x, Var a);
};

/// D(x, a) = [x; a] . w + b. Its input gradient is constant, which makes
/// the gradient penalty closed-form; used in tests and as a reference critic.
class LinearCritic {
 public:
  LinearCritic(std::size_t feat_dim, std::size_t attr_dim);

  Var score(Var x, Var a);
  Var input_gradient(Var x, Var a);

  Dense layer;
  std::size_t feat_dim;
};

template <class C>
concept Critic = requires(C& c, Var x, Var a) {
  { c.score(x, a) } -> std::same_as<Var>;
  { c.input_gradient(x, a) } -> std::same_as<Var>;
};

/// Analytic KL(N(mu, exp(logvar)) || N(0, I)), averaged over rows.
Var kl_loss(Var mu, Var logvar);
/// Mean squared error over all elements.
Var recon_loss(Var v, Var v_bar);

/// mean_i (||dD/dx(x_hat_i, a_i)||_2 - 1)^2 with x_hat = e*real + (1-e)*fake,
/// e ~ U(0,1) per row. The interpolates are constants: the penalty only
/// depends on the critic weights.
template <Critic C>
Var gradient_penalty(const Matrix& real, const Matrix& fake, Var a, C& critic, Rng& rng) {
  Tape& t = a.tape();
  Matrix interp = real;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < interp.rows(); ++i) {
    const Real e = static_cast<Real>(unit(rng));
    auto row = interp.row(i);
    auto f = fake.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = e * row[j] + (Real(1) - e) * f[j];
  }
  const Var grad = critic.input_gradient(t.constant(std::move(interp)), a);
  return ops::mean(ops::square(ops::add_scalar(ops::row_norm(grad), Real(-1))));
}

/// E[D(real, a)] - E[D(other, a)] - lambda * GP(real, other). The critic
/// maximizes it; encoder and generator minimize it.
namespace detail {

struct CriticTerms {
  Var objective;
  Real score_gap = 0;
};

template <Critic C>
CriticTerms critic_terms(Var real, Var other, Var a, C& critic, Real lambda_gp, Rng& rng) {
  if (!real.value().same_shape(other.value())) {
    throw DimensionError("critic_objective: real " + shape_string(real.value()) + " vs other " +
                         shape_string(other.value()));
  }
  const Var gap = ops::sub(ops::mean(critic.score(real, a)), ops::mean(critic.score(other, a)));
  CriticTerms terms{gap, gap.scalar()};
  if (lambda_gp != Real(0)) {
    const Var gp = gradient_penalty(real.value(), other.value(), a, critic, rng);
    terms.objective = ops::sub(gap, ops::scale(gp, lambda_gp));
  }
  return terms;
}

}  // namespace detail

template <Critic C>
Var critic_objective(Var real, Var other, Var a, C& critic, Real lambda_gp, Rng& rng) {
  return detail::critic_terms(real, other, a, critic, lambda_gp, rng).objective;
}

/// Min-max scaling of each feature dimension into [0, 1], fitted on the
/// stage-1 training features and stored with the model.
struct FeatureScaler {
  std::vector<Real> lo;
  std::vector<Real> hi;

  static FeatureScaler fit(const Matrix& features);
  Matrix to_unit(const Matrix& features) const;
  Matrix from_unit(const Matrix& unit) const;

  bool operator==(const FeatureScaler&) const = default;
};

/// One modality's composite VAE-GAN.
struct VaeGanModel {
  std::string modality;
  GenHyperParams hp;
  FeatureScaler scaler;
  Encoder encoder;
  Generator generator;
  Discriminator critic;
  /// Training RNG streams after the last update (shuffle, noise, epsilon).
  std::vector<std::string> rng_state;

  VaeGanModel() = default;
  VaeGanModel(std::string modality, std::size_t feat_dim, std::size_t attr_dim,
              const GenHyperParams& hp);

  std::size_t feat_dim() const { return generator.out.out_features(); }
  std::size_t attr_dim() const { return critic.hidden.in_features() - feat_dim(); }

  std::vector<Parameter*> encoder_generator_parameters();
  std::vector<Parameter*> critic_parameters();
  std::vector<const Parameter*> all_parameters() const;

  /// Pseudo features in the original (unscaled) feature space.
  Matrix synthesize(const Matrix& attrs, Rng& noise) const;

  bool operator==(const VaeGanModel&) const = default;
};

struct GenerationLosses {
  Var kl;
  Var recon;
  Var vae;
  Var gan1;
  Var gan2;
  Var total;
  /// E[D(real)] - E[D(pseudo)] on the batch.
  Real critic_gap = 0;
};

/// Batch of scaled features with their class attributes.
struct GenerationBatch {
  Matrix features;
  Matrix attrs;
};

/// All four stage-1 objectives on one batch, every network trainable.
/// total = vae + gan1 + gan2; with use_vae off, vae and gan2 are zero.
GenerationLosses generation_losses(Tape& tape, VaeGanModel& model, const GenerationBatch& batch,
                                   Rng& noise, Rng& epsilon);

struct GenEpochStats {
  Real kl = 0;
  Real recon = 0;
  Real vae = 0;
  Real gan1 = 0;
  Real gan2 = 0;
  Real total = 0;
  Real critic_gap = 0;
};

struct GenerationLog {
  /// Full-data pass before the first update.
  GenEpochStats initial;
  /// Mean over the generator steps of each epoch.
  std::vector<GenEpochStats> epochs;
  /// Full-data pass after the last update (same noise as `initial`).
  GenEpochStats final;
};

struct TrainedGeneration {
  VaeGanModel image;
  VaeGanModel text;
  GenerationLog image_log;
  GenerationLog text_log;
};

/// Trains one modality on (features, attrs) with alternating critic and
/// encoder/generator steps.
VaeGanModel train_modality(const std::string& modality, const Matrix& features,
                           const Matrix& attrs, const GenHyperParams& hp, GenerationLog& log);

/// Stage 1: both modalities on source_train plus the few-shot target_train.
TrainedGeneration train_generation(const data::XShotSplit& split, const data::Corpus& corpus,
                                   const GenHyperParams& hp);

/// `gen_num` pseudo pairs per target class, each side from independent
/// noise, labelled with the class.
data::Corpus synthesize_target_set(const VaeGanModel& image, const VaeGanModel& text,
                                   const std::vector<data::ClassId>& target_classes,
                                   const std::map<data::ClassId, std::vector<Real>>& class_attrs,
                                   std::size_t gen_num, std::uint64_t seed);

void save_checkpoint(const VaeGanModel& model, const std::filesystem::path& path);
VaeGanModel load_vaegan_checkpoint(const std::filesystem::path& path);

}  // namespace flexclip::generation
