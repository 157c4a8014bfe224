#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "flexclip/checkpoint.hpp"
#include "flexclip/errors.hpp"
#include "flexclip/generation.hpp"
#include "flexclip/split.hpp"
#include "flexclip/synth.hpp"
#include "support.hpp"

using namespace flexclip;
using namespace flexclip::generation;
using testing::check_gradients;
using testing::random_matrix;
namespace fs = std::filesystem;

namespace {

GenHyperParams tiny_hparams() {
  GenHyperParams hp;
  hp.latent_dim = 4;
  hp.encoder_widths = {12, 10, 8};
  hp.generator_hidden = 10;
  hp.critic_hidden = 12;
  hp.batch = 4;
  hp.epochs = 1;
  hp.seed = 11;
  return hp;
}

GenerationBatch tiny_batch(std::size_t n, std::size_t d) {
  Rng rng(3);
  return {uniform(n, d, Real(0.05), Real(0.95), rng), random_matrix(n, d, 4)};
}

Real kl_scalar(const Matrix& mu, const Matrix& logvar) {
  Tape t;
  return kl_loss(t.constant(mu), t.constant(logvar)).scalar();
}

}  // namespace

TEST_CASE("KL closed forms") {
  CHECK(kl_scalar(Matrix(3, 5), Matrix(3, 5)) == 0);
  CHECK(kl_scalar(Matrix::from_rows({{1}}), Matrix::from_rows({{0}})) == Real(0.5));
  // Rows are averaged: two rows of mu=1 still give 0.5.
  CHECK(kl_scalar(Matrix::from_rows({{1}, {1}}), Matrix(2, 1)) == Real(0.5));
}

TEST_CASE("KL matches a Monte Carlo estimate") {
  const Matrix mu = Matrix::from_rows({{0.7, -1.2, 0.1}});
  const Matrix logvar = Matrix::from_rows({{-0.5, 0.8, 0.2}});
  Rng rng(17);
  std::normal_distribution<double> n01;
  const int samples = 100000;
  double acc = 0;
  for (int s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double sd = std::exp(0.5 * logvar(0, j));
      const double z = mu(0, j) + sd * n01(rng);
      // log q(z) - log p(z)
      const double lq = -0.5 * std::log(2 * std::numbers::pi) - std::log(sd) -
                        0.5 * std::pow((z - mu(0, j)) / sd, 2);
      const double lp = -0.5 * std::log(2 * std::numbers::pi) - 0.5 * z * z;
      acc += lq - lp;
    }
  }
  const double mc = acc / samples;
  CHECK(std::abs(kl_scalar(mu, logvar) - mc) / mc < 0.02);
}

TEST_CASE("reconstruction loss is the element mean of squared error") {
  Tape t;
  const Var v = t.constant(Matrix::from_rows({{0, 0}}));
  CHECK(recon_loss(v, t.constant(Matrix::from_rows({{1, 1}}))).scalar() == 1);
  CHECK(recon_loss(v, v).scalar() == 0);
  CHECK_THROWS_AS(recon_loss(v, t.constant(Matrix(1, 3))), DimensionError);
  Parameter vb("vb", Matrix::from_rows({{0.5, -1}, {2, 0}}));
  const Matrix target = Matrix::from_rows({{0, 0}, {1, 1}});
  Tape t2;
  t2.backward(recon_loss(t2.constant(target), t2.parameter(vb)));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(vb.grad.values()[i] ==
          doctest::Approx(2 * (vb.value.values()[i] - target.values()[i]) / 4));
}

TEST_CASE("reparameterize") {
  Tape t;
  const Var z = reparameterize(t.constant(Matrix::from_rows({{1, 2}})),
                               t.constant(Matrix::from_rows({{0, 2 * std::log(3.0)}})),
                               Matrix::from_rows({{0.5, -1}}));
  CHECK(z.value()(0, 0) == doctest::Approx(1.5));
  CHECK(z.value()(0, 1) == doctest::Approx(-1.0));
}

TEST_CASE("gradient penalty of a linear critic is closed-form") {
  LinearCritic critic(4, 2);
  // Feature part of w has norm 3; the attribute part does not enter dD/dx.
  critic.layer.weight.value = Matrix::from_rows({{1}, {2}, {2}, {0}, {5}, {-7}});
  Tape t;
  Rng rng(1);
  const Var a = t.constant(random_matrix(5, 2, 2));
  const Var gp = gradient_penalty(random_matrix(5, 4, 3), random_matrix(5, 4, 4), a, critic, rng);
  CHECK(std::abs(gp.scalar() - 4.0) < 1e-10);

  critic.layer.weight.value = Matrix::from_rows({{0.6}, {0.8}, {0}, {0}, {1}, {1}});
  const Var zero = gradient_penalty(random_matrix(5, 4, 5), random_matrix(5, 4, 6), a, critic, rng);
  CHECK(std::abs(zero.scalar()) < 1e-15);
}

TEST_CASE("penalty gradient on a linear critic") {
  // GP = (|w_x| - 1)^2, so dGP/dw_x = 2 (|w_x| - 1) w_x / |w_x|.
  LinearCritic critic(2, 1);
  critic.layer.weight.value = Matrix::from_rows({{3}, {4}, {1}});
  Tape t;
  Rng rng(1);
  const Var a = t.constant(random_matrix(3, 1, 2));
  t.backward(gradient_penalty(random_matrix(3, 2, 3), random_matrix(3, 2, 4), a, critic, rng));
  CHECK(critic.layer.weight.grad(0, 0) == doctest::Approx(2 * 4 * 3 / 5.0));
  CHECK(critic.layer.weight.grad(1, 0) == doctest::Approx(2 * 4 * 4 / 5.0));
  CHECK(critic.layer.weight.grad(2, 0) == 0);
}

TEST_CASE("discriminator input gradient matches finite differences") {
  GenHyperParams hp = tiny_hparams();
  Rng init(5);
  const Discriminator d(6, 3, hp, init);
  const Matrix x = random_matrix(4, 6, 6);
  const Matrix a = random_matrix(4, 3, 7);
  Tape t;
  const Matrix g = d.input_gradient(t.constant(x), t.constant(a)).value();
  const Real h = 1e-6;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      Matrix up = x, down = x;
      up(i, j) += h;
      down(i, j) -= h;
      Tape tu, td;
      const Real su = d.score(tu.constant(up), tu.constant(a)).value()(i, 0);
      const Real sd = d.score(td.constant(down), td.constant(a)).value()(i, 0);
      CHECK(g(i, j) == doctest::Approx((su - sd) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("composite generation losses pass gradient checks") {
  const std::size_t d = 16;
  const GenerationBatch batch = tiny_batch(4, d);
  const Rng noise0 = make_stream(1, "noise");
  const Rng eps0 = make_stream(1, "eps");
  auto builder = [&](VaeGanModel& m, auto pick) {
    return [&m, &batch, noise0, eps0, pick](Tape& t) {
      Rng noise = noise0;
      Rng eps = eps0;
      return pick(generation_losses(t, m, batch, noise, eps));
    };
  };
  const auto vae = [](const GenerationLosses& L) { return L.vae; };
  const auto gan1 = [](const GenerationLosses& L) { return L.gan1; };
  const auto gan2 = [](const GenerationLosses& L) { return L.gan2; };

  VaeGanModel model("image", d, d, tiny_hparams());
  SUBCASE("VAE objective, encoder and generator") {
    const auto r = check_gradients(model.encoder_generator_parameters(), builder(model, vae));
    INFO(r.worst_parameter);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("critic objectives with the penalty, critic weights") {
    for (auto pick : {+gan1, +gan2}) {
      const auto r = check_gradients(model.critic_parameters(), builder(model, pick));
      INFO(r.worst_parameter);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
  SUBCASE("critic objectives, encoder and generator") {
    // The penalty is built on constant interpolates and carries no
    // encoder/generator gradient, so compare against the penalty-free objective.
    model.hp.lambda_gp = 0;
    for (auto pick : {+gan1, +gan2}) {
      const auto r = check_gradients(model.encoder_generator_parameters(), builder(model, pick));
      INFO(r.worst_parameter);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("use_vae=false drops the encoder and the VAE terms") {
  GenHyperParams hp = tiny_hparams();
  hp.use_vae = false;
  VaeGanModel m("text", 8, 8, hp);
  for (const Parameter* p : m.encoder_generator_parameters())
    CHECK(p->name.find("encoder") == std::string::npos);
  const GenerationBatch batch = tiny_batch(4, 8);
  Tape t;
  Rng n(1), e(2);
  const auto L = generation_losses(t, m, batch, n, e);
  CHECK(L.vae.scalar() == 0);
  CHECK(L.gan2.scalar() == 0);
  CHECK(L.total.scalar() == L.gan1.scalar());
}

TEST_CASE("feature scaler maps the fitted range onto [0, 1] and back") {
  const Matrix x = Matrix::from_rows({{1, -2}, {3, 0}, {2, 2}});
  const FeatureScaler s = FeatureScaler::fit(x);
  const Matrix u = s.to_unit(x);
  CHECK(u(0, 0) == 0);
  CHECK(u(1, 0) == 1);
  CHECK(u(2, 1) == 1);
  const Matrix back = s.from_unit(u);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(back.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-15));
}

TEST_CASE("hyperparameter validation") {
  GenHyperParams hp = tiny_hparams();
  CHECK_NOTHROW(hp.validate());
  hp.critic_steps = 0;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
  hp = tiny_hparams();
  hp.lambda_gp = -1;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
  hp = tiny_hparams();
  hp.lr = 0;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
}

namespace {

struct SmallRun {
  data::Corpus corpus;
  data::XShotSplit split;
  GenHyperParams hp;
};

SmallRun small_run(std::size_t epochs) {
  data::SynthSpec spec;
  spec.n_classes = 4;
  spec.per_class = 10;
  spec.dim = 8;
  spec.semantic_rank = 2;
  SmallRun r{data::synth_corpus(spec), {}, tiny_hparams()};
  r.split = data::split_xshot(r.corpus, 1, 2);
  r.hp.epochs = epochs;
  return r;
}

}  // namespace

TEST_CASE("training is deterministic and leaves the inputs alone") {
  const SmallRun r = small_run(1);
  const TrainedGeneration a = train_generation(r.split, r.corpus, r.hp);
  const TrainedGeneration b = train_generation(r.split, r.corpus, r.hp);
  CHECK(a.image == b.image);
  CHECK(a.text == b.text);
  CHECK(a.image_log.final.recon == b.image_log.final.recon);
  CHECK(a.image_log.epochs.size() == 1);

  GenHyperParams par = r.hp;
  par.parallel_modalities = true;
  const TrainedGeneration c = train_generation(r.split, r.corpus, par);
  CHECK(c.image.encoder == a.image.encoder);
  CHECK(c.text.generator == a.text.generator);
}

TEST_CASE("empty training set is an error") {
  GenerationLog log;
  CHECK_THROWS_AS(train_modality("image", Matrix(0, 4), Matrix(0, 4), tiny_hparams(), log),
                  ContractError);
}

TEST_CASE("synthesis gives gen_num pairs per target class") {
  const SmallRun r = small_run(1);
  const TrainedGeneration g = train_generation(r.split, r.corpus, r.hp);
  const data::Corpus pseudo =
      synthesize_target_set(g.image, g.text, r.split.target_classes, r.corpus.class_attrs, 7, 3);
  CHECK(pseudo.size() == 7 * r.split.target_classes.size());
  CHECK_NOTHROW(pseudo.validate());
  for (data::ClassId c : pseudo.labels)
    CHECK(std::count(r.split.target_classes.begin(), r.split.target_classes.end(), c) == 1);
  CHECK(pseudo == synthesize_target_set(g.image, g.text, r.split.target_classes,
                                        r.corpus.class_attrs, 7, 3));
  CHECK_THROWS_AS(synthesize_target_set(g.image, g.text, r.split.target_classes,
                                        r.corpus.class_attrs, 0, 3),
                  ConfigError);
  auto attrs = r.corpus.class_attrs;
  attrs.erase(r.split.target_classes.front());
  CHECK_THROWS(synthesize_target_set(g.image, g.text, r.split.target_classes, attrs, 2, 3));
}

TEST_CASE("stage-1 checkpoints round-trip exactly") {
  const SmallRun r = small_run(2);
  const TrainedGeneration g = train_generation(r.split, r.corpus, r.hp);
  const fs::path path = fs::temp_directory_path() / "flexclip_test_gen.ckpt";
  save_checkpoint(g.image, path);
  const VaeGanModel back = load_vaegan_checkpoint(path);
  CHECK(back == g.image);
  Rng n1(9), n2(9);
  const Matrix attrs = random_matrix(3, 8, 10);
  CHECK(back.synthesize(attrs, n1) == g.image.synthesize(attrs, n2));

  SUBCASE("tampered magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(load_vaegan_checkpoint(path), CheckpointError);
  }
  SUBCASE("unsupported version") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put(char(9));
    f.close();
    try {
      load_vaegan_checkpoint(path);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()) == "checkpoint version 9 is not supported (expected 1)");
    }
  }
  SUBCASE("truncated payload") {
    fs::resize_file(path, fs::file_size(path) / 2);
    CHECK_THROWS_AS(load_vaegan_checkpoint(path), CheckpointError);
  }
  fs::remove(path);
}
