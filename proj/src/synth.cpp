#include "flexclip/synth.hpp"

#include <cmath>

#include "flexclip/errors.hpp"
#include "flexclip/rng.hpp"

namespace flexclip::data {

namespace {

void normalize(std::span<Real> v) {
  Real s = 0;
  for (Real x : v) s += x * x;
  const Real n = std::sqrt(s);
  if (n > 0)
    for (Real& x : v) x /= n;
}

void round_to_float(std::span<Real> v) {
  for (Real& x : v) x = static_cast<Real>(static_cast<float>(x));
}

// Gram-Schmidt on Gaussian rows.
Matrix orthonormal_rows(std::size_t rows, std::size_t d, Rng& rng) {
  Matrix m = standard_normal(rows, d, rng);
  for (std::size_t i = 0; i < rows; ++i) {
    auto bi = m.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      auto bj = m.row(j);
      Real dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += bi[k] * bj[k];
      for (std::size_t k = 0; k < d; ++k) bi[k] -= dot * bj[k];
    }
    normalize(bi);
  }
  return m;
}

}  // namespace

Corpus synth_corpus(const SynthSpec& spec) {
  if (spec.dim < 2) throw ConfigError("synthetic corpus needs dim >= 2");
  if (spec.n_classes == 0 || spec.per_class == 0) {
    throw ConfigError("synthetic corpus needs positive class and per-class counts");
  }
  if (!(spec.noise_sigma > 0)) throw ConfigError("noise_sigma must be positive");
  if (spec.semantic_rank > spec.dim) throw ConfigError("semantic_rank exceeds dim");
  if (!(spec.modality_mixing >= 0 && spec.modality_mixing <= 1)) {
    throw ConfigError("modality_mixing must lie in [0, 1]");
  }

  Rng proto_rng = make_stream(spec.seed, "synth.prototypes");
  Rng noise_rng = make_stream(spec.seed, "synth.noise");
  const std::size_t d = spec.dim;
  const std::size_t rank = spec.semantic_rank == 0 ? d : spec.semantic_rank;

  const Matrix basis = orthonormal_rows(rank, d, proto_rng);
  const Matrix rotation = orthonormal_rows(d, d, proto_rng);
  const Real rho = static_cast<Real>(spec.modality_mixing);

  Matrix offset = standard_normal(1, d, proto_rng);
  normalize(offset.row(0));

  Corpus c;
  c.name = "synthetic";
  std::vector<std::vector<Real>> protos;
  std::vector<std::vector<Real>> text_protos;
  for (std::size_t cls = 0; cls < spec.n_classes; ++cls) {
    const Matrix coeff = standard_normal(1, rank, proto_rng);
    std::vector<Real> p(d, Real(0));
    for (std::size_t r = 0; r < rank; ++r)
      for (std::size_t k = 0; k < d; ++k) p[k] += coeff(0, r) * basis(r, k);
    normalize(p);
    round_to_float(p);
    std::vector<Real> t(d, Real(0));
    for (std::size_t i = 0; i < d; ++i) {
      Real qp = 0;
      for (std::size_t k = 0; k < d; ++k) qp += rotation(i, k) * p[k];
      t[i] = (1 - rho) * p[i] + rho * qp;
    }
    normalize(t);
    text_protos.push_back(std::move(t));
    c.class_attrs[static_cast<ClassId>(cls)] = p;
    protos.push_back(std::move(p));
  }

  const std::size_t n = spec.n_classes * spec.per_class;
  c.image = Matrix(n, d);
  c.text = Matrix(n, d);
  c.labels.reserve(n);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  std::size_t row = 0;
  for (std::size_t cls = 0; cls < spec.n_classes; ++cls) {
    for (std::size_t k = 0; k < spec.per_class; ++k, ++row) {
      auto img = c.image.row(row);
      auto txt = c.text.row(row);
      for (std::size_t j = 0; j < d; ++j) {
        img[j] = protos[cls][j] + static_cast<Real>(noise(noise_rng));
      }
      for (std::size_t j = 0; j < d; ++j) {
        txt[j] = text_protos[cls][j] + static_cast<Real>(spec.modality_gap) * offset(0, j) +
                 static_cast<Real>(noise(noise_rng));
      }
      if (spec.normalize) {
        normalize(img);
        normalize(txt);
      }
      round_to_float(img);
      round_to_float(txt);
      c.labels.push_back(static_cast<ClassId>(cls));
    }
  }
  return c;
}

}  // namespace flexclip::data
