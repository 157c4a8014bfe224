#pragma once

#include <cstdint>

#include "flexclip/data.hpp"

namespace flexclip::data {

/// Parameters of the synthetic stand-in for pretrained embeddings.
struct SynthSpec {
  std::size_t n_classes = 8;
  std::size_t per_class = 50;
  std::size_t dim = 64;
  double modality_gap = 0.5;
  double noise_sigma = 0.06;
  /// Text prototypes are normalize((1-rho) p_c + rho Q p_c) for a random
  /// orthogonal Q, so raw cross-modal cosine is only partly informative.
  double modality_mixing = 0.8;
  std::uint64_t seed = 7;
  /// Prototypes are drawn inside a random subspace of this rank, so unseen
  /// classes are mixtures of directions the seen classes already use.
  /// Zero means the full feature space.
  std::size_t semantic_rank = 4;
  /// Unit-normalize emitted features, mirroring normalized embedding geometry.
  bool normalize = true;
};

/// Per class c a unit prototype p_c (also its attribute vector) and a text
/// prototype t_c; images are normalize(p_c + e), texts
/// normalize(t_c + gap*m + e') with a fixed modality offset m and
/// independent isotropic noise. Values are rounded to
/// float32 so the corpus survives the on-disk format exactly.
Corpus synth_corpus(const SynthSpec& spec);

}  // namespace flexclip::data
