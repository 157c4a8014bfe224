#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flexclip/data.hpp"
#include "flexclip/nn.hpp"
#include "flexclip/split.hpp"

namespace flexclip::projection {

struct ProjHyperParams {
  /// Loss weights for classification, modal consistency and contrastive terms.
  Real alpha = 1;
  Real beta = 1;
  Real gamma = 1;
  Real tau = Real(0.1);
  Real lr = Real(1e-3);
  std::size_t batch = 256;
  std::size_t epochs = 60;
  std::uint64_t seed = 0;
  std::size_t projector_hidden = 1024;
  std::size_t gate_hidden = 1024;
  /// false bypasses the gate: u = f.
  bool use_gate = true;
  /// Drop the anchor's self-similarity from the contrastive denominator.
  bool contrastive_exclude_self = true;

  void validate() const;
  bool operator==(const ProjHyperParams&) const = default;
};

/// u = g * f + (1 - g) * x, evaluated with std::lerp so that g = 1 gives f and
/// g = 0 gives x exactly and u never leaves [min(x, f), max(x, f)].
Var gated_fusion(Var x, Var f, Var g);

enum class GateMode {
  learned,
  /// g = 1, u = f.
  open,
  /// g = 0, u = x.
  closed,
};

struct FuseOutput {
  Var f;
  Var g;  // constant under a forced gate mode
  Var u;
};

/// One modality's projector P and gate network. P maps d -> d (hidden
/// ReLU layer); Gate maps [x; f] -> (0,1)^d (hidden ReLU layer, Sigmoid out).
class ModalityBranch {
 public:
  ModalityBranch() = default;
  ModalityBranch(const std::string& name, std::size_t dim, const ProjHyperParams& hp, Rng& init);

  FuseOutput fuse(Var x, GateMode mode = GateMode::learned);
  FuseOutput fuse(Var x, GateMode mode = GateMode::learned) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Dense proj_hidden;
  Dense proj_out;
  Dense gate_hidden;
  Dense gate_out;

  bool operator==(const ModalityBranch&) const = default;

 private:
  template <class Self>
  static FuseOutput fuse_impl(Self& self, Var x, GateMode mode);
};

/// Cross-entropy of the shared head on both modalities:
/// -(1/n) sum_i [log p_v(y_i) + log p_t(y_i)].
Var loss_ce(Var logits_v, Var logits_t, std::span<const std::size_t> labels);
/// Same loss from probabilities rather than logits.
Var loss_ce_from_probs(Var probs_v, Var probs_t, std::span<const std::size_t> labels);
/// (1/n) sum_i ||u_v_i - u_t_i||_2.
Var loss_consistency(Var u_v, Var u_t);
/// Instance-level cross-modal contrastive loss over the 2n embeddings of a
/// batch; each embedding is an anchor whose positive is its paired
/// embedding. Scaled by 1/n as written (not 1/(2n)).
Var loss_contrastive(Var u_v, Var u_t, Real tau, bool exclude_self = true);

struct LossComponents {
  Real ce = 0;
  Real consistency = 0;
  Real contrastive = 0;
};

Real total_loss(const LossComponents& c, const ProjHyperParams& hp);
Var total_loss(Var ce, Var consistency, Var contrastive, const ProjHyperParams& hp);

struct ProjectionModel {
  ProjHyperParams hp;
  ModalityBranch image;
  ModalityBranch text;
  Dense head;
  /// Class id of each head output.
  std::vector<data::ClassId> class_ids;

  ProjectionModel() = default;
  ProjectionModel(std::size_t dim, std::vector<data::ClassId> class_ids, const ProjHyperParams& hp);

  std::size_t dim() const { return head.in_features(); }
  GateMode gate_mode() const { return hp.use_gate ? GateMode::learned : GateMode::open; }

  Matrix embed_image(const Matrix& x) const;
  Matrix embed_text(const Matrix& x) const;
  /// Head index of each label; throws ContractError for unknown classes.
  std::vector<std::size_t> class_indices(std::span<const data::ClassId> labels) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  bool operator==(const ProjectionModel&) const = default;
};

struct ProjEpochStats {
  Real ce = 0;
  Real consistency = 0;
  Real contrastive = 0;
  Real total = 0;
};

struct ProjectionLog {
  /// Entry 0 is before training; entry k is after epoch k. Each is the mean
  /// over a fixed, unshuffled batching of the training set.
  std::vector<ProjEpochStats> epochs;
};

/// Loss components of `model` on a paired set, batched as in training.
ProjEpochStats evaluate_losses(const ProjectionModel& model, const Matrix& image,
                               const Matrix& text, std::span<const std::size_t> class_idx);

/// Stage 2 on source_train + target_train + pseudo pairs.
ProjectionModel train_projection(const data::XShotSplit& split, const data::Corpus& corpus,
                                 const data::Corpus& pseudo, const ProjHyperParams& hp,
                                 ProjectionLog* log = nullptr);

void save_checkpoint(const ProjectionModel& model, const std::filesystem::path& path);
ProjectionModel load_projection_checkpoint(const std::filesystem::path& path);

}  // namespace flexclip::projection
