#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flexclip/data.hpp"

namespace flexclip::data {

struct SplitOptions {
  /// Share of each class's evaluation instances that become queries.
  double query_fraction = 0.5;
  /// Share of each source class held out for source-domain validation.
  double source_holdout_fraction = 0.2;
  /// Also place the few-shot target instances in the target gallery.
  bool few_shot_in_gallery = false;
};

/// Class-disjoint source/target partition of a corpus for X-shot retrieval.
/// All index lists point into the corpus the split was built from.
struct XShotSplit {
  std::vector<std::size_t> source_train;
  std::vector<std::size_t> target_train;
  std::vector<std::size_t> source_query;
  std::vector<std::size_t> source_gallery;
  std::vector<std::size_t> target_query;
  std::vector<std::size_t> target_gallery;
  std::size_t x_shot = 0;
  std::uint64_t seed = 0;
  std::vector<ClassId> source_classes;
  std::vector<ClassId> target_classes;
  std::vector<std::string> warnings;

  /// source_train followed by target_train.
  std::vector<std::size_t> training_indices() const;

  bool operator==(const XShotSplit&) const = default;
};

/// Shuffles the classes with `seed` and halves them (source gets the extra
/// class when the count is odd). Each target class contributes exactly `x`
/// training instances; the rest of each class is divided into query and
/// gallery. Pure function of its arguments.
XShotSplit split_xshot(const Corpus& corpus, std::size_t x, std::uint64_t seed,
                       const SplitOptions& options = {});

}  // namespace flexclip::data
