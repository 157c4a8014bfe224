#include "flexclip/split.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "flexclip/errors.hpp"
#include "flexclip/rng.hpp"

namespace flexclip::data {

std::vector<std::size_t> XShotSplit::training_indices() const {
  std::vector<std::size_t> out = source_train;
  out.insert(out.end(), target_train.begin(), target_train.end());
  return out;
}

namespace {

// Number of queries among `n` evaluation items; keeps both sides nonempty
// whenever n >= 2.
std::size_t query_count(std::size_t n, double fraction) {
  if (n == 0) return 0;
  if (n == 1) return fraction >= 0.5 ? 1 : 0;
  const auto q = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(q, 1, n - 1);
}

}  // namespace

XShotSplit split_xshot(const Corpus& corpus, std::size_t x, std::uint64_t seed,
                       const SplitOptions& options) {
  if (!(options.query_fraction > 0.0 && options.query_fraction < 1.0)) {
    throw ConfigError("query_fraction must lie in (0, 1)");
  }
  if (!(options.source_holdout_fraction >= 0.0 && options.source_holdout_fraction < 1.0)) {
    throw ConfigError("source_holdout_fraction must lie in [0, 1)");
  }
  std::map<ClassId, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < corpus.size(); ++i) members[corpus.labels[i]].push_back(i);
  if (members.size() < 2) throw ConfigError("an X-shot split needs at least two classes");

  XShotSplit split;
  split.x_shot = x;
  split.seed = seed;

  Rng rng = make_stream(seed, "split");
  std::vector<ClassId> classes;
  for (const auto& [cls, idx] : members) classes.push_back(cls);
  std::shuffle(classes.begin(), classes.end(), rng);

  const std::size_t n_target = classes.size() / 2;
  const std::size_t n_source = classes.size() - n_target;
  if (classes.size() % 2 != 0) {
    split.warnings.push_back("odd class count " + std::to_string(classes.size()) + ": " +
                             std::to_string(n_source) + " source / " + std::to_string(n_target) +
                             " target classes");
  }
  split.source_classes.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_source));
  split.target_classes.assign(classes.begin() + static_cast<std::ptrdiff_t>(n_source), classes.end());
  std::sort(split.source_classes.begin(), split.source_classes.end());
  std::sort(split.target_classes.begin(), split.target_classes.end());

  for (ClassId cls : split.target_classes) {
    if (members[cls].size() < x) {
      throw ConfigError(std::to_string(x) + "-shot split impossible: target class " +
                        std::to_string(cls) + " has only " + std::to_string(members[cls].size()) +
                        " instances");
    }
  }

  for (ClassId cls : split.source_classes) {
    std::vector<std::size_t> idx = members[cls];
    std::shuffle(idx.begin(), idx.end(), rng);
    auto holdout = static_cast<std::size_t>(
        std::llround(options.source_holdout_fraction * static_cast<double>(idx.size())));
    holdout = std::min(holdout, idx.size());
    const std::size_t train = idx.size() - holdout;
    const std::size_t nq = query_count(holdout, options.query_fraction);
    const auto b = idx.begin();
    split.source_train.insert(split.source_train.end(), b, b + static_cast<std::ptrdiff_t>(train));
    split.source_query.insert(split.source_query.end(), b + static_cast<std::ptrdiff_t>(train),
                              b + static_cast<std::ptrdiff_t>(train + nq));
    split.source_gallery.insert(split.source_gallery.end(),
                                b + static_cast<std::ptrdiff_t>(train + nq), idx.end());
  }

  for (ClassId cls : split.target_classes) {
    std::vector<std::size_t> idx = members[cls];
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t rest = idx.size() - x;
    const std::size_t nq = query_count(rest, options.query_fraction);
    const auto b = idx.begin();
    split.target_train.insert(split.target_train.end(), b, b + static_cast<std::ptrdiff_t>(x));
    split.target_query.insert(split.target_query.end(), b + static_cast<std::ptrdiff_t>(x),
                              b + static_cast<std::ptrdiff_t>(x + nq));
    split.target_gallery.insert(split.target_gallery.end(), b + static_cast<std::ptrdiff_t>(x + nq),
                                idx.end());
    if (options.few_shot_in_gallery) {
      split.target_gallery.insert(split.target_gallery.end(), b, b + static_cast<std::ptrdiff_t>(x));
    }
  }
  return split;
}

}  // namespace flexclip::data
