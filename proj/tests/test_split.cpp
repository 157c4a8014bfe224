#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "flexclip/errors.hpp"
#include "flexclip/split.hpp"
#include "flexclip/synth.hpp"

using namespace flexclip;
using namespace flexclip::data;

namespace {

Corpus corpus_of(std::size_t classes, std::size_t per_class) {
  SynthSpec spec;
  spec.n_classes = classes;
  spec.per_class = per_class;
  spec.dim = 8;
  return synth_corpus(spec);
}

std::map<ClassId, std::size_t> class_counts(const Corpus& c, const std::vector<std::size_t>& idx) {
  std::map<ClassId, std::size_t> n;
  for (std::size_t i : idx) ++n[c.labels[i]];
  return n;
}

}  // namespace

TEST_CASE("every instance lands in exactly one list") {
  const Corpus c = corpus_of(10, 12);
  const XShotSplit s = split_xshot(c, 3, 42);
  std::vector<std::size_t> all;
  for (const auto* v : {&s.source_train, &s.target_train, &s.source_query, &s.source_gallery,
                        &s.target_query, &s.target_gallery})
    all.insert(all.end(), v->begin(), v->end());
  std::sort(all.begin(), all.end());
  CHECK(all.size() == c.size());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
}

TEST_CASE("lists respect the class partition") {
  const Corpus c = corpus_of(10, 12);
  const XShotSplit s = split_xshot(c, 2, 7);
  const std::set<ClassId> src(s.source_classes.begin(), s.source_classes.end());
  const std::set<ClassId> tgt(s.target_classes.begin(), s.target_classes.end());
  for (std::size_t i : s.source_train) CHECK(src.count(c.labels[i]) == 1);
  for (std::size_t i : s.source_query) CHECK(src.count(c.labels[i]) == 1);
  for (std::size_t i : s.source_gallery) CHECK(src.count(c.labels[i]) == 1);
  for (std::size_t i : s.target_train) CHECK(tgt.count(c.labels[i]) == 1);
  for (std::size_t i : s.target_query) CHECK(tgt.count(c.labels[i]) == 1);
  for (std::size_t i : s.target_gallery) CHECK(tgt.count(c.labels[i]) == 1);
  for (const auto& [cls, n] : class_counts(c, s.target_query)) CHECK(n >= 1);
  for (const auto& [cls, n] : class_counts(c, s.target_gallery)) CHECK(n >= 1);
  CHECK(class_counts(c, s.target_query).size() == 5);
  CHECK(class_counts(c, s.target_gallery).size() == 5);
}

TEST_CASE("x-shot counts over many seeds") {
  const Corpus c = corpus_of(10, 12);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (std::size_t x : {0u, 1u, 3u, 5u}) {
      const XShotSplit s = split_xshot(c, x, seed);
      REQUIRE(s.source_classes.size() == 5);
      REQUIRE(s.target_classes.size() == 5);
      if (x == 0) {
        CHECK(s.target_train.empty());
      } else {
        const auto n = class_counts(c, s.target_train);
        CHECK(n.size() == 5);
        for (const auto& [cls, k] : n) CHECK(k == x);
      }
    }
  }
}

TEST_CASE("split is a pure function of its inputs") {
  const Corpus c = corpus_of(8, 10);
  CHECK(split_xshot(c, 1, 3) == split_xshot(c, 1, 3));
  const bool same = split_xshot(c, 1, 3).target_query == split_xshot(c, 1, 4).target_query;
  CHECK_FALSE(same);
}

TEST_CASE("odd class count gives the extra class to the source side") {
  const XShotSplit s = split_xshot(corpus_of(7, 6), 1, 1);
  CHECK(s.source_classes.size() == 4);
  CHECK(s.target_classes.size() == 3);
  CHECK_FALSE(s.warnings.empty());
}

TEST_CASE("few-shot instances may join the gallery on request") {
  const Corpus c = corpus_of(6, 10);
  SplitOptions opt;
  opt.few_shot_in_gallery = true;
  const XShotSplit s = split_xshot(c, 2, 9, opt);
  for (std::size_t i : s.target_train)
    CHECK(std::find(s.target_gallery.begin(), s.target_gallery.end(), i) != s.target_gallery.end());
  const XShotSplit d = split_xshot(c, 2, 9);
  for (std::size_t i : d.target_train)
    CHECK(std::find(d.target_gallery.begin(), d.target_gallery.end(), i) == d.target_gallery.end());
}

TEST_CASE("invalid requests") {
  const Corpus c = corpus_of(4, 5);
  CHECK_THROWS_AS(split_xshot(c, 6, 1), ConfigError);
  CHECK_THROWS_AS(split_xshot(corpus_of(1, 5), 0, 1), ConfigError);
}
