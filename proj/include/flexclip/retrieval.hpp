#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flexclip/data.hpp"
#include "flexclip/matrix.hpp"
#include "flexclip/projection.hpp"
#include "flexclip/split.hpp"

namespace flexclip::retrieval {

enum class Direction { img2txt, txt2img };
std::string to_string(Direction d);

enum class Domain { source, target };
std::string to_string(Domain d);

/// dot(q, g) / (|q| |g|). Throws ContractError for a zero vector.
Real cosine_sim(std::span<const Real> q, std::span<const Real> g);

/// A query's gallery ordered by descending similarity, ties broken by
/// ascending gallery index, with the relevance bit of each ranked item.
struct RankedList {
  std::size_t query_index = 0;
  std::vector<std::size_t> order;
  std::vector<std::uint8_t> relevant;
};

using Relevance = std::function<bool(std::size_t query, std::size_t gallery)>;

RankedList rank_gallery(std::size_t query_index, std::span<const Real> similarities,
                        const Relevance& relevance,
                        std::optional<std::size_t> excluded_gallery = std::nullopt);

/// (1/T) sum_r P(r) rel(r) over the full ranking, T = number of relevant
/// items. nullopt when nothing is relevant.
std::optional<Real> average_precision(std::span<const std::uint8_t> relevance);
inline std::optional<Real> average_precision(const RankedList& ranked) {
  return average_precision(ranked.relevant);
}

struct RetrievalReport {
  Direction direction = Direction::img2txt;
  Real map = 0;
  /// AP of every scored query, in query order.
  std::vector<Real> per_query_ap;
  std::vector<std::size_t> scored_queries;
  /// Queries without any relevant gallery item; excluded from the mean.
  std::vector<std::size_t> skipped_queries;
  std::size_t n_queries = 0;
  std::size_t n_gallery = 0;
  std::vector<std::string> warnings;

  bool operator==(const RetrievalReport&) const = default;
};

struct MeanApOptions {
  /// Drop gallery item i from query i's ranking (query set == gallery set).
  bool exclude_same_index = false;
};

/// Ranks the full gallery for every query by cosine similarity and averages
/// the per-query APs. Per-query work runs on OpenMP threads.
RetrievalReport mean_ap(const Matrix& queries, const Matrix& gallery, const Relevance& relevance,
                        Direction direction, const MeanApOptions& options = {});
RetrievalReport mean_ap(const Matrix& queries, std::span<const data::ClassId> query_labels,
                        const Matrix& gallery, std::span<const data::ClassId> gallery_labels,
                        Direction direction, const MeanApOptions& options = {});

namespace serial {
/// Single-threaded reference; bitwise identical to retrieval::mean_ap.
RetrievalReport mean_ap(const Matrix& queries, const Matrix& gallery, const Relevance& relevance,
                        Direction direction, const MeanApOptions& options = {});
}  // namespace serial

struct EvaluationReport {
  Domain domain = Domain::target;
  RetrievalReport img2txt;
  RetrievalReport txt2img;
  Real avg = 0;

  bool operator==(const EvaluationReport&) const = default;
};

using Embedder = std::function<Matrix(const Matrix&)>;

/// Embeds the domain's query and gallery sets and scores both directions:
/// image queries against the text gallery and text queries against the
/// image gallery, relevance = same class.
EvaluationReport evaluate(const Embedder& embed_image, const Embedder& embed_text,
                          const data::XShotSplit& split, const data::Corpus& corpus,
                          Domain domain = Domain::target);
EvaluationReport evaluate(const projection::ProjectionModel& model, const data::XShotSplit& split,
                          const data::Corpus& corpus, Domain domain = Domain::target);
/// Baseline: cosine ranking directly on the ingested features.
EvaluationReport evaluate_raw(const data::XShotSplit& split, const data::Corpus& corpus,
                              Domain domain = Domain::target);

nlohmann::json to_json(const RetrievalReport& r);
nlohmann::json to_json(const EvaluationReport& r);

}  // namespace flexclip::retrieval
