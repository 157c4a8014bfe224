#include "flexclip/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "flexclip/errors.hpp"
#include "flexclip/kernels.hpp"

namespace flexclip::retrieval {

std::string to_string(Direction d) { return d == Direction::img2txt ? "Img2Txt" : "Txt2Img"; }
std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Real cosine_sim(std::span<const Real> q, std::span<const Real> g) {
  if (q.size() != g.size()) {
    throw DimensionError("cosine_sim: lengths " + std::to_string(q.size()) + " and " +
                         std::to_string(g.size()));
  }
  Real dot = 0, qq = 0, gg = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    dot += q[i] * g[i];
    qq += q[i] * q[i];
    gg += g[i] * g[i];
  }
  if (qq == 0 || gg == 0) throw ContractError("cosine similarity of a zero vector");
  return dot / (std::sqrt(qq) * std::sqrt(gg));
}

RankedList rank_gallery(std::size_t query_index, std::span<const Real> sim,
                        const Relevance& relevance, std::optional<std::size_t> excluded) {
  RankedList out;
  out.query_index = query_index;
  out.order.reserve(sim.size());
  for (std::size_t j = 0; j < sim.size(); ++j)
    if (!excluded || *excluded != j) out.order.push_back(j);
  std::sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
    return sim[a] > sim[b] || (sim[a] == sim[b] && a < b);
  });
  out.relevant.reserve(out.order.size());
  for (std::size_t j : out.order) out.relevant.push_back(relevance(query_index, j) ? 1 : 0);
  return out;
}

std::optional<Real> average_precision(std::span<const std::uint8_t> relevance) {
  std::size_t hits = 0;
  Real acc = 0;
  for (std::size_t r = 0; r < relevance.size(); ++r) {
    if (relevance[r] == 0) continue;
    ++hits;
    acc += static_cast<Real>(hits) / static_cast<Real>(r + 1);
  }
  if (hits == 0) return std::nullopt;
  return acc / static_cast<Real>(hits);
}

namespace {

void check_inputs(const Matrix& queries, const Matrix& gallery) {
  if (queries.rows() == 0 || gallery.rows() == 0) {
    throw ContractError("mean_ap needs nonempty query and gallery sets");
  }
  if (queries.cols() != gallery.cols()) {
    throw DimensionError("mean_ap: queries " + shape_string(queries) + " vs gallery " +
                         shape_string(gallery));
  }
  auto nonzero = [](std::span<const Real> r) {
    return std::any_of(r.begin(), r.end(), [](Real v) { return v != 0; });
  };
  for (std::size_t i = 0; i < queries.rows(); ++i)
    if (!nonzero(queries.row(i))) throw ContractError("query " + std::to_string(i) + " is a zero vector");
  for (std::size_t j = 0; j < gallery.rows(); ++j)
    if (!nonzero(gallery.row(j))) throw ContractError("gallery item " + std::to_string(j) + " is a zero vector");
}

RetrievalReport assemble(Direction direction, std::size_t n_queries, std::size_t n_gallery,
                         const std::vector<std::optional<Real>>& ap) {
  RetrievalReport report;
  report.direction = direction;
  report.n_queries = n_queries;
  report.n_gallery = n_gallery;
  Real total = 0;
  for (std::size_t i = 0; i < ap.size(); ++i) {
    if (ap[i]) {
      report.scored_queries.push_back(i);
      report.per_query_ap.push_back(*ap[i]);
      total += *ap[i];
    } else {
      report.skipped_queries.push_back(i);
    }
  }
  if (!report.skipped_queries.empty()) {
    report.warnings.push_back(std::to_string(report.skipped_queries.size()) +
                              " queries have no relevant gallery item and were excluded");
  }
  report.map = report.per_query_ap.empty() ? Real(0)
                                           : total / static_cast<Real>(report.per_query_ap.size());
  return report;
}

std::optional<std::size_t> excluded_for(std::size_t i, const MeanApOptions& options) {
  return options.exclude_same_index ? std::optional<std::size_t>(i) : std::nullopt;
}

}  // namespace

RetrievalReport mean_ap(const Matrix& queries, const Matrix& gallery, const Relevance& relevance,
                        Direction direction, const MeanApOptions& options) {
  check_inputs(queries, gallery);
  Matrix sim;
  kernels::omp::cosine_matrix(queries, gallery, sim);
  std::vector<std::optional<Real>> ap(queries.rows());
  const auto nq = static_cast<std::int64_t>(queries.rows());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t q = 0; q < nq; ++q) {
    const auto i = static_cast<std::size_t>(q);
    ap[i] = average_precision(rank_gallery(i, sim.row(i), relevance, excluded_for(i, options)));
  }
  return assemble(direction, queries.rows(), gallery.rows(), ap);
}

RetrievalReport serial::mean_ap(const Matrix& queries, const Matrix& gallery,
                                const Relevance& relevance, Direction direction,
                                const MeanApOptions& options) {
  check_inputs(queries, gallery);
  Matrix sim;
  kernels::serial::cosine_matrix(queries, gallery, sim);
  std::vector<std::optional<Real>> ap(queries.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    ap[i] = average_precision(rank_gallery(i, sim.row(i), relevance, excluded_for(i, options)));
  }
  return assemble(direction, queries.rows(), gallery.rows(), ap);
}

RetrievalReport mean_ap(const Matrix& queries, std::span<const data::ClassId> query_labels,
                        const Matrix& gallery, std::span<const data::ClassId> gallery_labels,
                        Direction direction, const MeanApOptions& options) {
  if (query_labels.size() != queries.rows() || gallery_labels.size() != gallery.rows()) {
    throw DimensionError("mean_ap: label counts do not match embedding rows");
  }
  return mean_ap(
      queries, gallery,
      [query_labels, gallery_labels](std::size_t q, std::size_t g) {
        return query_labels[q] == gallery_labels[g];
      },
      direction, options);
}

EvaluationReport evaluate(const Embedder& embed_image, const Embedder& embed_text,
                          const data::XShotSplit& split, const data::Corpus& corpus,
                          Domain domain) {
  const auto& q_idx = domain == Domain::target ? split.target_query : split.source_query;
  const auto& g_idx = domain == Domain::target ? split.target_gallery : split.source_gallery;
  std::vector<data::ClassId> q_labels, g_labels;
  for (std::size_t i : q_idx) q_labels.push_back(corpus.labels.at(i));
  for (std::size_t i : g_idx) g_labels.push_back(corpus.labels.at(i));

  const Matrix q_img = embed_image(corpus.image.gather_rows(q_idx));
  const Matrix q_txt = embed_text(corpus.text.gather_rows(q_idx));
  const Matrix g_img = embed_image(corpus.image.gather_rows(g_idx));
  const Matrix g_txt = embed_text(corpus.text.gather_rows(g_idx));

  EvaluationReport report;
  report.domain = domain;
  report.img2txt = mean_ap(q_img, q_labels, g_txt, g_labels, Direction::img2txt);
  report.txt2img = mean_ap(q_txt, q_labels, g_img, g_labels, Direction::txt2img);
  report.avg = (report.img2txt.map + report.txt2img.map) / Real(2);
  return report;
}

EvaluationReport evaluate(const projection::ProjectionModel& model, const data::XShotSplit& split,
                          const data::Corpus& corpus, Domain domain) {
  if (corpus.dim() != model.dim()) {
    throw DimensionError("corpus dim " + std::to_string(corpus.dim()) +
                         " does not match model dim " + std::to_string(model.dim()));
  }
  return evaluate([&](const Matrix& x) { return model.embed_image(x); },
                  [&](const Matrix& x) { return model.embed_text(x); }, split, corpus, domain);
}

EvaluationReport evaluate_raw(const data::XShotSplit& split, const data::Corpus& corpus,
                              Domain domain) {
  const auto identity = [](const Matrix& x) { return x; };
  return evaluate(identity, identity, split, corpus, domain);
}

nlohmann::json to_json(const RetrievalReport& r) {
  return nlohmann::json{{"direction", to_string(r.direction)},
                        {"map", r.map},
                        {"per_query_ap", r.per_query_ap},
                        {"scored_queries", r.scored_queries},
                        {"skipped_queries", r.skipped_queries},
                        {"n_queries", r.n_queries},
                        {"n_gallery", r.n_gallery},
                        {"warnings", r.warnings}};
}

nlohmann::json to_json(const EvaluationReport& r) {
  return nlohmann::json{{"domain", to_string(r.domain)},
                        {"img2txt", to_json(r.img2txt)},
                        {"txt2img", to_json(r.txt2img)},
                        {"avg", r.avg}};
}

}  // namespace flexclip::retrieval
