#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "flexclip/matrix.hpp"

namespace flexclip::data {

using ClassId = std::int32_t;

/// One paired sample (image feature, text feature, class attribute, label).
struct Instance {
  std::vector<Real> image;
  std::vector<Real> text;
  std::vector<Real> attr;
  ClassId label = 0;
};

/// Paired image/text features stored column-wise: row i of `image` and
/// `text` is instance i, labelled `labels[i]`. Every label has an entry in
/// `class_attrs`, and all three feature widths are equal.
struct Corpus {
  std::string name;
  Matrix image;
  Matrix text;
  std::vector<ClassId> labels;
  std::map<ClassId, std::vector<Real>> class_attrs;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return image.cols(); }
  Instance instance(std::size_t i) const;
  std::vector<ClassId> classes() const;

  /// Attribute rows for the given instances, in order.
  Matrix attrs_for(std::span<const std::size_t> indices) const;
  Corpus subset(std::span<const std::size_t> indices) const;

  /// Throws IngestError if the invariants above do not hold.
  void validate() const;

  bool operator==(const Corpus&) const = default;
};

/// Concatenates two corpora over the same feature space; attribute maps are merged.
Corpus concat(const Corpus& a, const Corpus& b);

class IngestError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, format, dimension_mismatch, missing_attribute, non_finite };
  IngestError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// On-disk embedding file: "FLEXEMB1", u32 n, u32 d, then n*d little-endian
// float32 row-major.
inline constexpr char kEmbeddingMagic[8] = {'F', 'L', 'E', 'X', 'E', 'M', 'B', '1'};

Matrix read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const Matrix& m);

/// The five files that make up a corpus on disk.
struct CorpusPaths {
  std::filesystem::path image;         // embedding file
  std::filesystem::path text;          // embedding file
  std::filesystem::path labels;        // one integer per line
  std::filesystem::path attrs;         // embedding file, one row per class
  std::filesystem::path attr_classes;  // class id of each attrs row, one per line

  /// image.emb, text.emb, labels.txt, attrs.emb, attr_classes.txt under `dir`.
  static CorpusPaths in_dir(const std::filesystem::path& dir);
};

Corpus load_corpus(const CorpusPaths& paths);
void write_corpus(const Corpus& corpus, const CorpusPaths& paths);

}  // namespace flexclip::data
