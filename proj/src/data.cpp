#include "flexclip/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "flexclip/binary_io.hpp"

namespace flexclip::data {

namespace fs = std::filesystem;
using Kind = IngestError::Kind;

Instance Corpus::instance(std::size_t i) const {
  Instance inst;
  inst.image.assign(image.row(i).begin(), image.row(i).end());
  inst.text.assign(text.row(i).begin(), text.row(i).end());
  inst.attr = class_attrs.at(labels[i]);
  inst.label = labels[i];
  return inst;
}

std::vector<ClassId> Corpus::classes() const {
  std::set<ClassId> s(labels.begin(), labels.end());
  return {s.begin(), s.end()};
}

Matrix Corpus::attrs_for(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), dim());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& a = class_attrs.at(labels.at(indices[i]));
    std::copy(a.begin(), a.end(), out.row(i).begin());
  }
  return out;
}

Corpus Corpus::subset(std::span<const std::size_t> indices) const {
  Corpus out;
  out.name = name;
  out.image = image.gather_rows(indices);
  out.text = text.gather_rows(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  out.class_attrs = class_attrs;
  return out;
}

void Corpus::validate() const {
  if (image.rows() != labels.size() || text.rows() != labels.size()) {
    std::ostringstream os;
    os << "instance count mismatch: image " << image.rows() << ", text " << text.rows()
       << ", labels " << labels.size();
    throw IngestError(Kind::dimension_mismatch, os.str());
  }
  if (image.cols() != text.cols()) {
    throw IngestError(Kind::dimension_mismatch, "image dim " + std::to_string(image.cols()) +
                                                    " != text dim " + std::to_string(text.cols()));
  }
  for (const auto& [cls, attr] : class_attrs) {
    if (attr.size() != image.cols()) {
      throw IngestError(Kind::dimension_mismatch,
                        "attribute dim " + std::to_string(attr.size()) + " for class " +
                            std::to_string(cls) + " != feature dim " +
                            std::to_string(image.cols()));
    }
    for (Real v : attr) {
      if (!std::isfinite(v)) {
        throw IngestError(Kind::non_finite, "non-finite attribute for class " + std::to_string(cls));
      }
    }
  }
  for (ClassId label : labels) {
    if (!class_attrs.contains(label)) {
      throw IngestError(Kind::missing_attribute, "missing attribute for class " + std::to_string(label));
    }
  }
  if (!image.all_finite()) throw IngestError(Kind::non_finite, "non-finite image feature");
  if (!text.all_finite()) throw IngestError(Kind::non_finite, "non-finite text feature");
}

Corpus concat(const Corpus& a, const Corpus& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.dim() != b.dim()) {
    throw IngestError(Kind::dimension_mismatch, "cannot concatenate corpora of dims " +
                                                    std::to_string(a.dim()) + " and " +
                                                    std::to_string(b.dim()));
  }
  auto stack = [](const Matrix& x, const Matrix& y) {
    std::vector<Real> v(x.values().begin(), x.values().end());
    v.insert(v.end(), y.values().begin(), y.values().end());
    return Matrix(x.rows() + y.rows(), x.cols(), std::move(v));
  };
  Corpus out;
  out.name = a.name;
  out.image = stack(a.image, b.image);
  out.text = stack(a.text, b.text);
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.class_attrs = a.class_attrs;
  out.class_attrs.insert(b.class_attrs.begin(), b.class_attrs.end());
  return out;
}

Matrix read_embeddings(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(Kind::io, "cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kEmbeddingMagic, 8) != 0) {
    throw IngestError(Kind::bad_magic, path.string() + ": not a FLEXEMB1 embedding file");
  }
  try {
    const std::uint32_t n = binio::read_u32(in);
    const std::uint32_t d = binio::read_u32(in);
    Matrix m(n, d);
    for (Real& v : m.values()) {
      const float f = binio::read_f32(in);
      if (!std::isfinite(f)) throw IngestError(Kind::non_finite, path.string() + ": non-finite value");
      v = static_cast<Real>(f);
    }
    if (in.peek() != std::ifstream::traits_type::eof()) {
      throw IngestError(Kind::format, path.string() + ": trailing bytes after " +
                                          std::to_string(n) + "x" + std::to_string(d) + " payload");
    }
    return m;
  } catch (const binio::FormatError& e) {
    throw IngestError(Kind::format, path.string() + ": " + e.what());
  }
}

void write_embeddings(const fs::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestError(Kind::io, "cannot write " + path.string());
  out.write(kEmbeddingMagic, 8);
  binio::write_u32(out, static_cast<std::uint32_t>(m.rows()));
  binio::write_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Real v : m.values()) binio::write_f32(out, static_cast<float>(v));
  if (!out) throw IngestError(Kind::io, "write failed for " + path.string());
}

namespace {

std::vector<ClassId> read_int_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(Kind::io, "cannot open " + path.string());
  std::vector<ClassId> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(line, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos == 0 || pos != line.size()) {
      throw IngestError(Kind::format, path.string() + ":" + std::to_string(lineno) +
                                          ": expected one integer, got '" + line + "'");
    }
    out.push_back(static_cast<ClassId>(v));
  }
  return out;
}

void write_int_lines(const fs::path& path, std::span<const ClassId> values) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestError(Kind::io, "cannot write " + path.string());
  for (ClassId v : values) out << v << '\n';
  if (!out) throw IngestError(Kind::io, "write failed for " + path.string());
}

}  // namespace

CorpusPaths CorpusPaths::in_dir(const fs::path& dir) {
  return {dir / "image.emb", dir / "text.emb", dir / "labels.txt", dir / "attrs.emb",
          dir / "attr_classes.txt"};
}

Corpus load_corpus(const CorpusPaths& paths) {
  Corpus c;
  c.name = paths.image.parent_path().filename().string();
  c.image = read_embeddings(paths.image);
  c.text = read_embeddings(paths.text);
  c.labels = read_int_lines(paths.labels);
  const Matrix attrs = read_embeddings(paths.attrs);
  const std::vector<ClassId> attr_ids = read_int_lines(paths.attr_classes);
  if (attr_ids.size() != attrs.rows()) {
    throw IngestError(Kind::dimension_mismatch,
                      "attribute file has " + std::to_string(attrs.rows()) + " rows but " +
                          std::to_string(attr_ids.size()) + " class ids");
  }
  for (std::size_t i = 0; i < attr_ids.size(); ++i) {
    auto [it, inserted] =
        c.class_attrs.emplace(attr_ids[i], std::vector<Real>(attrs.row(i).begin(), attrs.row(i).end()));
    if (!inserted) {
      throw IngestError(Kind::format, "duplicate attribute row for class " + std::to_string(attr_ids[i]));
    }
  }
  c.validate();
  return c;
}

void write_corpus(const Corpus& corpus, const CorpusPaths& paths) {
  corpus.validate();
  write_embeddings(paths.image, corpus.image);
  write_embeddings(paths.text, corpus.text);
  write_int_lines(paths.labels, corpus.labels);
  Matrix attrs(corpus.class_attrs.size(), corpus.dim());
  std::vector<ClassId> ids;
  std::size_t r = 0;
  for (const auto& [cls, attr] : corpus.class_attrs) {
    ids.push_back(cls);
    std::copy(attr.begin(), attr.end(), attrs.row(r++).begin());
  }
  write_embeddings(paths.attrs, attrs);
  write_int_lines(paths.attr_classes, ids);
}

}  // namespace flexclip::data
