#include "flexclip/binary_io.hpp"

#include <bit>
#include <cstring>

namespace flexclip::binio {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; add byte swapping for this host");

namespace {

template <class T>
void put(std::ostream& os, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <class T>
T get(std::istream& is) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) throw FormatError("unexpected end of file");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

// Guards against absurd allocations from corrupt headers.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put(os, v); }
void write_f32(std::ostream& os, float v) { put(os, v); }
void write_f64(std::ostream& os, double v) { put(os, v); }

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_matrix(std::ostream& os, const Matrix& m) {
  write_u64(os, m.rows());
  write_u64(os, m.cols());
  for (Real v : m.values()) write_f64(os, static_cast<double>(v));
}

void write_parameter(std::ostream& os, const Parameter& p) {
  write_string(os, p.name);
  write_matrix(os, p.value);
  write_matrix(os, p.adam_m);
  write_matrix(os, p.adam_v);
  write_u64(os, p.step_count);
}

std::uint32_t read_u32(std::istream& is) { return get<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return get<std::uint64_t>(is); }
float read_f32(std::istream& is) { return get<float>(is); }
double read_f64(std::istream& is) { return get<double>(is); }

std::string read_string(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  if (n > kMaxElements) throw FormatError("string length out of range");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("unexpected end of file");
  return s;
}

Matrix read_matrix(std::istream& is) {
  const std::uint64_t r = read_u64(is);
  const std::uint64_t c = read_u64(is);
  if (r > kMaxElements || c > kMaxElements || r * c > kMaxElements) {
    throw FormatError("matrix shape out of range");
  }
  std::vector<Real> values(r * c);
  for (Real& v : values) v = static_cast<Real>(read_f64(is));
  return Matrix(r, c, std::move(values));
}

Parameter read_parameter(std::istream& is) {
  Parameter p;
  p.name = read_string(is);
  p.value = read_matrix(is);
  p.adam_m = read_matrix(is);
  p.adam_v = read_matrix(is);
  p.step_count = read_u64(is);
  p.grad = Matrix(p.value.rows(), p.value.cols());
  if (!p.adam_m.same_shape(p.value) || !p.adam_v.same_shape(p.value)) {
    throw FormatError("optimizer moments do not match parameter " + p.name);
  }
  return p;
}

}  // namespace flexclip::binio
