#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "flexclip/matrix.hpp"
#include "flexclip/tape.hpp"

namespace flexclip::binio {

// Little-endian scalar helpers. The host is assumed little-endian (checked
// at compile time in binary_io.cpp).

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);
void write_matrix(std::ostream& os, const Matrix& m);
void write_parameter(std::ostream& os, const Parameter& p);

std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);
Matrix read_matrix(std::istream& is);
Parameter read_parameter(std::istream& is);

/// Thrown on short reads and malformed payloads.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace flexclip::binio
