#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace flexclip {

// Every checkpoint starts with "FLEXCKPT", a u32 format version and a u32
// payload kind.
inline constexpr char kCheckpointMagic[8] = {'F', 'L', 'E', 'X', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t { vae_gan = 1, projection = 2 };

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint_header(std::ostream& os, CheckpointKind kind);
/// Throws CheckpointError on bad magic, a version other than
/// kCheckpointVersion (naming both), or a different kind.
void read_checkpoint_header(std::istream& is, CheckpointKind expected);

}  // namespace flexclip
