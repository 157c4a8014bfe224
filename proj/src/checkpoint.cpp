#include "flexclip/checkpoint.hpp"

#include <cstring>

#include "flexclip/binary_io.hpp"

namespace flexclip {

void write_checkpoint_header(std::ostream& os, CheckpointKind kind) {
  os.write(kCheckpointMagic, 8);
  binio::write_u32(os, kCheckpointVersion);
  binio::write_u32(os, static_cast<std::uint32_t>(kind));
}

void read_checkpoint_header(std::istream& is, CheckpointKind expected) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic bytes)");
  }
  try {
    const std::uint32_t version = binio::read_u32(is);
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint version " + std::to_string(version) +
                            " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint32_t kind = binio::read_u32(is);
    if (kind != static_cast<std::uint32_t>(expected)) {
      throw CheckpointError("checkpoint holds payload kind " + std::to_string(kind) +
                            ", expected " + std::to_string(static_cast<std::uint32_t>(expected)));
    }
  } catch (const binio::FormatError& e) {
    throw CheckpointError(std::string("truncated checkpoint header: ") + e.what());
  }
}

}  // namespace flexclip
