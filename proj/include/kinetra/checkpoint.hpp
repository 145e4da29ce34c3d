#pragma once

#include <string>

#include "kinetra/symnet.hpp"

namespace kinetra {

// Plain-text checkpoint: one `key value...` line per field, every float
// printed with %.17g so a save/load cycle reproduces the parameters bit for
// bit.  The loader consumes lines in the exact order the writer emits them
// and rejects anything unexpected.
void save_checkpoint(const std::string& path, const ModelParams& mp);
ModelParams load_checkpoint(const std::string& path);

}  // namespace kinetra
