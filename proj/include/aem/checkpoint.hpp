#pragma once

#include <filesystem>

#include "aem/model.hpp"

namespace aem::model {

// Single file: one JSON header line (names, shapes, frozen flags, config
// hash, CRC-32 of the payload) followed by the raw little-endian f64 payload,
// row-major, in header order. Save -> load -> save is byte-identical.
void save_checkpoint(const ModelState& m, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace aem::model
