#pragma once

#include <filesystem>
#include <string>

#include "aem/sim.hpp"

namespace aem::sim {

// Layout: manifest.json (task spec, vocab, split listing, per-segment blob
// byte offsets, CRC-32 checksums), features.bin / patches.bin (little-endian
// f32, row-major; crops live in features.bin after each segment's frames),
// graphs.json (scene-graph records).
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);

// Verifies checksums and all dataset invariants (including OCC) on load.
Dataset read_dataset(const std::filesystem::path& dir);

// Field-for-field equality, used by round-trip tests.
bool datasets_equal(const Dataset& a, const Dataset& b, std::string* why = nullptr);

uint32_t crc32_of_file(const std::filesystem::path& path);

}  // namespace aem::sim
