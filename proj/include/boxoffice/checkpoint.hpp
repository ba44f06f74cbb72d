#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "boxoffice/encoder.hpp"

namespace boxoffice {

/// A saved model: `<stem>.json` holds the manifest (config, tensor names,
/// shapes, offsets, checksum, plus caller metadata) and `<stem>.bin` the
/// little-endian float64 values. Both files are written to temporaries and
/// renamed into place.
struct Checkpoint {
  Encoder encoder;
  nlohmann::json metadata;
};

void save_checkpoint(const std::filesystem::path& manifest_path, const Encoder& encoder,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Throws CorruptFileError on a checksum or size mismatch and ShapeError when
/// a stored tensor does not fit the configuration.
Checkpoint load_checkpoint(const std::filesystem::path& manifest_path);

/// FNV-1a over raw bytes, as a 16-digit hex string.
std::string checksum_bytes(std::string_view bytes);
std::string checksum_file(const std::filesystem::path& path);

/// Writes `contents` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace boxoffice
