#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace boxoffice {

inline constexpr std::size_t kDefaultObjectWidth = 2048 * 16;
inline constexpr std::size_t kDefaultMaxObjects = 20;

/// Detected-object features for one poster: `count()` rows of `width` floats.
struct PosterObjectSet {
  std::string movie_id;
  std::size_t width = 0;
  std::vector<float> values;  // row-major

  std::size_t count() const { return width == 0 ? 0 : values.size() / width; }
  std::span<const float> object(std::size_t m) const { return {values.data() + m * width, width}; }
};

using PosterLibrary = std::map<std::string, PosterObjectSet>;

struct PosterManifestEntry {
  std::string movie_id;
  std::string file;
  std::size_t count = 0;
  std::size_t width = 0;
};

/// Reads the JSONL manifest {movie_id, file, M, F} and each raw little-endian
/// float32 payload (paths relative to `dir`). Throws CorruptFileError on a
/// length mismatch and DataError on non-finite values or mixed widths.
PosterLibrary load_poster_features(const std::filesystem::path& dir, const std::filesystem::path& manifest);

/// Object set for a movie, or an empty set when the manifest has no entry.
const PosterObjectSet& objects_for(const PosterLibrary& library, const std::string& movie_id);

void write_poster_payload(const std::filesystem::path& file, std::span<const float> values);

/// Writes one payload per set into `dir` ("<movie_id>.f32") and the manifest.
void save_poster_features(const std::filesystem::path& dir, const std::filesystem::path& manifest,
                          std::span<const PosterObjectSet> sets);

}  // namespace boxoffice
