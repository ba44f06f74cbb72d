#include "boxoffice/posters.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "boxoffice/error.hpp"

namespace boxoffice {

using nlohmann::json;

namespace {

float decode_le_float(const unsigned char* p) {
  std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                       (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

void encode_le_float(float v, unsigned char* p) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  p[0] = static_cast<unsigned char>(bits);
  p[1] = static_cast<unsigned char>(bits >> 8);
  p[2] = static_cast<unsigned char>(bits >> 16);
  p[3] = static_cast<unsigned char>(bits >> 24);
}

}  // namespace

PosterLibrary load_poster_features(const std::filesystem::path& dir, const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open poster manifest '" + manifest.string() + "'");

  std::vector<PosterManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      PosterManifestEntry e;
      e.movie_id = j.at("movie_id").get<std::string>();
      e.file = j.at("file").get<std::string>();
      e.count = j.at("M").get<std::size_t>();
      e.width = j.at("F").get<std::size_t>();
      entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError(manifest.string() + " line " + std::to_string(line_no) + ": " + ex.what());
    }
  }

  PosterLibrary library;
  std::size_t width = 0;
  for (const auto& e : entries) {
    if (library.contains(e.movie_id)) throw ConflictError("poster manifest lists '" + e.movie_id + "' twice");
    PosterObjectSet set;
    set.movie_id = e.movie_id;
    set.width = e.width;
    if (e.count > 0) {
      if (e.width == 0) throw DataError("poster '" + e.movie_id + "' has objects but F = 0");
      if (width != 0 && width != e.width) {
        throw DataError("poster '" + e.movie_id + "' has width " + std::to_string(e.width) +
                        ", corpus width is " + std::to_string(width));
      }
      width = e.width;
      const std::filesystem::path file = dir / e.file;
      std::ifstream payload(file, std::ios::binary);
      if (!payload) throw IoError("cannot open poster payload '" + file.string() + "'");
      std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(payload)), std::istreambuf_iterator<char>());
      const std::size_t expected = e.count * e.width * 4;
      if (bytes.size() != expected) {
        throw CorruptFileError("poster payload '" + file.string() + "' has " + std::to_string(bytes.size()) +
                               " bytes, expected " + std::to_string(expected));
      }
      set.values.resize(e.count * e.width);
      for (std::size_t i = 0; i < set.values.size(); ++i) {
        set.values[i] = decode_le_float(bytes.data() + 4 * i);
        if (!std::isfinite(set.values[i])) {
          throw DataError("poster payload '" + file.string() + "' contains a non-finite value at index " +
                          std::to_string(i));
        }
      }
    }
    library.emplace(e.movie_id, std::move(set));
  }
  return library;
}

const PosterObjectSet& objects_for(const PosterLibrary& library, const std::string& movie_id) {
  static const PosterObjectSet kEmpty{};
  const auto it = library.find(movie_id);
  return it == library.end() ? kEmpty : it->second;
}

void write_poster_payload(const std::filesystem::path& file, std::span<const float> values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) encode_le_float(values[i], bytes.data() + 4 * i);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write poster payload '" + file.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void save_poster_features(const std::filesystem::path& dir, const std::filesystem::path& manifest,
                          std::span<const PosterObjectSet> sets) {
  std::filesystem::create_directories(dir);
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write poster manifest '" + manifest.string() + "'");
  for (const auto& set : sets) {
    const std::string file = set.movie_id + ".f32";
    write_poster_payload(dir / file, set.values);
    out << json{{"movie_id", set.movie_id}, {"file", file}, {"M", set.count()}, {"F", set.width}}.dump() << '\n';
  }
}

}  // namespace boxoffice
