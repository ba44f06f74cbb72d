#include "boxoffice/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "boxoffice/error.hpp"
#include "boxoffice/random.hpp"

namespace boxoffice {

using nlohmann::json;

std::string checksum_bytes(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path blob_path(const std::filesystem::path& manifest_path) {
  auto p = manifest_path;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

std::string checksum_file(const std::filesystem::path& path) { return checksum_bytes(read_all(path)); }

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& manifest_path, const Encoder& encoder, const json& metadata) {
  std::string blob;
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& [name, m] : encoder.params().named()) {
    // Column-major order, as Eigen stores it.
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(m->data()[i]);
      for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
    tensors.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}, {"offset", offset}});
    offset += static_cast<std::size_t>(m->size());
  }
  const auto blob_file = blob_path(manifest_path);
  json manifest = {{"format", "boxoffice-checkpoint"},
                   {"version", 1},
                   {"config", encoder.config().to_json()},
                   {"blob", blob_file.filename().string()},
                   {"values", offset},
                   {"checksum", checksum_bytes(blob)},
                   {"tensors", tensors},
                   {"metadata", metadata}};
  write_file_atomic(blob_file, blob);
  write_file_atomic(manifest_path, manifest.dump(2));
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  json manifest;
  try {
    manifest = json::parse(read_all(manifest_path));
  } catch (const json::exception& e) {
    throw CorruptFileError("checkpoint manifest '" + manifest_path.string() + "': " + e.what());
  }
  if (manifest.value("format", "") != "boxoffice-checkpoint") {
    throw CorruptFileError("'" + manifest_path.string() + "' is not a checkpoint manifest");
  }
  const auto blob_file = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  const std::string blob = read_all(blob_file);
  if (checksum_bytes(blob) != manifest.at("checksum").get<std::string>()) {
    throw CorruptFileError("checkpoint blob '" + blob_file.string() + "' fails its checksum");
  }
  const auto values = manifest.at("values").get<std::size_t>();
  if (blob.size() != values * 8) throw CorruptFileError("checkpoint blob '" + blob_file.string() + "' has the wrong size");

  Checkpoint ck{Encoder(EncoderConfig::from_json(manifest.at("config")), 0), manifest.value("metadata", json::object())};
  bool has_head = false;
  for (const auto& t : manifest.at("tensors")) has_head = has_head || t.at("name") == "head.w";
  if (has_head) ck.encoder.init_head(0.0);

  auto named = ck.encoder.params().named();
  std::map<std::string, Mat*> by_name(named.begin(), named.end());
  std::size_t restored = 0;
  for (const auto& t : manifest.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ShapeError("checkpoint tensor '" + name + "' is not part of the model");
    Mat& m = *it->second;
    if (m.rows() != t.at("rows").get<Eigen::Index>() || m.cols() != t.at("cols").get<Eigen::Index>()) {
      throw ShapeError("checkpoint tensor '" + name + "' has a shape that does not match the configuration");
    }
    const auto offset = t.at("offset").get<std::size_t>();
    if (offset + static_cast<std::size_t>(m.size()) > values) throw CorruptFileError("checkpoint tensor '" + name + "' overruns the blob");
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint64_t bits = 0;
      const std::size_t base = (offset + static_cast<std::size_t>(i)) * 8;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[base + b])) << (8 * b);
      m.data()[i] = std::bit_cast<double>(bits);
    }
    ++restored;
  }
  if (restored != named.size()) throw CorruptFileError("checkpoint is missing tensors");
  return ck;
}

}  // namespace boxoffice
