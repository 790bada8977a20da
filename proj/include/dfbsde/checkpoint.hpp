#pragma once

// Parameter checkpoints: a JSON manifest plus one flat binary blob.
//
// Manifest (`<name>.json`):
//   {
//     "format": "dfbsde-checkpoint", "version": 1,
//     "dtype": "float64-le", "blob": "<name>.bin",
//     "params": [ {"name": "...", "shape": [rows, cols], "offset": <byte offset>}, ... ],
//     "metadata": { ... }
//   }
// Blob: every parameter's values in row-major order as IEEE-754 binary64,
// little-endian, concatenated in manifest order with no padding.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfbsde/autodiff.hpp"
#include "dfbsde/errors.hpp"

namespace dfbsde::io {

namespace detail {

inline void put_f64_le(std::vector<char>& buf, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_f64_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

inline void save_checkpoint(const std::filesystem::path& manifest_path, const ad::ParamStore& store,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  const auto blob_path = blob_path_for(manifest_path);
  nlohmann::json manifest;
  manifest["format"] = "dfbsde-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float64-le";
  manifest["blob"] = blob_path.filename().string();
  manifest["params"] = nlohmann::json::array();
  std::vector<char> blob;
  blob.reserve(store.scalar_count() * 8);
  for (const auto& p : store.params()) {
    manifest["params"].push_back({{"name", p.name},
                                  {"shape", {p.value.rows(), p.value.cols()}},
                                  {"offset", static_cast<std::uint64_t>(blob.size())}});
    for (Eigen::Index i = 0; i < p.value.size(); ++i) detail::put_f64_le(blob, p.value.data()[i]);
  }
  manifest["metadata"] = metadata;

  if (manifest_path.has_parent_path()) std::filesystem::create_directories(manifest_path.parent_path());
  std::ofstream b(blob_path, std::ios::binary | std::ios::trunc);
  if (!b) throw CheckpointError("cannot write " + blob_path.string());
  b.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream m(manifest_path, std::ios::trunc);
  if (!m) throw CheckpointError("cannot write " + manifest_path.string());
  m << manifest.dump(2) << '\n';
}

inline nlohmann::json read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream m(manifest_path);
  if (!m) throw CheckpointError("cannot open checkpoint manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "dfbsde-checkpoint" || manifest.value("version", 0) != 1) {
    throw CheckpointError("not a dfbsde checkpoint (format/version): " + manifest_path.string());
  }
  return manifest;
}

/// Loads values into an existing store whose parameter names and shapes must
/// match the manifest exactly. Returns the manifest metadata.
inline nlohmann::json load_checkpoint(const std::filesystem::path& manifest_path, ad::ParamStore& store) {
  const nlohmann::json manifest = read_manifest(manifest_path);
  const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream b(blob_path, std::ios::binary);
  if (!b) throw CheckpointError("cannot open checkpoint blob " + blob_path.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());

  const auto& entries = manifest.at("params");
  if (entries.size() != static_cast<std::size_t>(store.size())) {
    throw CheckpointError("checkpoint has " + std::to_string(entries.size()) + " parameters, model expects " +
                              std::to_string(store.size()),
                          true);
  }
  for (const auto& e : entries) {
    const auto name = e.at("name").get<std::string>();
    const int id = store.find(name);
    if (id < 0) throw CheckpointError("checkpoint parameter not in model: " + name, true);
    auto& v = store.value(id);
    const auto rows = e.at("shape").at(0).get<Eigen::Index>();
    const auto cols = e.at("shape").at(1).get<Eigen::Index>();
    if (rows != v.rows() || cols != v.cols()) {
      throw CheckpointError("shape mismatch for " + name + ": checkpoint " + std::to_string(rows) + "x" +
                                std::to_string(cols) + ", model " + std::to_string(v.rows()) + "x" +
                                std::to_string(v.cols()),
                            true);
    }
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto bytes = static_cast<std::uint64_t>(rows * cols) * 8;
    if (offset + bytes > blob.size()) throw CheckpointError("checkpoint blob truncated at " + name);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v.data()[i] = detail::get_f64_le(blob.data() + offset + static_cast<std::uint64_t>(i) * 8);
    }
  }
  return manifest.value("metadata", nlohmann::json::object());
}

}  // namespace dfbsde::io
