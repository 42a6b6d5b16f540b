#pragma once

// Manifest + blob container shared by datasets and checkpoints: a UTF-8 JSON
// manifest describing named tensors, and one header-less little-endian f32
// file holding them back to back. Shapes and byte offsets live only in the
// manifest.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "emo/autodiff.hpp"

namespace emo {

using Matrix = ad::Matrix;
using json = nlohmann::json;

inline constexpr int kContainerVersion = 1;
inline constexpr std::string_view kContainerFormat = "emoavatar";

class Container {
 public:
  explicit Container(std::string kind = {}) : kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

  /// Free-form metadata stored next to the blob table.
  json& header() { return header_; }
  const json& header() const { return header_; }

  void put(const std::string& name, const Matrix& value);
  bool has(std::string_view name) const { return blobs_.contains(std::string(name)); }
  /// Throws LoadError(shape_mismatch) if missing.
  const Matrix& get(std::string_view name) const;
  const std::map<std::string, Matrix>& blobs() const { return blobs_; }

  /// Serialised forms, exactly as written to disk.
  std::string manifest_text(std::string_view blob_file) const;
  std::vector<char> blob_bytes() const;

  void write(const std::filesystem::path& dir, std::string_view manifest_file, std::string_view blob_file) const;
  /// Validates the manifest and blob table; throws LoadError with a distinct kind per failure.
  static Container read(const std::filesystem::path& dir, std::string_view manifest_file, std::string_view expected_kind);

  /// FNV-1a over manifest text and blob bytes.
  std::uint64_t content_hash(std::string_view blob_file) const;

 private:
  std::string kind_;
  json header_ = json::object();
  std::map<std::string, Matrix> blobs_;
};

std::uint64_t fnv1a(std::span<const char> bytes, std::uint64_t state = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t v);

}  // namespace emo
