#include "emo/container.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "emo/errors.hpp"

namespace emo {

namespace fs = std::filesystem;

namespace {

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::missing_file, "cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

std::uint64_t fnv1a(std::span<const char> bytes, std::uint64_t state) {
  for (char c : bytes) {
    state ^= static_cast<unsigned char>(c);
    state *= 0x100000001b3ull;
  }
  return state;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void Container::put(const std::string& name, const Matrix& value) { blobs_[name] = value; }

const Matrix& Container::get(std::string_view name) const {
  const auto it = blobs_.find(std::string(name));
  if (it == blobs_.end()) throw LoadError(LoadError::Kind::shape_mismatch, "missing blob '" + std::string(name) + "'");
  return it->second;
}

std::string Container::manifest_text(std::string_view blob_file) const {
  json m = header_;
  m["format"] = kContainerFormat;
  m["version"] = kContainerVersion;
  m["kind"] = kind_;
  m["blob_file"] = blob_file;
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, value] : blobs_) {
    const std::uint64_t length = static_cast<std::uint64_t>(value.size()) * sizeof(float);
    table.push_back({{"name", name}, {"shape", {value.rows(), value.cols()}}, {"offset", offset}, {"length", length}});
    offset += length;
  }
  m["blobs"] = std::move(table);
  return m.dump(2) + "\n";
}

std::vector<char> Container::blob_bytes() const {
  std::vector<char> bytes;
  for (const auto& [name, value] : blobs_) {
    for (Index i = 0; i < value.size(); ++i) {
      const float f = static_cast<float>(value.data()[i]);
      char raw[sizeof f];
      std::memcpy(raw, &f, sizeof f);
      bytes.insert(bytes.end(), raw, raw + sizeof f);
    }
  }
  return bytes;
}

void Container::write(const fs::path& dir, std::string_view manifest_file, std::string_view blob_file) const {
  fs::create_directories(dir);
  const std::vector<char> bytes = blob_bytes();
  const std::string manifest = manifest_text(blob_file);
  write_file(dir / blob_file, bytes);
  write_file(dir / manifest_file, std::span<const char>(manifest.data(), manifest.size()));
}

std::uint64_t Container::content_hash(std::string_view blob_file) const {
  const std::string manifest = manifest_text(blob_file);
  const std::vector<char> bytes = blob_bytes();
  return fnv1a(bytes, fnv1a(std::span<const char>(manifest.data(), manifest.size())));
}

Container Container::read(const fs::path& dir, std::string_view manifest_file, std::string_view expected_kind) {
  using Kind = LoadError::Kind;
  const std::vector<char> manifest_bytes = read_file(dir / manifest_file);
  json m;
  try {
    m = json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const json::exception& e) {
    throw LoadError(Kind::bad_manifest, "manifest " + (dir / manifest_file).string() + " is not valid JSON: " + e.what());
  }
  if (!m.is_object() || m.value("format", "") != kContainerFormat) {
    throw LoadError(Kind::bad_manifest, "manifest " + (dir / manifest_file).string() + " is not an emoavatar container");
  }
  if (!m.contains("version") || !m["version"].is_number_integer() || m["version"].get<int>() != kContainerVersion) {
    throw LoadError(Kind::version_mismatch, "unsupported container version " + (m.contains("version") ? m["version"].dump() : "<none>") +
                                                " (expected " + std::to_string(kContainerVersion) + ")");
  }
  if (m.value("kind", "") != expected_kind) {
    throw LoadError(Kind::bad_manifest, "container kind '" + m.value("kind", "") + "', expected '" + std::string(expected_kind) + "'");
  }
  if (!m.contains("blob_file") || !m["blob_file"].is_string() || !m.contains("blobs") || !m["blobs"].is_array()) {
    throw LoadError(Kind::corrupt_blob_table, "manifest lacks blob_file/blobs");
  }
  const std::vector<char> blob = read_file(dir / m["blob_file"].get<std::string>());

  Container c(m["kind"].get<std::string>());
  std::uint64_t expected_offset = 0;
  for (const json& entry : m["blobs"]) {
    if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string() || !entry.contains("shape") ||
        !entry["shape"].is_array() || entry["shape"].size() != 2 || !entry.contains("offset") ||
        !entry["offset"].is_number_unsigned() || !entry.contains("length") || !entry["length"].is_number_unsigned()) {
      throw LoadError(Kind::corrupt_blob_table, "malformed blob table entry: " + entry.dump());
    }
    const std::string name = entry["name"].get<std::string>();
    const auto offset = entry["offset"].get<std::uint64_t>();
    const auto length = entry["length"].get<std::uint64_t>();
    const auto& shape = entry["shape"];
    if (!shape[0].is_number_unsigned() || !shape[1].is_number_unsigned()) {
      throw LoadError(Kind::corrupt_blob_table, "blob '" + name + "' has a non-integer shape");
    }
    const auto rows = shape[0].get<std::uint64_t>();
    const auto cols = shape[1].get<std::uint64_t>();
    if (offset != expected_offset || c.has(name)) {
      throw LoadError(Kind::corrupt_blob_table, "blob '" + name + "' overlaps or leaves a gap in the blob file");
    }
    if (length != rows * cols * sizeof(float)) {
      throw LoadError(Kind::shape_mismatch, "blob '" + name + "' length " + std::to_string(length) + " does not match shape [" +
                                                std::to_string(rows) + "x" + std::to_string(cols) + "]");
    }
    if (offset + length > blob.size()) {
      throw LoadError(Kind::truncated_blob, "blob '" + name + "' extends past the end of the blob file (truncated)");
    }
    Matrix value(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < value.size(); ++i) {
      float f;
      std::memcpy(&f, blob.data() + offset + static_cast<std::uint64_t>(i) * sizeof f, sizeof f);
      value.data()[i] = static_cast<double>(f);
    }
    c.blobs_.emplace(name, std::move(value));
    expected_offset = offset + length;
  }
  if (expected_offset != blob.size()) {
    throw LoadError(Kind::corrupt_blob_table, "blob file has " + std::to_string(blob.size() - expected_offset) + " unreferenced bytes");
  }
  json header = m;
  for (const char* key : {"format", "version", "kind", "blob_file", "blobs"}) header.erase(key);
  c.header_ = std::move(header);
  return c;
}

}  // namespace emo
