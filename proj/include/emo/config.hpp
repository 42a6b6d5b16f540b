#pragma once

// Run configuration: one JSON document, every key checked against the
// built-in defaults (unknown keys and wrong types are rejected), with
// `key.path=value` overrides applied on top.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "emo/checkpoint.hpp"
#include "emo/forge.hpp"
#include "emo/trainer.hpp"

namespace emo {

/// Malformed or unknown configuration input.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ForgeConfig forge;
  ModelConfig model;
  TrainConfig train;
  EvalOptions eval;

  /// The full document with every default filled in.
  static json defaults();
  /// `doc` may omit keys (defaults apply) but must not add any. With
  /// `require_seed`, a missing top-level seed is an error.
  static RunConfig from_json(const json& doc, bool require_seed = true);
  json to_json() const;
};

/// Applies "a.b.c=value" to `doc`. The value is parsed as JSON when possible,
/// otherwise taken as a string.
void apply_override(json& doc, std::string_view assignment);

/// Reads a JSON file; throws ConfigError on parse failure, LoadError if missing.
json read_config_file(const std::filesystem::path& path);

}  // namespace emo
