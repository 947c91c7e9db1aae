#pragma once

// Run settings as flat "section.key = value" pairs. Every key is checked
// against a fixed schema; unknown keys and malformed values raise UsageError.

#include <filesystem>
#include <string>
#include <vector>

#include "cardioseg/engine.hpp"
#include "cardioseg/keyvalue.hpp"

namespace cardioseg {

struct RunConfig {
  TrainConfig train;
  PreprocessConfig preprocess;

  /// Defaults for a 2-D or 3-D run (batch size, width cap and input
  /// channels differ).
  static RunConfig defaults(int dims);

  /// Applies `kv` over the current values. `source` prefixes error messages.
  void apply(const KeyValues& kv, const std::string& source);
  KeyValues to_key_values() const;
  void validate() const;
};

/// Later sources override earlier ones key by key; model.dims (default 2)
/// picks the defaults the merged keys are applied to.
RunConfig build_run_config(const std::vector<std::pair<KeyValues, std::string>>& sources);

/// "<checkpoint>.meta": the full configuration plus checkpoint.fold,
/// checkpoint.epoch and checkpoint.val_dice.
std::filesystem::path meta_path(const std::filesystem::path& checkpoint);
void write_checkpoint_meta(const std::filesystem::path& checkpoint, const RunConfig& config, std::size_t fold,
                           std::size_t epoch, double val_dice);
/// CompatibilityError when the companion file is missing or unreadable.
RunConfig read_checkpoint_meta(const std::filesystem::path& checkpoint);

/// Every key the schema accepts, with a one-line description.
std::vector<std::pair<std::string, std::string>> config_schema();

}  // namespace cardioseg
