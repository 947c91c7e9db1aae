#pragma once

// Line-based "key = value" text with '#' comments.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace cardioseg {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Keys and values are trimmed; blank lines and comments are skipped. A line
/// without '=' or a repeated key raises FormatError naming `source` and the
/// line number.
KeyValues parse_key_values(const std::string& text, const std::string& source = "<text>");
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

/// Value of `key`, or nullptr.
const std::string* find_value(const KeyValues& kv, const std::string& key);

}  // namespace cardioseg
