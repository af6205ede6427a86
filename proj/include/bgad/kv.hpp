#pragma once

#include <map>
#include <string>

namespace bgad {

// Flat `key = value` text: one pair per line, `#` starts a comment, blank
// lines ignored, duplicate keys rejected.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::map<std::string, std::string> parse_kv_file(const std::string& path);

// Shortest decimal that round-trips the exact double.
std::string format_double(double v);

// Write-temp-then-rename so readers never observe partial content.
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace bgad
