#pragma once

#include <string>

namespace pqr {

// Temp file + rename, so readers never observe a partial file.
void write_text_atomic(const std::string& path, const std::string& content);

std::string read_text_file(const std::string& path);

}  // namespace pqr
