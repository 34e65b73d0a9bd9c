#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Comma-delimited, double-quote escaped, UTF-8. Shared by the dataset loader
// and the result writers so files round-trip.
namespace mcqrag::csv {

struct Record {
  std::size_t line = 0;  // 1-based physical line where the record starts
  std::vector<std::string> fields;
  bool malformed = false;  // unterminated quote or stray quote inside a field
};

std::vector<Record> parse(std::string_view text);

std::string escape(std::string_view field);

/// Joined with commas and terminated by '\n'.
std::string format_row(const std::vector<std::string>& fields);

}  // namespace mcqrag::csv
