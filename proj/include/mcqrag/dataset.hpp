#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace mcqrag {

/// Answer slot. NA is the strict local-RAG null answer; `failed` marks a
/// question whose answer could not be obtained and counts as incorrect.
enum class Option : std::uint8_t { A, B, C, D, NA, failed };

inline constexpr std::array<Option, 4> kChoices{Option::A, Option::B, Option::C, Option::D};

std::string_view to_string(Option o);
/// Accepts "A".."D" (case-insensitive, surrounding whitespace and a trailing
/// '.', ')' or ':' tolerated).
std::optional<Option> parse_choice(std::string_view text);
/// Accepts everything to_string produces.
std::optional<Option> parse_option(std::string_view text);
inline bool is_choice(Option o) { return o <= Option::D; }
inline std::size_t slot(Option o) { return static_cast<std::size_t>(o); }

struct McqRecord {
  std::string id;
  std::string question;
  std::array<std::string, 4> options;
  Option answer_key = Option::A;
  std::optional<std::string> rationale;
  std::map<std::string, std::string> metadata;
  std::size_t row = 0;  // 1-based data row in the source file

  const std::string& option(Option o) const { return options.at(slot(o)); }
};

enum class RejectReason { bad_option_labels, missing_options, missing_answer, duplicate, parse_failure };

std::string_view to_string(RejectReason r);

/// A record as read from disk, before validation. Option labels are kept as
/// found so that non-standard labelling can be rejected.
struct RawRecord {
  std::size_t row = 0;
  std::string id;
  std::string question;
  std::vector<std::pair<std::string, std::string>> options;  // (label, text)
  std::string answer;
  std::optional<std::string> rationale;
  std::map<std::string, std::string> metadata;
};

struct Rejection {
  std::size_t row = 0;
  std::string id;
  RejectReason reason = RejectReason::parse_failure;
  std::string detail;
};

struct ValidationReport {
  std::vector<McqRecord> accepted;
  std::vector<Rejection> rejected;
};

class OptionParseError : public std::runtime_error {
 public:
  OptionParseError(const std::string& what, std::size_t position) : std::runtime_error(what), position_(position) {}
  /// Offset in Unicode scalar values of the offending marker (or end of text).
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

struct ParsedOptions {
  std::string question;
  std::array<std::string, 4> options;
};

/// Splits "stem A. x B) y C: z D. w" into the stem and four options. A marker
/// is a label letter at a word boundary, then one of ".):", then whitespace,
/// a letter, or end of text. Exactly A, B, C, D must appear, once each, in order.
ParsedOptions parse_options(std::string_view raw);

/// Same scan for Bangla (ক খ গ ঘ) or numeric (1-4, ১-৪) labels; returns the
/// labelled options when all four are found in order.
std::optional<std::vector<std::pair<std::string, std::string>>> find_foreign_options(std::string_view raw,
                                                                                     std::string* question);

std::variant<McqRecord, Rejection> validate_record(const RawRecord& raw);

/// Normalized question (case-folded, whitespace-collapsed) plus the sorted
/// multiset of normalized option texts.
std::string dedup_key(const McqRecord& record);

/// Keeps the first occurrence of each key; later ones are rejected as duplicate.
ValidationReport dedup(std::vector<McqRecord> records);

enum class DatasetFormat { csv, jsonl };

DatasetFormat format_from_path(const std::filesystem::path& path);
std::optional<DatasetFormat> parse_format(std::string_view name);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads, normalizes and validates every row. Malformed rows become
/// rejections; an unreadable file or a CSV without the required header
/// columns throws DatasetError.
ValidationReport load_dataset(const std::filesystem::path& path, DatasetFormat format);

/// load_dataset followed by dedup, with all rejections merged in row order.
ValidationReport prepare_dataset(const std::filesystem::path& path, DatasetFormat format);

/// Columns: row, reason, detail.
void write_rejections_csv(const std::vector<Rejection>& rejections, const std::filesystem::path& path);

}  // namespace mcqrag
