#include "mcqrag/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "mcqrag/csv.hpp"
#include "mcqrag/textcorpus.hpp"
#include "mcqrag/utf8.hpp"

namespace mcqrag {
namespace {

constexpr std::array<const char*, 4> kOptionColumns{"option_a", "option_b", "option_c", "option_d"};
constexpr std::array<const char*, 4> kLetters{"A", "B", "C", "D"};

bool is_marker_punct(char32_t cp) { return cp == U'.' || cp == U')' || cp == U':'; }

struct Marker {
  std::size_t label;  // index into the label set
  std::size_t pos;    // position of the label character
};

std::vector<Marker> scan_markers(const std::u32string& text, const std::array<std::u32string, 4>& labels,
                                 bool allow_visarga) {
  std::vector<Marker> found;
  for (std::size_t p = 0; p + 1 < text.size(); ++p) {
    std::size_t label = 4;
    for (std::size_t l = 0; l < 4; ++l) {
      if (labels[l].find(text[p]) != std::u32string::npos) label = l;
    }
    if (label == 4) continue;
    if (p > 0 && utf8::is_letter_or_digit(text[p - 1])) continue;
    const char32_t punct = text[p + 1];
    if (!is_marker_punct(punct) && !(allow_visarga && punct == 0x0983)) continue;
    if (p + 2 < text.size() && !utf8::is_whitespace(text[p + 2]) && !utf8::is_letter(text[p + 2])) continue;
    found.push_back({label, p});
  }
  return found;
}

std::string slice(const std::u32string& text, std::size_t begin, std::size_t end) {
  return utf8::trim(utf8::encode(std::u32string_view(text).substr(begin, end - begin)));
}

// Validates marker order and cuts the text; throws OptionParseError.
std::pair<std::string, std::array<std::string, 4>> split_on_markers(const std::u32string& text,
                                                                      const std::vector<Marker>& markers,
                                                                      const std::array<std::string, 4>& names) {
  std::size_t expected = 0;
  std::array<std::size_t, 4> at{};
  for (const auto& m : markers) {
    if (m.label == expected && expected < 4) {
      at[expected++] = m.pos;
      continue;
    }
    if (m.label < expected) {
      throw OptionParseError("option marker " + names[m.label] + " repeated at position " + std::to_string(m.pos),
                             m.pos);
    }
    throw OptionParseError("option marker " + names[m.label] + " at position " + std::to_string(m.pos) +
                               " appears before marker " + names[expected],
                           m.pos);
  }
  if (expected < 4) {
    throw OptionParseError("missing option marker " + names[expected] + " (found " + std::to_string(expected) + " of 4)",
                           text.size());
  }
  std::array<std::string, 4> options;
  for (std::size_t l = 0; l < 4; ++l) {
    const std::size_t begin = at[l] + 2;
    const std::size_t end = l + 1 < 4 ? at[l + 1] : text.size();
    options[l] = slice(text, begin, end);
  }
  return {slice(text, 0, at[0]), options};
}

bool is_foreign_label(std::string_view label) {
  static const std::set<std::string> kForeign{"ক", "খ", "গ", "ঘ", "ঙ", "১", "২", "৩", "৪", "৫",
                                              "1", "2", "3", "4", "5"};
  return kForeign.count(utf8::trim(label)) > 0;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot read dataset " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string to_lower_ascii(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Shared row -> record path for both file formats. `fields` holds canonical
// keys; options either come from option_a..option_d, from an explicit label
// map, or are parsed out of the question.
struct RowFields {
  std::size_t row = 0;
  std::string id;
  std::string question;
  std::map<std::string, std::string> option_columns;
  std::vector<std::pair<std::string, std::string>> labelled_options;
  std::string answer;
  std::string rationale;
  std::map<std::string, std::string> metadata;
};

std::variant<McqRecord, Rejection> finish_row(RowFields f) {
  RawRecord raw;
  raw.row = f.row;
  raw.id = f.id.empty() ? std::to_string(f.row) : utf8::trim(f.id);
  raw.question = normalize_text(f.question);
  raw.answer = utf8::trim(normalize_text(f.answer));
  auto rationale = utf8::trim(normalize_text(f.rationale));
  if (!rationale.empty()) raw.rationale = std::move(rationale);
  raw.metadata = std::move(f.metadata);

  bool have_columns = false;
  for (const auto& [_, text] : f.option_columns) have_columns = have_columns || !utf8::trim(text).empty();
  if (!f.labelled_options.empty()) {
    for (auto& [label, text] : f.labelled_options) raw.options.emplace_back(label, utf8::trim(normalize_text(text)));
  } else if (have_columns) {
    for (std::size_t i = 0; i < 4; ++i) {
      auto it = f.option_columns.find(kOptionColumns[i]);
      if (it != f.option_columns.end()) raw.options.emplace_back(kLetters[i], utf8::trim(normalize_text(it->second)));
    }
  } else {
    try {
      auto parsed = parse_options(raw.question);
      raw.question = parsed.question;
      for (std::size_t i = 0; i < 4; ++i) raw.options.emplace_back(kLetters[i], parsed.options[i]);
    } catch (const OptionParseError& e) {
      std::string stem;
      if (auto foreign = find_foreign_options(raw.question, &stem)) {
        raw.question = stem;
        raw.options = std::move(*foreign);
      } else {
        return Rejection{raw.row, raw.id, RejectReason::parse_failure, e.what()};
      }
    }
  }
  raw.question = utf8::trim(raw.question);
  return validate_record(raw);
}

void absorb(ValidationReport& report, std::variant<McqRecord, Rejection> result) {
  if (auto* rec = std::get_if<McqRecord>(&result)) {
    report.accepted.push_back(std::move(*rec));
  } else {
    report.rejected.push_back(std::move(std::get<Rejection>(result)));
  }
}

ValidationReport load_csv(const std::string& text) {
  auto records = csv::parse(text);
  if (records.empty()) throw DatasetError("dataset has no header row");
  std::vector<std::string> header;
  for (const auto& h : records.front().fields) header.push_back(to_lower_ascii(utf8::trim(h)));
  for (const char* required : {"question", "answer"}) {
    if (std::find(header.begin(), header.end(), required) == header.end()) {
      throw DatasetError(std::string("dataset header lacks required column \"") + required + "\"");
    }
  }

  ValidationReport report;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::size_t row = r;
    if (rec.malformed || rec.fields.size() != header.size()) {
      report.rejected.push_back({row, std::to_string(row), RejectReason::parse_failure,
                                 rec.malformed ? "unbalanced quotes on line " + std::to_string(rec.line)
                                               : "expected " + std::to_string(header.size()) + " fields, got " +
                                                     std::to_string(rec.fields.size()) + " on line " +
                                                     std::to_string(rec.line)});
      continue;
    }
    RowFields f;
    f.row = row;
    for (std::size_t c = 0; c < header.size(); ++c) {
      const auto& name = header[c];
      const auto& value = rec.fields[c];
      if (name == "id") f.id = value;
      else if (name == "question") f.question = value;
      else if (name == "answer") f.answer = value;
      else if (name == "rationale") f.rationale = value;
      else if (std::find(kOptionColumns.begin(), kOptionColumns.end(), name) != kOptionColumns.end()) f.option_columns[name] = value;
      else f.metadata[name] = value;
    }
    absorb(report, finish_row(std::move(f)));
  }
  return report;
}

std::string scalar_to_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return {};
  return v.dump();
}

ValidationReport load_jsonl(const std::string& text) {
  ValidationReport report;
  std::istringstream lines(text);
  std::string line;
  std::size_t row = 0;
  while (std::getline(lines, line)) {
    if (utf8::trim(line).empty()) continue;
    ++row;
    auto obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
      report.rejected.push_back({row, std::to_string(row), RejectReason::parse_failure, "line is not a JSON object"});
      continue;
    }
    RowFields f;
    f.row = row;
    for (const auto& [key, value] : obj.items()) {
      const auto name = to_lower_ascii(key);
      if (name == "id") f.id = scalar_to_string(value);
      else if (name == "question") f.question = scalar_to_string(value);
      else if (name == "answer") f.answer = scalar_to_string(value);
      else if (name == "rationale") f.rationale = scalar_to_string(value);
      else if (std::find(kOptionColumns.begin(), kOptionColumns.end(), name) != kOptionColumns.end()) {
        f.option_columns[name] = scalar_to_string(value);
      } else if (name == "options" && value.is_object()) {
        for (const auto& [label, t] : value.items()) f.labelled_options.emplace_back(label, scalar_to_string(t));
      } else if (name == "options" && value.is_array()) {
        for (std::size_t i = 0; i < value.size() && i < 4; ++i) {
          f.option_columns[kOptionColumns[i]] = scalar_to_string(value[i]);
        }
        if (value.size() > 4) f.labelled_options.emplace_back("E", scalar_to_string(value[4]));
      } else {
        f.metadata[name] = scalar_to_string(value);
      }
    }
    absorb(report, finish_row(std::move(f)));
  }
  return report;
}

}  // namespace

std::string_view to_string(Option o) {
  switch (o) {
    case Option::A: return "A";
    case Option::B: return "B";
    case Option::C: return "C";
    case Option::D: return "D";
    case Option::NA: return "NA";
    case Option::failed: return "FAILED";
  }
  return "?";
}

std::optional<Option> parse_choice(std::string_view text) {
  auto t = utf8::trim(text);
  if (t.size() == 2 && (t[1] == '.' || t[1] == ')' || t[1] == ':')) t.pop_back();
  if (t.size() != 1) return std::nullopt;
  switch (std::toupper(static_cast<unsigned char>(t[0]))) {
    case 'A': return Option::A;
    case 'B': return Option::B;
    case 'C': return Option::C;
    case 'D': return Option::D;
    default: return std::nullopt;
  }
}

std::optional<Option> parse_option(std::string_view text) {
  if (text == "NA") return Option::NA;
  if (text == "FAILED") return Option::failed;
  return parse_choice(text);
}

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::bad_option_labels: return "bad_option_labels";
    case RejectReason::missing_options: return "missing_options";
    case RejectReason::missing_answer: return "missing_answer";
    case RejectReason::duplicate: return "duplicate";
    case RejectReason::parse_failure: return "parse_failure";
  }
  return "unknown";
}

ParsedOptions parse_options(std::string_view raw) {
  const auto text = utf8::decode(raw);
  static const std::array<std::u32string, 4> kLabels{U"A", U"B", U"C", U"D"};
  auto [question, options] = split_on_markers(text, scan_markers(text, kLabels, false), {"A", "B", "C", "D"});
  return {std::move(question), std::move(options)};
}

std::optional<std::vector<std::pair<std::string, std::string>>> find_foreign_options(std::string_view raw,
                                                                                     std::string* question) {
  const auto text = utf8::decode(raw);
  static const std::array<std::array<std::u32string, 4>, 3> kSchemes{{
      {U"ক", U"খ", U"গ", U"ঘ"},
      {U"1", U"2", U"3", U"4"},
      {U"১", U"২", U"৩", U"৪"},
  }};
  for (const auto& scheme : kSchemes) {
    std::array<std::string, 4> names;
    for (std::size_t i = 0; i < 4; ++i) names[i] = utf8::encode(scheme[i]);
    try {
      auto [stem, options] = split_on_markers(text, scan_markers(text, scheme, true), names);
      if (question) *question = stem;
      std::vector<std::pair<std::string, std::string>> out;
      for (std::size_t i = 0; i < 4; ++i) out.emplace_back(names[i], options[i]);
      return out;
    } catch (const OptionParseError&) {
    }
  }
  return std::nullopt;
}

std::variant<McqRecord, Rejection> validate_record(const RawRecord& raw) {
  auto reject = [&](RejectReason reason, std::string detail) -> std::variant<McqRecord, Rejection> {
    return Rejection{raw.row, raw.id, reason, std::move(detail)};
  };
  if (utf8::trim(raw.question).empty()) return reject(RejectReason::parse_failure, "empty question");

  for (const auto& [label, _] : raw.options) {
    if (is_foreign_label(label)) return reject(RejectReason::bad_option_labels, "option label \"" + label + "\"");
  }
  if (is_foreign_label(raw.answer)) return reject(RejectReason::bad_option_labels, "answer label \"" + raw.answer + "\"");

  McqRecord rec;
  std::array<bool, 4> seen{};
  for (const auto& [label, text] : raw.options) {
    auto choice = parse_choice(label);
    if (!choice || utf8::trim(label).size() != 1) {
      return reject(RejectReason::bad_option_labels, "option label \"" + label + "\" is not one of A-D");
    }
    if (seen[slot(*choice)]) return reject(RejectReason::missing_options, "duplicate option " + label);
    seen[slot(*choice)] = true;
    if (utf8::trim(text).empty()) return reject(RejectReason::missing_options, "option " + label + " is empty");
    rec.options[slot(*choice)] = utf8::trim(text);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (!seen[i]) return reject(RejectReason::missing_options, std::string("option ") + kLetters[i] + " is missing");
  }

  auto answer = parse_choice(raw.answer);
  if (!answer) {
    return reject(RejectReason::missing_answer,
                  raw.answer.empty() ? "answer is missing" : "answer \"" + raw.answer + "\" is not one of A-D");
  }

  rec.id = raw.id;
  rec.question = utf8::trim(raw.question);
  rec.answer_key = *answer;
  rec.rationale = raw.rationale;
  rec.metadata = raw.metadata;
  rec.row = raw.row;
  return rec;
}

std::string dedup_key(const McqRecord& record) {
  auto norm = [](std::string_view s) { return utf8::fold_case(utf8::squeeze_whitespace(s)); };
  std::vector<std::string> options;
  for (const auto& o : record.options) options.push_back(norm(o));
  std::sort(options.begin(), options.end());
  std::string key = norm(record.question);
  for (const auto& o : options) {
    key.push_back('\x1f');
    key += o;
  }
  return key;
}

ValidationReport dedup(std::vector<McqRecord> records) {
  ValidationReport report;
  std::map<std::string, std::string> first_seen;  // key -> id of the kept record
  for (auto& rec : records) {
    auto [it, inserted] = first_seen.try_emplace(dedup_key(rec), rec.id);
    if (inserted) {
      report.accepted.push_back(std::move(rec));
    } else {
      report.rejected.push_back({rec.row, rec.id, RejectReason::duplicate, "duplicate of " + it->second});
    }
  }
  return report;
}

DatasetFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = to_lower_ascii(path.extension().string());
  if (ext == ".jsonl" || ext == ".ndjson") return DatasetFormat::jsonl;
  return DatasetFormat::csv;
}

std::optional<DatasetFormat> parse_format(std::string_view name) {
  if (name == "csv") return DatasetFormat::csv;
  if (name == "jsonl") return DatasetFormat::jsonl;
  return std::nullopt;
}

ValidationReport load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  const std::string text = read_file(path);
  return format == DatasetFormat::csv ? load_csv(text) : load_jsonl(text);
}

ValidationReport prepare_dataset(const std::filesystem::path& path, DatasetFormat format) {
  auto loaded = load_dataset(path, format);
  auto report = dedup(std::move(loaded.accepted));
  report.rejected.insert(report.rejected.end(), loaded.rejected.begin(), loaded.rejected.end());
  std::stable_sort(report.rejected.begin(), report.rejected.end(),
                   [](const Rejection& a, const Rejection& b) { return a.row < b.row; });
  return report;
}

void write_rejections_csv(const std::vector<Rejection>& rejections, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << csv::format_row({"row", "reason", "detail"});
  for (const auto& r : rejections) {
    out << csv::format_row({std::to_string(r.row), std::string(to_string(r.reason)), r.detail});
  }
}

}  // namespace mcqrag
