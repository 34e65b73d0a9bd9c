#include "mcqrag/csv.hpp"

namespace mcqrag::csv {

std::vector<Record> parse(std::string_view text) {
  std::vector<Record> records;
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);

  std::size_t i = 0;
  std::size_t line = 1;
  while (i < text.size()) {
    Record rec;
    rec.line = line;
    std::string field;
    bool in_quotes = false;
    bool field_was_quoted = false;
    bool end_of_record = false;
    while (i < text.size() && !end_of_record) {
      const char c = text[i];
      if (in_quotes) {
        if (c == '"') {
          if (i + 1 < text.size() && text[i + 1] == '"') {
            field.push_back('"');
            i += 2;
            continue;
          }
          in_quotes = false;
          ++i;
          continue;
        }
        if (c == '\n') ++line;
        field.push_back(c);
        ++i;
        continue;
      }
      switch (c) {
        case '"':
          if (field.empty() && !field_was_quoted) {
            in_quotes = true;
            field_was_quoted = true;
          } else {
            rec.malformed = true;
            field.push_back(c);
          }
          ++i;
          break;
        case ',':
          rec.fields.push_back(std::move(field));
          field.clear();
          field_was_quoted = false;
          ++i;
          break;
        case '\r':
          ++i;
          if (i < text.size() && text[i] == '\n') ++i;
          ++line;
          end_of_record = true;
          break;
        case '\n':
          ++i;
          ++line;
          end_of_record = true;
          break;
        default:
          if (field_was_quoted) rec.malformed = true;
          field.push_back(c);
          ++i;
      }
    }
    if (in_quotes) rec.malformed = true;
    rec.fields.push_back(std::move(field));
    // Skip blank lines entirely.
    if (rec.fields.size() == 1 && rec.fields[0].empty() && !rec.malformed) continue;
    records.push_back(std::move(rec));
  }
  return records;
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += escape(fields[i]);
  }
  out.push_back('\n');
  return out;
}

}  // namespace mcqrag::csv
