#include "mcqrag/prompts.hpp"

#include <fstream>
#include <sstream>

#include "mcqrag/sha256.hpp"

namespace mcqrag {

namespace {

const std::map<std::string, std::string>& embedded_templates() {
  static const std::map<std::string, std::string> table{
#include "prompts_embedded.inc"
  };
  return table;
}

std::string strip_trailing_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace

PromptTemplate PromptTemplate::parse(std::string_view text) {
  std::size_t line_start = 0;
  while (line_start <= text.size()) {
    auto line_end = text.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = text.size();
    auto line = text.substr(line_start, line_end - line_start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line == "---") {
      const auto user_start = std::min(line_end + 1, text.size());
      return {strip_trailing_newlines(std::string(text.substr(0, line_start))),
              strip_trailing_newlines(std::string(text.substr(user_start)))};
    }
    line_start = line_end + 1;
  }
  return {"", strip_trailing_newlines(std::string(text))};
}

std::string render(std::string_view text, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto open = text.find("{{", i);
    if (open == std::string_view::npos) break;
    const auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    out.append(text.substr(i, open - i));
    const std::string name(text.substr(open + 2, close - open - 2));
    if (auto it = vars.find(name); it != vars.end()) {
      out += it->second;
    } else {
      out.append(text.substr(open, close + 2 - open));
    }
    i = close + 2;
  }
  out.append(text.substr(i));
  return out;
}

PromptSet PromptSet::builtin() {
  PromptSet set;
  for (const auto& [name, text] : embedded_templates()) set.templates_[name] = PromptTemplate::parse(text);
  return set;
}

PromptSet PromptSet::with_overrides(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  PromptSet set = builtin();
  if (!fs::is_directory(dir)) throw PromptError("prompt directory not found: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    if (!in) throw PromptError("cannot read prompt " + entry.path().string());
    std::ostringstream buf;
    buf << in.rdbuf();
    set.templates_[entry.path().stem().string()] = PromptTemplate::parse(buf.str());
  }
  return set;
}

const PromptTemplate& PromptSet::get(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw PromptError("no prompt template named " + name);
  return it->second;
}

std::vector<ChatMessage> PromptSet::messages(const std::string& name,
                                             const std::map<std::string, std::string>& vars) const {
  const auto& t = get(name);
  std::vector<ChatMessage> out;
  if (!t.system.empty()) out.push_back({ChatRole::system, render(t.system, vars)});
  out.push_back({ChatRole::user, render(t.user, vars)});
  return out;
}

std::string PromptSet::digest() const {
  Sha256 h;
  for (const auto& [name, t] : templates_) {
    h.field(name);
    h.field(t.system);
    h.field(t.user);
  }
  return h.hex_digest();
}

}  // namespace mcqrag
