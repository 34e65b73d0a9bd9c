#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <vector>

#include "mcqrag/providers.hpp"
#include "mcqrag/utf8.hpp"

namespace mcqrag {
namespace {

constexpr std::array kAllowlisted{"article", "main", "p", "h1", "h2", "h3", "h4", "h5", "h6", "li"};
constexpr std::array kSuppressed{"script", "style", "noscript", "template"};
constexpr std::array kVoid{"area", "base", "br", "col", "embed", "hr", "img", "input",
                           "link", "meta", "param", "source", "track", "wbr"};
// Start tags that implicitly close an open <p>.
constexpr std::array kClosesParagraph{"address", "article", "aside", "blockquote", "div", "dl", "fieldset",
                                      "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header",
                                      "hr", "main", "nav", "ol", "p", "pre", "section", "table", "ul", "li"};
constexpr std::array kBlock{"address", "article", "aside", "blockquote", "br", "dd", "div", "dl", "dt",
                            "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr", "li",
                            "main", "nav", "ol", "p", "pre", "section", "table", "td", "th", "tr", "ul"};

template <std::size_t N>
bool in(const std::array<const char*, N>& set, const std::string& name) {
  return std::any_of(set.begin(), set.end(), [&](const char* s) { return name == s; });
}

struct Tag {
  std::string name;
  bool closing = false;
  bool self_closing = false;
};

// Parses the tag starting at html[pos] == '<'. Returns the position after '>'.
std::size_t parse_tag(std::string_view html, std::size_t pos, Tag& tag) {
  std::size_t i = pos + 1;
  if (i < html.size() && html[i] == '/') {
    tag.closing = true;
    ++i;
  }
  while (i < html.size() && std::isalnum(static_cast<unsigned char>(html[i]))) {
    tag.name.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(html[i]))));
    ++i;
  }
  char quote = 0;
  while (i < html.size()) {
    const char c = html[i];
    if (quote) {
      if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '>') {
      tag.self_closing = i > pos && html[i - 1] == '/';
      return i + 1;
    }
    ++i;
  }
  return html.size();
}

std::string decode_entity(std::string_view ent) {
  if (ent == "amp") return "&";
  if (ent == "lt") return "<";
  if (ent == "gt") return ">";
  if (ent == "quot") return "\"";
  if (ent == "apos") return "'";
  if (ent == "nbsp") return " ";
  if (ent.size() > 1 && ent[0] == '#') {
    char32_t cp = 0;
    const bool hex = ent[1] == 'x' || ent[1] == 'X';
    for (std::size_t i = hex ? 2 : 1; i < ent.size(); ++i) {
      const char c = ent[i];
      int digit = -1;
      if (c >= '0' && c <= '9') digit = c - '0';
      else if (hex && c >= 'a' && c <= 'f') digit = c - 'a' + 10;
      else if (hex && c >= 'A' && c <= 'F') digit = c - 'A' + 10;
      if (digit < 0 || cp > 0x10FFFF) return {};
      cp = cp * (hex ? 16 : 10) + static_cast<char32_t>(digit);
    }
    if (cp == 0 || cp > 0x10FFFF) return {};
    return utf8::encode(std::u32string(1, cp));
  }
  return {};
}

void append_text(std::string_view raw, std::string& out) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == '&') {
      const auto semi = raw.find(';', i + 1);
      if (semi != std::string_view::npos && semi - i <= 10) {
        auto decoded = decode_entity(raw.substr(i + 1, semi - i - 1));
        if (!decoded.empty()) {
          out += decoded;
          i = semi;
          continue;
        }
      }
    }
    out.push_back(raw[i]);
  }
}

void pop_to(std::vector<std::string>& stack, const std::string& name) {
  auto it = std::find(stack.rbegin(), stack.rend(), name);
  if (it != stack.rend()) stack.erase(std::next(it).base(), stack.end());
}

}  // namespace

std::string extract_visible_text(std::string_view html) {
  std::vector<std::string> stack;
  std::string text;
  auto emitting = [&] {
    bool allowed = false;
    for (const auto& name : stack) {
      if (in(kSuppressed, name)) return false;
      allowed = allowed || in(kAllowlisted, name);
    }
    return allowed;
  };

  std::size_t i = 0;
  while (i < html.size()) {
    if (html[i] != '<') {
      const auto next = std::min(html.find('<', i), html.size());
      if (emitting()) append_text(html.substr(i, next - i), text);
      i = next;
      continue;
    }
    if (html.compare(i, 4, "<!--") == 0) {
      const auto end = html.find("-->", i + 4);
      i = end == std::string_view::npos ? html.size() : end + 3;
      continue;
    }
    if (i + 1 < html.size() && (html[i + 1] == '!' || html[i + 1] == '?')) {
      const auto end = html.find('>', i);
      i = end == std::string_view::npos ? html.size() : end + 1;
      continue;
    }
    if (i + 1 >= html.size() || !(std::isalpha(static_cast<unsigned char>(html[i + 1])) || html[i + 1] == '/')) {
      if (emitting()) text.push_back('<');
      ++i;
      continue;
    }
    Tag tag;
    i = parse_tag(html, i, tag);
    if (tag.name.empty()) continue;
    if (in(kBlock, tag.name)) text.push_back('\n');

    if (tag.closing) {
      pop_to(stack, tag.name);
      continue;
    }
    if (in(kSuppressed, tag.name) && !tag.self_closing) {
      // Raw text content: skip to the matching end tag.
      const std::string close = "</" + tag.name;
      std::size_t j = i;
      while (j < html.size()) {
        j = html.find("</", j);
        if (j == std::string_view::npos) break;
        bool match = html.size() - j >= close.size();
        for (std::size_t k = 0; match && k < close.size(); ++k) {
          match = std::tolower(static_cast<unsigned char>(html[j + k])) == close[k];
        }
        if (match) break;
        j += 2;
      }
      if (j == std::string_view::npos || j >= html.size()) {
        i = html.size();
      } else {
        const auto end = html.find('>', j);
        i = end == std::string_view::npos ? html.size() : end + 1;
      }
      continue;
    }
    if (in(kClosesParagraph, tag.name)) pop_to(stack, "p");
    if (tag.name == "li") {
      // A new item closes the previous one within the same list.
      auto list = std::find_if(stack.rbegin(), stack.rend(), [](const std::string& n) { return n == "ul" || n == "ol"; });
      auto item = std::find(stack.rbegin(), list, "li");
      if (item != list) stack.erase(std::next(item).base(), stack.end());
    }
    if (!tag.self_closing && !in(kVoid, tag.name)) stack.push_back(tag.name);
  }

  std::string out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    auto line = utf8::squeeze_whitespace(std::string_view(text).substr(start, end - start));
    if (!line.empty()) {
      if (!out.empty()) out.push_back('\n');
      out += line;
    }
    start = end + 1;
  }
  return out;
}

}  // namespace mcqrag
