#include "mcqrag/textcorpus.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mcqrag/utf8.hpp"

namespace mcqrag {
namespace {

constexpr char32_t kZwnj = 0x200C;
constexpr char32_t kZwj = 0x200D;

bool is_joiner(char32_t cp) { return cp == kZwj || cp == kZwnj; }

bool is_soft_space(char32_t cp) {
  return cp == 0x00A0 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x202F || cp == 0x205F ||
         cp == 0x3000;
}

bool is_invisible(char32_t cp) {
  return cp == 0x200B || cp == 0xFEFF || cp == 0x2060 || cp == 0x00AD;
}

// Width folding, soft-space mapping, invisible removal, line-ending unification.
std::u32string map_code_points(std::u32string_view in) {
  std::u32string out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    char32_t cp = in[i];
    if (cp == U'\r') {
      out.push_back(U'\n');
      if (i + 1 < in.size() && in[i + 1] == U'\n') ++i;
      continue;
    }
    if (cp >= 0xFF01 && cp <= 0xFF5E) {
      out.push_back(cp - 0xFEE0);
    } else if (is_soft_space(cp)) {
      out.push_back(U' ');
    } else if (!is_invisible(cp)) {
      out.push_back(cp);
    }
  }
  return out;
}

bool is_blank(char32_t cp) { return cp == U' ' || cp == U'\t' || cp == U'\n'; }

// Keeps a run of joiners only when it sits between two non-blank characters.
std::u32string strip_edge_joiners(std::u32string_view in) {
  std::u32string out;
  out.reserve(in.size());
  std::size_t i = 0;
  while (i < in.size()) {
    if (!is_joiner(in[i])) {
      out.push_back(in[i++]);
      continue;
    }
    std::size_t end = i;
    while (end < in.size() && is_joiner(in[end])) ++end;
    const bool left_ok = !out.empty() && !is_blank(out.back());
    const bool right_ok = end < in.size() && !is_blank(in[end]);
    if (left_ok && right_ok) out.append(in.substr(i, end - i));
    i = end;
  }
  return out;
}

std::u32string collapse_spaces(std::u32string_view in) {
  std::u32string out;
  out.reserve(in.size());
  for (char32_t cp : in) {
    if (cp == U'\t') cp = U' ';
    if (cp == U' ' && !out.empty() && out.back() == U' ') continue;
    out.push_back(cp);
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

std::string normalize_text(std::string_view raw) {
  if (raw.empty()) return {};
  std::u32string mapped = map_code_points(utf8::decode(raw));
  std::u32string composed = utf8::decode(utf8::nfc(utf8::encode(mapped)));
  return utf8::encode(collapse_spaces(strip_edge_joiners(composed)));
}

void validate(const ChunkingConfig& cfg) {
  if (cfg.chunk_size == 0) throw CorpusError("chunk_size must be positive");
  if (cfg.overlap >= cfg.chunk_size) {
    throw CorpusError("overlap (" + std::to_string(cfg.overlap) + ") must be smaller than chunk_size (" +
                      std::to_string(cfg.chunk_size) + ")");
  }
}

std::string make_chunk_id(std::string_view doc_id, std::size_t ordinal) {
  char suffix[32];
  std::snprintf(suffix, sizeof(suffix), "#%06zu", ordinal);
  return std::string(doc_id) + suffix;
}

std::vector<Chunk> chunk_text(const RawDocument& doc, const ChunkingConfig& cfg) {
  validate(cfg);
  const std::u32string text = utf8::decode(doc.text);
  const std::size_t total = text.size();
  std::vector<Chunk> chunks;
  for (std::size_t start = 0, ordinal = 0; start < total; start += cfg.stride(), ++ordinal) {
    const std::size_t len = std::min(cfg.chunk_size, total - start);
    chunks.push_back(Chunk{make_chunk_id(doc.doc_id, ordinal), doc.doc_id,
                           utf8::encode(std::u32string_view(text).substr(start, len)), start, len});
    if (start + len == total) break;
  }
  return chunks;
}

std::vector<RawDocument> load_corpus(const std::filesystem::path& manifest) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError("malformed corpus manifest " + manifest.string() + ": " + e.what());
  }
  if (!doc.contains("documents") || !doc["documents"].is_array()) {
    throw CorpusError("corpus manifest needs a \"documents\" array");
  }
  const auto base = manifest.parent_path();
  std::vector<RawDocument> docs;
  std::set<std::string> seen;
  for (const auto& entry : doc["documents"]) {
    if (!entry.contains("path")) throw CorpusError("manifest entry without \"path\"");
    std::filesystem::path path = entry["path"].get<std::string>();
    if (path.is_relative()) path = base / path;
    RawDocument raw;
    raw.doc_id = entry.value("doc_id", path.stem().string());
    raw.source_label = entry.value("source_label", std::string{});
    raw.text = normalize_text(read_file(path));
    if (utf8::trim(raw.text).empty()) throw CorpusError("document " + raw.doc_id + " is empty after normalization");
    if (!seen.insert(raw.doc_id).second) throw CorpusError("duplicate doc_id " + raw.doc_id);
    docs.push_back(std::move(raw));
  }
  return docs;
}

std::vector<Chunk> chunk_corpus(const std::vector<RawDocument>& docs, const ChunkingConfig& cfg) {
  std::vector<Chunk> all;
  for (const auto& d : docs) {
    auto chunks = chunk_text(d, cfg);
    all.insert(all.end(), std::make_move_iterator(chunks.begin()), std::make_move_iterator(chunks.end()));
  }
  return all;
}

}  // namespace mcqrag
