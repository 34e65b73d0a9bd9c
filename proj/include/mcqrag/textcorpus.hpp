#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mcqrag {

struct RawDocument {
  std::string doc_id;
  std::string text;
  std::string source_label;
};

/// A contiguous slice of a normalized document. Offsets and lengths count
/// Unicode scalar values.
struct Chunk {
  std::string chunk_id;
  std::string doc_id;
  std::string text;
  std::size_t char_start = 0;
  std::size_t char_len = 0;

  friend bool operator==(const Chunk&, const Chunk&) = default;
};

struct ChunkingConfig {
  std::size_t chunk_size = 1000;
  std::size_t overlap = 200;

  std::size_t stride() const { return chunk_size - overlap; }
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cleans digitized text:
///  - full-width ASCII variants (U+FF01..U+FF5E) and the ideographic space fold to ASCII;
///  - no-break and fixed-width spaces become U+0020;
///  - zero-width space, BOM, word joiner and soft hyphen are removed;
///  - ZWJ/ZWNJ survive only between two non-space characters on the same line;
///  - the result is NFC; CR/CRLF become LF; runs of spaces and tabs become one space.
/// Idempotent and total.
std::string normalize_text(std::string_view raw);

/// Throws CorpusError when overlap >= chunk_size or chunk_size == 0.
void validate(const ChunkingConfig& cfg);

/// Fixed-stride chunking: chunk i starts at i * (chunk_size - overlap). The
/// chunk that reaches the end of the document is the last one emitted.
std::vector<Chunk> chunk_text(const RawDocument& doc, const ChunkingConfig& cfg);

/// Chunk ids sort lexicographically in document order.
std::string make_chunk_id(std::string_view doc_id, std::size_t ordinal);

/// Reads a JSON manifest of the form
///   {"documents": [{"path": "...", "doc_id": "...", "source_label": "..."}]}
/// Paths are resolved relative to the manifest's directory. Document text is
/// normalized on load; duplicate doc_ids and empty documents are errors.
std::vector<RawDocument> load_corpus(const std::filesystem::path& manifest);

std::vector<Chunk> chunk_corpus(const std::vector<RawDocument>& docs, const ChunkingConfig& cfg);

}  // namespace mcqrag
