#include "mcqrag/vecindex.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>

#include "mcqrag/sha256.hpp"
#include "mcqrag/utf8.hpp"

namespace mcqrag {
namespace {

constexpr char kMagic[8] = {'M', 'C', 'Q', 'R', 'A', 'G', 'I', 'X'};
constexpr std::uint32_t kFormatVersion = 1;

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (auto& b : buf) {
    b = static_cast<unsigned char>(v & 0xFF);
    v >>= 8;
  }
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) throw IndexError("truncated index file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_u64(in);
  if (n > (std::uint64_t{1} << 32)) throw IndexError("corrupt index file");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw IndexError("truncated index file");
  return s;
}

std::filesystem::path sidecar(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

}  // namespace

VectorIndex::VectorIndex(std::vector<IndexEntry> entries, EmbeddingMatrix vectors, std::string fingerprint)
    : entries_(std::move(entries)), vectors_(std::move(vectors)), fingerprint_(std::move(fingerprint)) {
  if (static_cast<Eigen::Index>(entries_.size()) != vectors_.rows()) {
    throw IndexError("index has " + std::to_string(entries_.size()) + " entries but " +
                     std::to_string(vectors_.rows()) + " vectors");
  }
  if (!entries_.empty() && vectors_.cols() == 0) throw IndexError("index dimension must be positive");
  if (!vectors_.allFinite()) throw IndexError("index contains non-finite values");
  std::set<std::string_view> ids;
  for (const auto& e : entries_) {
    if (!ids.insert(e.chunk_id).second) throw IndexError("duplicate chunk id " + e.chunk_id);
  }
}

void VectorIndex::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(kMagic, sizeof(kMagic));
    write_u64(out, kFormatVersion);
    write_u64(out, static_cast<std::uint64_t>(dimension()));
    write_u64(out, entries_.size());
    write_string(out, fingerprint_);
    for (const auto& e : entries_) {
      write_string(out, e.chunk_id);
      write_string(out, e.text);
    }
    static_assert(sizeof(double) == 8);
    for (Eigen::Index r = 0; r < vectors_.rows(); ++r) {
      for (Eigen::Index c = 0; c < vectors_.cols(); ++c) {
        std::uint64_t bits;
        const double v = vectors_(r, c);
        std::memcpy(&bits, &v, 8);
        write_u64(out, bits);
      }
    }
    if (!out) throw IndexError("cannot write index file " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
  nlohmann::json manifest{{"format_version", kFormatVersion},
                          {"fingerprint", fingerprint_},
                          {"dimension", dimension()},
                          {"entries", entries_.size()},
                          {"index_file", path.filename().string()}};
  std::ofstream(sidecar(path), std::ios::trunc) << manifest.dump(2) << '\n';
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IndexError("cannot read index file " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kMagic)) {
    throw IndexError(path.string() + " is not an index file");
  }
  if (read_u64(in) != kFormatVersion) throw IndexError("unsupported index format version in " + path.string());
  const auto dim = static_cast<Eigen::Index>(read_u64(in));
  const auto count = read_u64(in);
  std::string fingerprint = read_string(in);
  std::vector<IndexEntry> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    IndexEntry e;
    e.chunk_id = read_string(in);
    e.text = read_string(in);
    entries.push_back(std::move(e));
  }
  EmbeddingMatrix vectors(static_cast<Eigen::Index>(count), dim);
  for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) {
      const std::uint64_t bits = read_u64(in);
      double v;
      std::memcpy(&v, &bits, 8);
      vectors(r, c) = v;
    }
  }
  return VectorIndex(std::move(entries), std::move(vectors), std::move(fingerprint));
}

std::string index_fingerprint(const std::vector<Chunk>& chunks, std::string_view embedder_identity) {
  Sha256 h;
  h.field("mcqrag-index-v1").field(embedder_identity);
  for (const auto& c : chunks) {
    h.field(c.chunk_id).field(std::to_string(c.char_start)).field(std::to_string(c.char_len)).field(c.text);
  }
  return h.hex_digest();
}

std::filesystem::path index_cache_path(const std::filesystem::path& cache_dir, std::string_view fingerprint) {
  return cache_dir / ("index-" + std::string(fingerprint.substr(0, 24)) + ".bin");
}

VectorIndex build_index(const std::vector<Chunk>& chunks, ProviderHub& hub, const std::filesystem::path& cache_dir) {
  if (chunks.empty()) throw IndexError("cannot build an index without chunks");
  const std::string fingerprint = index_fingerprint(chunks, hub.embedder_identity());
  std::filesystem::path cache_file;
  if (!cache_dir.empty()) {
    cache_file = index_cache_path(cache_dir, fingerprint);
    if (std::filesystem::exists(cache_file) && std::filesystem::exists(sidecar(cache_file))) {
      try {
        auto manifest = nlohmann::json::parse(std::ifstream(sidecar(cache_file)));
        if (manifest.value("fingerprint", "") == fingerprint) {
          auto cached = VectorIndex::load(cache_file);
          if (cached.fingerprint() == fingerprint && cached.size() == chunks.size()) return cached;
        }
      } catch (const std::exception&) {
        // Unreadable cache entries are rebuilt.
      }
    }
  }

  std::vector<IndexEntry> entries;
  entries.reserve(chunks.size());
  std::vector<EmbeddingVector> rows;
  rows.reserve(chunks.size());
  const std::size_t batch = hub.embed_batch_size();
  for (std::size_t begin = 0; begin < chunks.size(); begin += batch) {
    const std::size_t end = std::min(chunks.size(), begin + batch);
    std::vector<std::string> texts;
    std::vector<std::string> ids;
    for (std::size_t i = begin; i < end; ++i) {
      texts.push_back(chunks[i].text);
      ids.push_back(chunks[i].chunk_id);
    }
    std::vector<EmbeddingVector> vectors;
    try {
      vectors = hub.embed(texts);
    } catch (const ProviderUnavailable& e) {
      throw IndexBuildError("embedding failed for chunks " + ids.front() + ".." + ids.back() + ": " + e.what(),
                            ids);
    }
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      const auto& chunk = chunks[begin + i];
      const auto expected = rows.empty() ? vectors[i].size() : rows.front().size();
      if (vectors[i].size() != expected || expected == 0) {
        throw IndexBuildError("chunk " + chunk.chunk_id + " embedded with dimension " +
                                  std::to_string(vectors[i].size()) + ", expected " + std::to_string(expected),
                              {chunk.chunk_id});
      }
      if (!vectors[i].allFinite()) {
        throw IndexBuildError("chunk " + chunk.chunk_id + " has a non-finite embedding", {chunk.chunk_id});
      }
      entries.push_back({chunk.chunk_id, chunk.text});
      rows.push_back(std::move(vectors[i]));
    }
  }

  EmbeddingMatrix matrix(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) matrix.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
  VectorIndex index(std::move(entries), std::move(matrix), fingerprint);
  if (!cache_file.empty()) index.save(cache_file);
  return index;
}

std::string_view to_string(ContextOrigin origin) { return origin == ContextOrigin::local ? "local" : "web"; }

void RetrievedContext::add(Passage p) {
  total_chars += utf8::length(p.text);
  passages.push_back(std::move(p));
}

std::vector<ScoredEntry> rank_entries(const VectorIndex& index, const EmbeddingVector& query, std::size_t k) {
  if (!index.empty() && query.size() != index.dimension()) {
    throw IndexError("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                     std::to_string(index.dimension()));
  }
  std::vector<ScoredEntry> scored;
  scored.reserve(index.size());
  const auto& vectors = index.vectors();
  for (std::size_t i = 0; i < index.size(); ++i) {
    scored.push_back({i, cosine_similarity(vectors.row(static_cast<Eigen::Index>(i)).transpose(), query)});
  }
  const auto& entries = index.entries();
  auto before = [&](const ScoredEntry& a, const ScoredEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return entries[a.index].chunk_id < entries[b.index].chunk_id;
  };
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), before);
  scored.resize(take);
  return scored;
}

RetrievedContext retrieve_by_vector(const VectorIndex& index, const EmbeddingVector& query, int k) {
  if (k < 1) throw std::invalid_argument("retrieval k must be >= 1");
  RetrievedContext ctx;
  ctx.k_requested = k;
  ctx.origin = ContextOrigin::local;
  int rank = 0;
  for (const auto& s : rank_entries(index, query, static_cast<std::size_t>(k))) {
    const auto& e = index.entries()[s.index];
    ctx.add({e.chunk_id, e.text, s.score, ++rank});
  }
  return ctx;
}

RetrievedContext retrieve(const VectorIndex& index, std::string_view query, int k, ProviderHub& hub) {
  if (k < 1) throw std::invalid_argument("retrieval k must be >= 1");
  if (index.empty()) {
    RetrievedContext ctx;
    ctx.k_requested = k;
    return ctx;
  }
  auto vectors = hub.embed({std::string(query)});
  return retrieve_by_vector(index, vectors.front(), k);
}

}  // namespace mcqrag
