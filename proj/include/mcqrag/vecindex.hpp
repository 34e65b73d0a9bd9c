#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mcqrag/providers.hpp"
#include "mcqrag/textcorpus.hpp"

namespace mcqrag {

/// Cosine similarity of two dense vectors; 0 when either has zero norm.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& u,
                                            const Eigen::MatrixBase<DerivedB>& v) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar nu = u.norm();
  const Scalar nv = v.norm();
  if (nu == Scalar(0) || nv == Scalar(0)) return Scalar(0);
  return u.dot(v) / (nu * nv);
}

using EmbeddingMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct IndexEntry {
  std::string chunk_id;
  std::string text;
};

class IndexError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the embedding provider gives up on a batch, or returns a vector
/// that breaks the index invariants. Names the chunks involved.
class IndexBuildError : public IndexError {
 public:
  IndexBuildError(const std::string& what, std::vector<std::string> chunk_ids)
      : IndexError(what), chunk_ids_(std::move(chunk_ids)) {}
  const std::vector<std::string>& chunk_ids() const { return chunk_ids_; }

 private:
  std::vector<std::string> chunk_ids_;
};

/// Immutable flat index: one row of `vectors()` per entry.
class VectorIndex {
 public:
  VectorIndex() = default;
  VectorIndex(std::vector<IndexEntry> entries, EmbeddingMatrix vectors, std::string fingerprint);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  Eigen::Index dimension() const { return vectors_.cols(); }
  const std::vector<IndexEntry>& entries() const { return entries_; }
  const EmbeddingMatrix& vectors() const { return vectors_; }
  const std::string& fingerprint() const { return fingerprint_; }

  /// Versioned little-endian binary file plus a JSON sidecar (<path>.json)
  /// recording the fingerprint.
  void save(const std::filesystem::path& path) const;
  static VectorIndex load(const std::filesystem::path& path);

 private:
  std::vector<IndexEntry> entries_;
  EmbeddingMatrix vectors_;
  std::string fingerprint_;
};

/// Hash of chunk ids, offsets and texts plus the embedder identity.
std::string index_fingerprint(const std::vector<Chunk>& chunks, std::string_view embedder_identity);

std::filesystem::path index_cache_path(const std::filesystem::path& cache_dir, std::string_view fingerprint);

/// Embeds every chunk in provider-sized batches. With a cache directory, an
/// index whose fingerprint matches is loaded from disk without provider calls
/// and a fresh build is written back.
VectorIndex build_index(const std::vector<Chunk>& chunks, ProviderHub& hub,
                        const std::filesystem::path& cache_dir = {});

enum class ContextOrigin { local, web };

std::string_view to_string(ContextOrigin origin);

struct Passage {
  std::string source;  // chunk id or URL
  std::string text;
  double score = 0.0;  // cosine for local passages
  int rank = 0;        // 1-based
};

struct RetrievedContext {
  std::vector<Passage> passages;
  int k_requested = 0;
  std::size_t total_chars = 0;  // Unicode scalar values over all passage texts
  ContextOrigin origin = ContextOrigin::local;

  bool empty() const { return total_chars == 0; }
  void add(Passage p);
};

struct ScoredEntry {
  std::size_t index;
  double score;
};

/// Exact top-k by descending cosine, ties broken by ascending chunk id.
std::vector<ScoredEntry> rank_entries(const VectorIndex& index, const EmbeddingVector& query, std::size_t k);

RetrievedContext retrieve_by_vector(const VectorIndex& index, const EmbeddingVector& query, int k);

/// Embeds `query` and returns the k most similar chunks (fewer when the index
/// is smaller). Provider failures propagate as ProviderUnavailable.
RetrievedContext retrieve(const VectorIndex& index, std::string_view query, int k, ProviderHub& hub);

}  // namespace mcqrag
