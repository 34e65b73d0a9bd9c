#pragma once

// Brute-force reference implementations used by the unit and acceptance
// tests. They favour obviousness over speed and share no code with the
// library beyond the data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mcqrag/dataset.hpp"
#include "mcqrag/evalmetrics.hpp"
#include "mcqrag/strategies.hpp"
#include "mcqrag/textcorpus.hpp"
#include "mcqrag/utf8.hpp"
#include "mcqrag/vecindex.hpp"

namespace oracle {

using Tokens = std::vector<std::string>;

/// Every sequence over `alphabet` of length 0..max_len.
inline std::vector<Tokens> all_sequences(const std::vector<std::string>& alphabet, std::size_t max_len) {
  std::vector<Tokens> out{{}};
  std::vector<Tokens> frontier{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<Tokens> next;
    for (const auto& prefix : frontier) {
      for (const auto& sym : alphabet) {
        auto s = prefix;
        s.push_back(sym);
        next.push_back(s);
      }
    }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

inline bool same_ngram(const Tokens& a, std::size_t i, const Tokens& b, std::size_t j, std::size_t n) {
  for (std::size_t t = 0; t < n; ++t) {
    if (a[i + t] != b[j + t]) return false;
  }
  return true;
}

/// Clipped n-gram matches by pairing positions: each candidate n-gram takes
/// any still-unused equal reference n-gram.
inline std::size_t matched_ngrams(const Tokens& cand, const Tokens& ref, std::size_t n) {
  if (cand.size() < n || ref.size() < n) return 0;
  std::vector<bool> used(ref.size() - n + 1, false);
  std::size_t matched = 0;
  for (std::size_t i = 0; i + n <= cand.size(); ++i) {
    for (std::size_t j = 0; j + n <= ref.size(); ++j) {
      if (!used[j] && same_ngram(cand, i, ref, j, n)) {
        used[j] = true;
        ++matched;
        break;
      }
    }
  }
  return matched;
}

inline mcqrag::PrfScore rouge_n(const Tokens& cand, const Tokens& ref, std::size_t n) {
  if (cand.size() < n || ref.size() < n) return {};
  const double m = static_cast<double>(matched_ngrams(cand, ref, n));
  const double p = m / static_cast<double>(cand.size() - n + 1);
  const double r = m / static_cast<double>(ref.size() - n + 1);
  return {p, r, p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r)};
}

inline bool is_subsequence(const Tokens& sub, const Tokens& seq) {
  std::size_t j = 0;
  for (const auto& t : seq) {
    if (j < sub.size() && sub[j] == t) ++j;
  }
  return j == sub.size();
}

/// Longest common subsequence by trying every subset of `a`.
inline std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::size_t best = 0;
  const std::size_t subsets = std::size_t{1} << a.size();
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    Tokens sub;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (mask & (std::size_t{1} << i)) sub.push_back(a[i]);
    }
    if (sub.size() > best && is_subsequence(sub, b)) best = sub.size();
  }
  return best;
}

inline mcqrag::PrfScore rouge_l(const Tokens& cand, const Tokens& ref, double beta = 1.0) {
  if (cand.empty() || ref.empty()) return {};
  const double l = static_cast<double>(lcs(cand, ref));
  const double p = l / static_cast<double>(cand.size());
  const double r = l / static_cast<double>(ref.size());
  const double b2 = beta * beta;
  const double d = b2 * p + r;
  return {p, r, d == 0.0 ? 0.0 : (1.0 + b2) * p * r / d};
}

/// METEOR with the k-th occurrence of each token in the candidate aligned to
/// the k-th occurrence of the same token in the reference.
inline double meteor(const Tokens& cand, const Tokens& ref) {
  std::vector<long> align(cand.size(), -1);
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const auto occurrence = std::count(cand.begin(), cand.begin() + static_cast<long>(i), cand[i]);
    long seen = 0;
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (ref[j] != cand[i]) continue;
      if (seen == occurrence) {
        align[i] = static_cast<long>(j);
        break;
      }
      ++seen;
    }
  }
  const auto matches = static_cast<std::size_t>(std::count_if(align.begin(), align.end(), [](long a) { return a >= 0; }));
  if (matches == 0) return 0.0;
  std::size_t joined = 0;  // adjacent matched pairs that continue one chunk
  for (std::size_t i = 0; i + 1 < cand.size(); ++i) {
    if (align[i] >= 0 && align[i + 1] == align[i] + 1) ++joined;
  }
  const std::size_t chunks = matches - joined;
  const double p = static_cast<double>(matches) / static_cast<double>(cand.size());
  const double r = static_cast<double>(matches) / static_cast<double>(ref.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / static_cast<double>(matches), 3.0);
  return fmean * (1.0 - penalty);
}

/// Single-reference BLEU: product of p_n^w_n times the brevity penalty.
inline double bleu(const Tokens& cand, const Tokens& ref, const std::vector<double>& weights) {
  if (cand.empty()) return 0.0;
  double score = 1.0;
  for (std::size_t n = 1; n <= weights.size(); ++n) {
    if (cand.size() < n) return 0.0;
    const double p = static_cast<double>(matched_ngrams(cand, ref, n)) / static_cast<double>(cand.size() - n + 1);
    if (p == 0.0) return 0.0;
    score *= std::pow(p, weights[n - 1]);
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * score;
}

/// The formal routing policy written out case by case.
inline mcqrag::Route route(bool yes, std::size_t local, std::size_t web, std::size_t tau1, std::size_t tau2) {
  if (yes) return local > tau1 ? mcqrag::Route::local : mcqrag::Route::zero_shot;
  return web > tau2 ? mcqrag::Route::web : mcqrag::Route::zero_shot;
}

struct VoteOutcome {
  mcqrag::Option option;
  mcqrag::DecisionKind kind;
};

/// Voting rules for three votes cast at k = 3, 5, 6.
inline VoteOutcome vote3(mcqrag::Option v3, mcqrag::Option v5, mcqrag::Option v6) {
  if (v3 == v5 && v5 == v6) return {v3, mcqrag::DecisionKind::unanimous};
  if (v3 == v5 || v3 == v6) return {v3, mcqrag::DecisionKind::majority};
  if (v5 == v6) return {v5, mcqrag::DecisionKind::majority};
  return {v6, mcqrag::DecisionKind::tie};
}

/// Full scan: cosine of every row, sorted by (score desc, chunk id asc).
inline std::vector<std::size_t> top_k(const mcqrag::VectorIndex& index, const mcqrag::EmbeddingVector& q,
                                      std::size_t k) {
  std::vector<std::pair<double, std::size_t>> scored;
  const auto& m = index.vectors();
  double qq = 0.0;
  for (Eigen::Index d = 0; d < q.size(); ++d) qq += q[d] * q[d];
  for (std::size_t i = 0; i < index.size(); ++i) {
    double dot = 0.0, rr = 0.0;
    for (Eigen::Index d = 0; d < q.size(); ++d) {
      dot += m(static_cast<Eigen::Index>(i), d) * q[d];
      rr += m(static_cast<Eigen::Index>(i), d) * m(static_cast<Eigen::Index>(i), d);
    }
    const double score = (qq == 0.0 || rr == 0.0) ? 0.0 : dot / (std::sqrt(qq) * std::sqrt(rr));
    scored.emplace_back(score, i);
  }
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return index.entries()[a.second].chunk_id < index.entries()[b.second].chunk_id;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(scored[i].second);
  return out;
}

/// Empty string when the chunks satisfy the coverage and overlap invariants
/// for a document of `total` code points, otherwise a description.
inline std::string check_chunks(const std::u32string& text, const std::vector<mcqrag::Chunk>& chunks,
                                const mcqrag::ChunkingConfig& cfg) {
  const std::size_t total = text.size();
  if (total == 0) return chunks.empty() ? "" : "chunks for an empty document";
  if (chunks.empty()) return "no chunks for a non-empty document";
  std::vector<int> covered(total, 0);
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto& c = chunks[i];
    if (c.char_start != i * cfg.stride()) return "chunk " + std::to_string(i) + " starts off-stride";
    if (c.char_len == 0 || c.char_len > cfg.chunk_size) return "chunk " + std::to_string(i) + " has a bad length";
    if (c.char_start + c.char_len > total) return "chunk " + std::to_string(i) + " runs past the end";
    if (i + 1 < chunks.size() && c.char_len != cfg.chunk_size) return "short chunk before the last";
    if (mcqrag::utf8::decode(c.text) != text.substr(c.char_start, c.char_len)) return "chunk text mismatch";
    if (i > 0) {
      const auto& prev = chunks[i - 1];
      const std::size_t shared = prev.char_start + prev.char_len - c.char_start;
      if (shared != std::min(cfg.overlap, prev.char_len)) return "wrong overlap at chunk " + std::to_string(i);
      if (!(prev.chunk_id < c.chunk_id)) return "chunk ids out of order";
    }
    for (std::size_t p = c.char_start; p < c.char_start + c.char_len; ++p) ++covered[p];
  }
  if (std::find(covered.begin(), covered.end(), 0) != covered.end()) return "uncovered position";
  const auto& last = chunks.back();
  if (last.char_start + last.char_len != total) return "last chunk does not reach the end";
  if (chunks.size() >= 2) {
    const auto& before = chunks[chunks.size() - 2];
    if (before.char_start + before.char_len >= total) return "redundant trailing chunk";
  }
  return "";
}

}  // namespace oracle
