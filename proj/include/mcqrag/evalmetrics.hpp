#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mcqrag/dataset.hpp"
#include "mcqrag/providers.hpp"

namespace mcqrag {

using TokenSequence = std::vector<std::string>;

/// normalize_text, then split on Unicode whitespace; every punctuation code
/// point becomes a token of its own. No stemming.
TokenSequence tokenize(std::string_view text);

struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// Fraction of predictions equal to their gold option. NA and failed count
/// as wrong. Throws std::invalid_argument on empty or mismatched input.
double accuracy(const std::vector<Option>& predictions, const std::vector<Option>& golds);

/// Clipped n-gram overlap; all zeros when either side has no n-grams.
PrfScore ngram_prf(const TokenSequence& candidate, const TokenSequence& reference, std::size_t n);

std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b);

/// P = LCS/|cand|, R = LCS/|ref|, F = (1+b^2)PR / (b^2 P + R).
PrfScore rouge_l(const TokenSequence& candidate, const TokenSequence& reference, double beta = 1.0);

/// Exact-match unigram METEOR with the fragmentation penalty
/// 0.5 * (chunks/matches)^3 and F_mean = 10PR / (R + 9P).
double meteor(const TokenSequence& candidate, const TokenSequence& reference);

struct BleuOptions {
  /// Replace a zero match count by `epsilon` instead of returning 0.
  bool smoothing = false;
  double epsilon = 0.1;
};

/// Corpus-free sentence BLEU with reference clipping and the brevity penalty
/// against the closest reference length (ties go to the shorter one).
double bleu(const TokenSequence& candidate, const std::vector<TokenSequence>& references,
            const std::vector<double>& weights, const BleuOptions& options = {});

inline double bleu1(const TokenSequence& c, const TokenSequence& r) { return bleu(c, {r}, {1.0}); }
inline double bleu2(const TokenSequence& c, const TokenSequence& r) { return bleu(c, {r}, {0.5, 0.5}); }

/// Greedy max-cosine matching between token embeddings (one row per token).
/// Per-token similarities are clamped to [0, 1].
double bertscore_f1(const Eigen::MatrixXd& candidate, const Eigen::MatrixXd& reference);

using TokenEmbedder = std::function<std::vector<EmbeddingVector>(const std::vector<std::string>&)>;

/// Embeds each distinct token once, then scores as above. Embedder failures propagate.
double bertscore_f1(const TokenSequence& candidate, const TokenSequence& reference, const TokenEmbedder& embed);

struct MetricBundle {
  int correct = 0;
  double bert_f1 = 0.0;
  double meteor = 0.0;
  PrfScore rouge1;
  PrfScore rouge2;
  PrfScore rougeL;
  double bleu1 = 0.0;
  double bleu2 = 0.0;
};

/// Every rationale metric of `generated` against `gold`. Without an embedder
/// bert_f1 is left at 0.
MetricBundle score_rationale(std::string_view generated, std::string_view gold, const TokenEmbedder& embed,
                             double rouge_beta = 1.0);

}  // namespace mcqrag
