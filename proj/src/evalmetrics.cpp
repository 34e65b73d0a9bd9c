#include "mcqrag/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "mcqrag/textcorpus.hpp"
#include "mcqrag/utf8.hpp"

namespace mcqrag {

namespace {

using NgramCounts = std::map<TokenSequence, std::size_t>;

NgramCounts count_ngrams(const TokenSequence& tokens, std::size_t n) {
  NgramCounts counts;
  if (n == 0 || tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[TokenSequence(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                           tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

TokenSequence tokenize(std::string_view text) {
  TokenSequence tokens;
  std::u32string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(utf8::encode(current));
    current.clear();
  };
  for (char32_t cp : utf8::decode(normalize_text(text))) {
    if (utf8::is_whitespace(cp)) {
      flush();
    } else if (utf8::is_punctuation(cp)) {
      flush();
      tokens.push_back(utf8::encode(std::u32string(1, cp)));
    } else {
      current.push_back(cp);
    }
  }
  flush();
  return tokens;
}

double accuracy(const std::vector<Option>& predictions, const std::vector<Option>& golds) {
  if (predictions.size() != golds.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("accuracy: no predictions");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (is_choice(predictions[i]) && predictions[i] == golds[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

PrfScore ngram_prf(const TokenSequence& candidate, const TokenSequence& reference, std::size_t n) {
  if (n == 0) throw std::invalid_argument("ngram_prf: n must be >= 1");
  if (candidate.size() < n || reference.size() < n) return {};
  const auto cand = count_ngrams(candidate, n);
  const auto ref = count_ngrams(reference, n);
  std::size_t matched = 0;
  for (const auto& [gram, count] : cand) {
    if (auto it = ref.find(gram); it != ref.end()) matched += std::min(count, it->second);
  }
  PrfScore s;
  s.precision = static_cast<double>(matched) / static_cast<double>(candidate.size() - n + 1);
  s.recall = static_cast<double>(matched) / static_cast<double>(reference.size() - n + 1);
  s.f = f1(s.precision, s.recall);
  return s;
}

std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

PrfScore rouge_l(const TokenSequence& candidate, const TokenSequence& reference, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("rouge_l: beta must be positive");
  if (candidate.empty() || reference.empty()) return {};
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  PrfScore s;
  s.precision = lcs / static_cast<double>(candidate.size());
  s.recall = lcs / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  const double denom = b2 * s.precision + s.recall;
  s.f = denom > 0.0 ? (1.0 + b2) * s.precision * s.recall / denom : 0.0;
  return s;
}

double meteor(const TokenSequence& candidate, const TokenSequence& reference) {
  std::vector<bool> used(reference.size(), false);
  std::vector<std::ptrdiff_t> aligned(candidate.size(), -1);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      if (!used[j] && reference[j] == candidate[i]) {
        used[j] = true;
        aligned[i] = static_cast<std::ptrdiff_t>(j);
        ++matches;
        break;
      }
    }
  }
  if (matches == 0) return 0.0;

  std::size_t chunks = 0;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (aligned[i] < 0) continue;
    const bool continues = i > 0 && aligned[i - 1] >= 0 && aligned[i - 1] + 1 == aligned[i];
    if (!continues) ++chunks;
  }

  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double f_mean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return f_mean * (1.0 - penalty);
}

double bleu(const TokenSequence& candidate, const std::vector<TokenSequence>& references,
            const std::vector<double>& weights, const BleuOptions& options) {
  if (weights.empty()) throw std::invalid_argument("bleu: weights must not be empty");
  if (references.empty()) throw std::invalid_argument("bleu: at least one reference required");
  if (candidate.empty()) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= weights.size(); ++n) {
    if (candidate.size() < n) return 0.0;
    const auto cand = count_ngrams(candidate, n);
    std::map<TokenSequence, std::size_t> max_ref;
    for (const auto& ref : references) {
      for (const auto& [gram, count] : count_ngrams(ref, n)) {
        auto& slot = max_ref[gram];
        slot = std::max(slot, count);
      }
    }
    std::size_t clipped = 0;
    for (const auto& [gram, count] : cand) {
      if (auto it = max_ref.find(gram); it != max_ref.end()) clipped += std::min(count, it->second);
    }
    const double total = static_cast<double>(candidate.size() - n + 1);
    double p = static_cast<double>(clipped) / total;
    if (clipped == 0) {
      if (!options.smoothing) return 0.0;
      p = options.epsilon / total;
    }
    log_sum += weights[n - 1] * std::log(p);
  }

  const auto c = candidate.size();
  std::size_t r = references.front().size();
  for (const auto& ref : references) {
    const auto d = ref.size() > c ? ref.size() - c : c - ref.size();
    const auto best = r > c ? r - c : c - r;
    if (d < best || (d == best && ref.size() < r)) r = ref.size();
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::exp(log_sum);
}

double bertscore_f1(const Eigen::MatrixXd& candidate, const Eigen::MatrixXd& reference) {
  if (candidate.rows() == 0 || reference.rows() == 0) return 0.0;
  if (candidate.cols() != reference.cols()) throw std::invalid_argument("bertscore: dimension mismatch");
  auto unit_rows = [](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double norm = out.row(i).norm();
      if (norm > 0.0) out.row(i) /= norm;
    }
    return out;
  };
  const Eigen::MatrixXd sim = (unit_rows(candidate) * unit_rows(reference).transpose()).cwiseMax(0.0).cwiseMin(1.0);
  const double precision = sim.rowwise().maxCoeff().mean();
  const double recall = sim.colwise().maxCoeff().mean();
  return f1(precision, recall);
}

double bertscore_f1(const TokenSequence& candidate, const TokenSequence& reference, const TokenEmbedder& embed) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::vector<std::string> distinct;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto* seq : {&candidate, &reference}) {
    for (const auto& t : *seq) {
      if (slot.emplace(t, distinct.size()).second) distinct.push_back(t);
    }
  }
  const auto vectors = embed(distinct);
  if (vectors.size() != distinct.size()) throw std::runtime_error("bertscore: embedder returned wrong count");
  const auto dim = vectors.front().size();
  auto rows = [&](const TokenSequence& seq) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(seq.size()), dim);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto& v = vectors[slot.at(seq[i])];
      if (v.size() != dim) throw std::runtime_error("bertscore: embedder returned mixed dimensions");
      m.row(static_cast<Eigen::Index>(i)) = v.transpose();
    }
    return m;
  };
  return bertscore_f1(rows(candidate), rows(reference));
}

MetricBundle score_rationale(std::string_view generated, std::string_view gold, const TokenEmbedder& embed,
                             double rouge_beta) {
  const auto cand = tokenize(generated);
  const auto ref = tokenize(gold);
  MetricBundle b;
  b.meteor = meteor(cand, ref);
  b.rouge1 = ngram_prf(cand, ref, 1);
  b.rouge2 = ngram_prf(cand, ref, 2);
  b.rougeL = rouge_l(cand, ref, rouge_beta);
  b.bleu1 = bleu1(cand, ref);
  b.bleu2 = bleu2(cand, ref);
  if (embed) b.bert_f1 = bertscore_f1(cand, ref, embed);
  return b;
}

}  // namespace mcqrag
