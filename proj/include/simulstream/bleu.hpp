#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "simulstream/error.hpp"
#include "simulstream/manifest.hpp"

namespace simulstream {

constexpr int kBleuOrder = 4;

using TokenList = std::vector<std::string>;

namespace detail {

using NgramCounts = std::map<std::vector<std::string>, int>;

inline NgramCounts count_ngrams(const TokenList& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::vector<std::string> gram(tokens.begin() + i, tokens.begin() + i + n);
    ++counts[std::move(gram)];
  }
  return counts;
}

}  // namespace detail

// Clipped n-gram match statistics pooled over a corpus.
struct BleuStats {
  std::array<std::int64_t, kBleuOrder> correct{};
  std::array<std::int64_t, kBleuOrder> total{};
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;

  void add_sentence(const TokenList& reference, const TokenList& hypothesis) {
    hyp_len += static_cast<std::int64_t>(hypothesis.size());
    ref_len += static_cast<std::int64_t>(reference.size());
    for (int n = 1; n <= kBleuOrder; ++n) {
      auto hyp_counts = detail::count_ngrams(hypothesis, n);
      auto ref_counts = detail::count_ngrams(reference, n);
      for (const auto& [gram, count] : hyp_counts) {
        total[n - 1] += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end())
          correct[n - 1] += std::min(count, it->second);
      }
    }
  }

  BleuStats& operator+=(const BleuStats& other) {
    for (int n = 0; n < kBleuOrder; ++n) {
      correct[n] += other.correct[n];
      total[n] += other.total[n];
    }
    hyp_len += other.hyp_len;
    ref_len += other.ref_len;
    return *this;
  }

  // Corpus BLEU-4: geometric mean of clipped precisions times the
  // exponential brevity penalty, scaled to 0..100. Unsmoothed: zero matches
  // at any order give 0.
  double score() const {
    if (hyp_len == 0) return 0.0;
    double log_precision = 0.0;
    for (int n = 0; n < kBleuOrder; ++n) {
      if (correct[n] == 0) return 0.0;
      log_precision += std::log(static_cast<double>(correct[n]) /
                                static_cast<double>(total[n]));
    }
    double bp = hyp_len >= ref_len
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(ref_len) /
                                         static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_precision / kBleuOrder);
  }
};

// Corpus-level detokenized BLEU over pre-tokenized sentences.
inline double corpus_bleu(const std::vector<TokenList>& references,
                          const std::vector<TokenList>& hypotheses) {
  if (references.empty())
    throw DataError("corpus_bleu: empty corpus");
  if (references.size() != hypotheses.size())
    throw DataError("corpus_bleu: " + std::to_string(references.size()) +
                    " references vs " + std::to_string(hypotheses.size()) +
                    " hypotheses");
  BleuStats stats;
  for (size_t i = 0; i < references.size(); ++i)
    stats.add_sentence(references[i], hypotheses[i]);
  return stats.score();
}

// Metric-side tokenization, applied identically to hypotheses and
// references: trailing punctuation in . , ! ? ; : splits off as its own
// token (in order), then whitespace separates tokens. "end!?" becomes
// "end", "!", "?".
inline TokenList bleu_tokenize(const std::string& text) {
  static const std::string punct = ".,!?;:";
  TokenList out;
  for (auto& chunk : split_tokens(text)) {
    std::string tail;
    while (chunk.size() > 1 && punct.find(chunk.back()) != std::string::npos) {
      tail.insert(tail.begin(), chunk.back());
      chunk.pop_back();
    }
    out.push_back(chunk);
    for (char c : tail) out.push_back(std::string(1, c));
  }
  return out;
}

// Detokenized corpus BLEU over raw sentence strings.
inline double corpus_bleu_detok(const std::vector<std::string>& references,
                                const std::vector<std::string>& hypotheses) {
  if (references.empty()) throw DataError("corpus_bleu: empty corpus");
  if (references.size() != hypotheses.size())
    throw DataError("corpus_bleu: reference/hypothesis count mismatch");
  BleuStats stats;
  for (size_t i = 0; i < references.size(); ++i)
    stats.add_sentence(bleu_tokenize(references[i]),
                       bleu_tokenize(hypotheses[i]));
  return stats.score();
}

// Per-sentence diagnostic only: add-epsilon smoothed precisions
// ((correct+eps)/(total+eps), eps=0.1). Not the corpus metric.
inline double sentence_bleu_add_eps(const TokenList& reference,
                                    const TokenList& hypothesis,
                                    double eps = 0.1) {
  if (hypothesis.empty()) return 0.0;
  BleuStats stats;
  stats.add_sentence(reference, hypothesis);
  double log_precision = 0.0;
  for (int n = 0; n < kBleuOrder; ++n) {
    log_precision += std::log((static_cast<double>(stats.correct[n]) + eps) /
                              (static_cast<double>(stats.total[n]) + eps));
  }
  double bp = stats.hyp_len >= stats.ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(stats.ref_len) /
                                       static_cast<double>(stats.hyp_len));
  return 100.0 * bp * std::exp(log_precision / kBleuOrder);
}

}  // namespace simulstream
