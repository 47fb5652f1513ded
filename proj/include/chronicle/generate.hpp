#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "chronicle/model.hpp"
#include "chronicle/random.hpp"

namespace chronicle {

struct SamplerConfig {
  int top_k{100};
  double temperature{1.0};
  std::uint64_t seed{0};
  int max_new_tokens{15};
  // When set, max_new_tokens counts concept tokens only; structural tokens
  // are still sampled but do not use up the budget.
  bool concepts_only{false};

  void validate() const {
    if (top_k < 1) throw Error(Errc::InvalidArgument, "top_k must be >= 1");
    if (!(temperature > 0.0)) throw Error(Errc::InvalidArgument, "temperature must be > 0");
    if (max_new_tokens < 0) throw Error(Errc::InvalidArgument, "max_new_tokens must be >= 0");
  }
};

struct Generation {
  std::vector<int> tokens;
  std::vector<bool> generated;  // false for prompt positions
};

/// Indices of the k largest logits among real tokens (Pad and Unknown are
/// never candidates), ordered by logit descending then index ascending.
template <class T>
std::vector<int> top_k_indices(const std::vector<T>& logits, int k) {
  std::vector<int> idx;
  idx.reserve(logits.size());
  for (int i = 0; i < static_cast<int>(logits.size()); ++i) {
    if (i != Vocab::kPad && i != Vocab::kUnknown) idx.push_back(i);
  }
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), idx.size());
  auto cmp = [&](int a, int b) {
    const auto la = logits[static_cast<std::size_t>(a)];
    const auto lb = logits[static_cast<std::size_t>(b)];
    return la != lb ? la > lb : a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(), cmp);
  idx.resize(kk);
  return idx;
}

/// Extends `prompt` by sampling from the renormalised top-k of the
/// temperature-scaled next-token distribution. Stops early on DEATH or when
/// the context window is full.
template <class T>
Generation generate(const Model<T>& m, std::span<const int> prompt, const SamplerConfig& sc) {
  sc.validate();
  detail::check_tokens(m, prompt);
  Generation g;
  g.tokens.assign(prompt.begin(), prompt.end());
  g.generated.assign(prompt.size(), false);
  if (sc.max_new_tokens == 0) return g;
  if (prompt.empty()) throw Error(Errc::InvalidArgument, "empty prompt");

  const auto death = m.vocab.find("DEATH");
  std::mt19937_64 rng(sc.seed);
  int produced = 0;
  while (produced < sc.max_new_tokens &&
         static_cast<int>(g.tokens.size()) < m.config.context_len) {
    const auto logits = next_logits(m, std::span<const int>(g.tokens));
    const auto cand = top_k_indices(logits, sc.top_k);
    if (cand.empty()) break;
    const double top = static_cast<double>(logits[static_cast<std::size_t>(cand.front())]);
    std::vector<double> w(cand.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      w[i] = std::exp((static_cast<double>(logits[static_cast<std::size_t>(cand[i])]) - top) /
                      sc.temperature);
      sum += w[i];
    }
    const double u = unit_uniform(rng) * sum;
    std::size_t pick = cand.size() - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      acc += w[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    const int next = cand[pick];
    g.tokens.push_back(next);
    g.generated.push_back(true);
    if (!sc.concepts_only || m.vocab.is_concept(next)) ++produced;
    if (death && next == *death) break;
  }
  return g;
}

/// Importance of each prefix position for the `target` logit at the last
/// position: L2 norm of the gradient with respect to that position's input
/// embedding, normalised to sum to one.
template <class T>
std::vector<double> saliency(const Model<T>& m, std::span<const int> prefix, int target) {
  if (prefix.empty()) throw Error(Errc::InvalidArgument, "empty prefix");
  if (target < 0 || target >= m.vocab_size()) {
    throw Error(Errc::IndexOutOfVocab, "target index " + std::to_string(target));
  }
  ForwardCache<T> cache;
  forward_cached(m, prefix, cache);
  const int n = cache.n;
  const int V = m.vocab_size();
  const int d = m.config.embedding_dim;
  std::vector<T> dlogits(static_cast<std::size_t>(n) * V, T(0));
  dlogits[static_cast<std::size_t>(n - 1) * V + static_cast<std::size_t>(target)] = T(1);
  std::vector<T> dx;
  backward(m, cache, dlogits, static_cast<std::vector<T>*>(nullptr), &dx);

  std::vector<double> scores(static_cast<std::size_t>(n), 0.0);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int k = 0; k < d; ++k) {
      const double v = static_cast<double>(dx[static_cast<std::size_t>(i) * d + k]);
      sq += v * v;
    }
    scores[static_cast<std::size_t>(i)] = std::sqrt(sq);
    sum += scores[static_cast<std::size_t>(i)];
  }
  if (sum <= 0.0) {
    std::fill(scores.begin(), scores.end(), 1.0 / n);
  } else {
    for (auto& s : scores) s /= sum;
  }
  return scores;
}

}  // namespace chronicle
