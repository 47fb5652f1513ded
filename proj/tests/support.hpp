#pragma once

// Helpers shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "chronicle/model.hpp"
#include "chronicle/synthgen.hpp"
#include "chronicle/vocab.hpp"

namespace chronicle::testing {

/// Vocab with Pad, Unknown and `real` concept tokens C:T00, C:T01, ...
inline Vocab numbered_vocab(int real) {
  Vocab v;
  for (int i = 0; i < real; ++i) {
    char s[16];
    std::snprintf(s, sizeof s, "C:T%02d", i);
    v.add(s, ConceptType::Disorder);
  }
  return v;
}

inline ModelConfig tiny_config(int d = 8, int layers = 1, int heads = 2, int ctx = 16, int ff = 16) {
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.embedding_dim = d;
  c.context_len = ctx;
  c.feedforward_dim = ff;
  c.dropout = 0.0;
  return c;
}

/// Model with every parameter drawn from N(0, scale^2) (LayerNorm gains
/// around 1) so that no gradient is structurally tiny.
template <class T>
Model<T> random_model(const ModelConfig& c, const Vocab& v, std::uint64_t seed, double scale = 0.5) {
  Model<T> m(c, v);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (const auto& t : m.layout.tensors) {
    const bool gain = t.name.ends_with(".g");
    for (std::size_t i = 0; i < t.size(); ++i) {
      m.params[t.offset + i] = static_cast<T>((gain ? 1.0 : 0.0) + normal(rng));
    }
  }
  return m;
}

/// Uniformly random real-token sequences (indices >= 2).
inline std::vector<std::vector<int>> random_sequences(std::mt19937_64& rng, int count, int min_len,
                                                      int max_len, int vocab_size) {
  std::vector<std::vector<int>> out;
  for (int s = 0; s < count; ++s) {
    const int len = min_len + static_cast<int>(rng() % static_cast<unsigned>(max_len - min_len + 1));
    std::vector<int> seq;
    for (int i = 0; i < len; ++i) seq.push_back(2 + static_cast<int>(rng() % static_cast<unsigned>(vocab_size - 2)));
    out.push_back(seq);
  }
  return out;
}

struct GradCheck {
  double max_rel_error{0.0};
  std::string worst_tensor;
  std::size_t checked{0};
};

inline constexpr double kGradCheckStep = 1e-4;
inline constexpr double kGradCheckFloor = 1e-6;

/// Five-point central differences over every parameter (truncation error of
/// order h^4, so a larger step keeps round-off low). The relative error of
/// one entry is |a - n| / max(|a|, |n|, kGradCheckFloor).
inline GradCheck finite_difference_check(Model<double> m, const Batch& b) {
  const auto analytic = loss_and_gradients(m, b, true).grads;
  GradCheck out;
  const double h = kGradCheckStep;
  for (const auto& t : m.layout.tensors) {
    for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
      const double saved = m.params[i];
      auto at = [&](double delta) {
        m.params[i] = saved + delta;
        return loss(m, b);
      };
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      m.params[i] = saved;
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_tensor = t.name;
      }
      ++out.checked;
    }
  }
  return out;
}

/// Synthetic world pushed through the timeline pipeline.
struct SynthCorpus {
  SynthWorld world;
  Ontology ontology;
  std::vector<PatientRecord> records;  // frequency-filtered
  std::vector<Timeline> train;
  std::vector<Timeline> test;
  Vocab vocab;
};

inline SynthCorpus make_corpus(const SynthParams& p, const BuildConfig& bc, double test_fraction,
                               std::uint64_t split_seed = 1) {
  SynthCorpus c;
  c.world = build_world(p);
  c.ontology = c.world.ontology();
  const auto pop = sample_population(c.world, p.n_patients, mix_seed(p.seed, 1));
  c.records = apply_frequency_filters(aggregate_events(pop.events, pop.demographics), bc);
  const auto split = split_corpus(c.records, test_fraction, split_seed);
  c.train = build_timelines(split.train, c.ontology, bc);
  c.test = build_timelines(split.test, c.ontology, bc);
  c.vocab = build_vocab(c.train.empty() ? c.test : c.train, &c.ontology);
  return c;
}

}  // namespace chronicle::testing
