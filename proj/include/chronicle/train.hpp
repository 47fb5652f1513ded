#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "json.hpp"

#include "chronicle/model.hpp"
#include "chronicle/timeline.hpp"

namespace chronicle {

enum class Schedule { Linear };

struct TrainConfig {
  double learning_rate{3.14e-4};
  double weight_decay{1e-2};
  int batch_size{32};
  double warmup_ratio{0.01};
  int epochs{10};
  std::uint64_t seed{0};
  Schedule schedule{Schedule::Linear};
  double max_grad_norm{1.0};  // <= 0 disables clipping
  double beta1{0.9};
  double beta2{0.999};
  double adam_eps{1e-8};
  int threads{1};

  void validate() const {
    if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) {
      throw Error(Errc::InvalidArgument, "warmup_ratio must lie in [0, 1]");
    }
    if (epochs < 0) throw Error(Errc::InvalidArgument, "epochs must be >= 0");
    if (batch_size < 1) throw Error(Errc::InvalidArgument, "batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw Error(Errc::InvalidArgument, "learning_rate must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},       {"warmup_ratio", c.warmup_ratio},
       {"epochs", c.epochs},               {"seed", c.seed},
       {"schedule", "linear"},             {"max_grad_norm", c.max_grad_norm},
       {"beta1", c.beta1},                 {"beta2", c.beta2},
       {"adam_eps", c.adam_eps}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.warmup_ratio = j.at("warmup_ratio").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  if (j.at("schedule").get<std::string>() != "linear") {
    throw Error(Errc::ParseError, "unsupported schedule");
  }
  c.max_grad_norm = j.value("max_grad_norm", 1.0);
  c.beta1 = j.value("beta1", 0.9);
  c.beta2 = j.value("beta2", 0.999);
  c.adam_eps = j.value("adam_eps", 1e-8);
}

/// Learning-rate multiplier: linear warmup over `warmup` steps then linear
/// decay to zero at `total`.
inline double linear_schedule(std::int64_t step, std::int64_t warmup, std::int64_t total) {
  if (step < warmup) return static_cast<double>(step) / static_cast<double>(std::max<std::int64_t>(1, warmup));
  return std::max(0.0, static_cast<double>(total - step) /
                           static_cast<double>(std::max<std::int64_t>(1, total - warmup)));
}

/// Adam with decoupled weight decay; decay applies to matrices only.
template <class T>
class AdamW {
 public:
  AdamW(const ParamLayout& layout, const TrainConfig& tc)
      : layout_(&layout), tc_(tc), m_(layout.total, T(0)), v_(layout.total, T(0)) {}

  void step(std::vector<T>& params, const std::vector<T>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(tc_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(tc_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(tc_.beta1);
    const T b2 = static_cast<T>(tc_.beta2);
    for (const auto& info : layout_->tensors) {
      const T decay = info.decay ? static_cast<T>(lr * tc_.weight_decay) : T(0);
      for (std::size_t i = info.offset; i < info.offset + info.size(); ++i) {
        const T g = grads[i];
        m_[i] = b1 * m_[i] + (T(1) - b1) * g;
        v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
        const double mhat = static_cast<double>(m_[i]) / bc1;
        const double vhat = static_cast<double>(v_[i]) / bc2;
        params[i] -= decay * params[i];
        params[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + tc_.adam_eps));
      }
    }
  }

 private:
  const ParamLayout* layout_;
  TrainConfig tc_;
  std::vector<T> m_, v_;
  std::int64_t t_{0};
};

template <class T>
void clip_grad_norm(std::vector<T>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (T g : grads) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& g : grads) g *= s;
  }
}

/// Encodes fragments for the model; sequences longer than the context are
/// truncated to their first context_len tokens.
inline std::vector<std::vector<int>> encode_corpus(const Vocab& vocab,
                                                   const std::vector<Timeline>& corpus,
                                                   int context_len) {
  std::vector<std::vector<int>> out;
  out.reserve(corpus.size());
  for (const auto& t : corpus) {
    auto ids = vocab.encode(t);
    if (static_cast<int>(ids.size()) > context_len) ids.resize(static_cast<std::size_t>(context_len));
    out.push_back(std::move(ids));
  }
  return out;
}

struct TrainResult {
  std::vector<double> epoch_loss;  // token-weighted mean loss per epoch
  std::int64_t steps{0};
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Optimises the causal language-modelling objective over `corpus`.
/// Deterministic for a given seed and thread count.
template <class T>
TrainResult train(Model<T>& m, const std::vector<Timeline>& corpus, const TrainConfig& tc,
                  const EpochCallback& on_epoch = {}) {
  tc.validate();
  auto seqs = encode_corpus(m.vocab, corpus, m.config.context_len);
  std::erase_if(seqs, [](const std::vector<int>& s) { return s.size() < 2; });
  if (seqs.empty()) throw Error(Errc::EmptyCorpus, "no trainable sequences");

  const auto batch = static_cast<std::size_t>(tc.batch_size);
  const std::int64_t per_epoch = static_cast<std::int64_t>((seqs.size() + batch - 1) / batch);
  const std::int64_t total = per_epoch * tc.epochs;
  const auto warmup = static_cast<std::int64_t>(std::ceil(tc.warmup_ratio * static_cast<double>(total)));

  AdamW<T> opt(m.layout, tc);
  std::mt19937_64 rng(tc.seed);
  TrainResult result;
  std::vector<std::size_t> order(seqs.size());
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
    double loss_sum = 0.0;
    std::size_t target_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<std::vector<int>> picked;
      std::vector<std::uint64_t> seeds;
      for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) {
        picked.push_back(seqs[order[k]]);
        seeds.push_back(rng());
      }
      const Batch b = make_batch(std::move(picked));
      auto lg = loss_and_gradients(m, b, true, tc.threads, &seeds);
      clip_grad_norm(lg.grads, tc.max_grad_norm);
      const double lr = tc.learning_rate * linear_schedule(result.steps, warmup, total);
      opt.step(m.params, lg.grads, lr);
      ++result.steps;
      loss_sum += lg.loss * static_cast<double>(lg.targets);
      target_sum += lg.targets;
    }
    const double mean = target_sum ? loss_sum / static_cast<double>(target_sum) : 0.0;
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

}  // namespace chronicle
