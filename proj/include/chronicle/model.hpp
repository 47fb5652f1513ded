#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "chronicle/error.hpp"
#include "chronicle/nn_kernels.hpp"
#include "chronicle/vocab.hpp"

namespace chronicle {

/// Architecture hyperparameters of the decoder-only transformer.
struct ModelConfig {
  int n_layers{2};
  int n_heads{4};
  int embedding_dim{64};
  int context_len{520};  // >= 2 * 256 + 8 for the default timeline length
  int feedforward_dim{256};
  double dropout{0.0};

  /// Largest configuration, for full-scale training.
  static ModelConfig full_scale() { return ModelConfig{16, 16, 512, 520, 2048, 0.1}; }

  void validate() const {
    if (n_layers < 1 || n_heads < 1 || embedding_dim < 1 || context_len < 1 ||
        feedforward_dim < 1) {
      throw Error(Errc::InvalidArgument, "model dimensions must be positive");
    }
    if (embedding_dim % n_heads != 0) {
      throw Error(Errc::InvalidArgument, "embedding_dim must be divisible by n_heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw Error(Errc::InvalidArgument, "dropout must lie in [0, 1)");
    }
  }

  /// Timelines of up to `max_concepts` concepts need roughly one structural
  /// token per concept plus the prefix.
  void check_context_for(int max_concepts) const {
    if (context_len < 2 * max_concepts + 8) {
      throw Error(Errc::InvalidArgument, "context_len " + std::to_string(context_len) +
                                             " < 2*L+8 for L=" + std::to_string(max_concepts));
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_layers", c.n_layers},       {"n_heads", c.n_heads},
       {"embedding_dim", c.embedding_dim}, {"context_len", c.context_len},
       {"feedforward_dim", c.feedforward_dim}, {"dropout", c.dropout}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.context_len = j.at("context_len").get<int>();
  c.feedforward_dim = j.at("feedforward_dim").get<int>();
  c.dropout = j.at("dropout").get<double>();
}

struct TensorInfo {
  std::string name;
  int rows{0};
  int cols{0};
  std::size_t offset{0};
  bool decay{false};

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

struct LayerParams {
  std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
};

/// Offsets of every tensor inside the flat parameter vector. The tensor order
/// here is the on-disk order of weights.bin.
struct ParamLayout {
  std::vector<TensorInfo> tensors;
  std::vector<LayerParams> layers;
  std::size_t wte{0}, wpe{0}, lnf_g{0}, lnf_b{0}, head{0};
  std::size_t total{0};

  static ParamLayout make(const ModelConfig& c, int vocab_size) {
    ParamLayout p;
    const int d = c.embedding_dim;
    const int f = c.feedforward_dim;
    auto add = [&](std::string name, int rows, int cols, bool decay) {
      const std::size_t off = p.total;
      p.tensors.push_back(TensorInfo{std::move(name), rows, cols, off, decay});
      p.total += p.tensors.back().size();
      return off;
    };
    p.wte = add("wte", vocab_size, d, true);
    p.wpe = add("wpe", c.context_len, d, true);
    for (int l = 0; l < c.n_layers; ++l) {
      const std::string h = "h" + std::to_string(l) + ".";
      LayerParams lp{};
      lp.ln1_g = add(h + "ln1.g", 1, d, false);
      lp.ln1_b = add(h + "ln1.b", 1, d, false);
      lp.w_qkv = add(h + "attn.w_qkv", d, 3 * d, true);
      lp.b_qkv = add(h + "attn.b_qkv", 1, 3 * d, false);
      lp.w_o = add(h + "attn.w_o", d, d, true);
      lp.b_o = add(h + "attn.b_o", 1, d, false);
      lp.ln2_g = add(h + "ln2.g", 1, d, false);
      lp.ln2_b = add(h + "ln2.b", 1, d, false);
      lp.w_fc = add(h + "mlp.w_fc", d, f, true);
      lp.b_fc = add(h + "mlp.b_fc", 1, f, false);
      lp.w_proj = add(h + "mlp.w_proj", f, d, true);
      lp.b_proj = add(h + "mlp.b_proj", 1, d, false);
      p.layers.push_back(lp);
    }
    p.lnf_g = add("lnf.g", 1, d, false);
    p.lnf_b = add("lnf.b", 1, d, false);
    p.head = add("head", d, vocab_size, true);
    return p;
  }
};

/// Pre-norm GPT-2 style decoder. T is float for training and inference and
/// double for gradient checking.
template <class T>
struct Model {
  ModelConfig config;
  Vocab vocab;
  ParamLayout layout;
  std::vector<T> params;

  Model() = default;
  Model(ModelConfig c, Vocab v)
      : config(c), vocab(std::move(v)), layout(ParamLayout::make(config, vocab.size())),
        params(layout.total, T(0)) {
    config.validate();
  }

  int vocab_size() const { return vocab.size(); }
  const T* at(std::size_t off) const { return params.data() + off; }
  T* at(std::size_t off) { return params.data() + off; }
};

/// GPT-2 initialisation: N(0, 0.02), residual projections scaled by
/// 1/sqrt(2 * n_layers), unit LayerNorm gains, zero biases.
template <class T>
void init_parameters(Model<T>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double resid_std = 0.02 / std::sqrt(2.0 * m.config.n_layers);
  for (const auto& t : m.layout.tensors) {
    T* p = m.at(t.offset);
    const bool gain = t.name.ends_with(".g");
    const bool resid = t.name.ends_with("w_o") || t.name.ends_with("w_proj");
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (gain) {
        p[i] = T(1);
      } else if (!t.decay) {
        p[i] = T(0);
      } else {
        p[i] = static_cast<T>(normal(rng) * (resid ? resid_std : 0.02));
      }
    }
  }
}

template <class T>
Model<T> make_model(const ModelConfig& c, const Vocab& v, std::uint64_t seed) {
  Model<T> m(c, v);
  init_parameters(m, seed);
  return m;
}

template <class To, class From>
Model<To> cast_model(const Model<From>& src) {
  Model<To> out(src.config, src.vocab);
  for (std::size_t i = 0; i < src.params.size(); ++i) out.params[i] = static_cast<To>(src.params[i]);
  return out;
}

/// Row-major matrix of logits or probabilities.
template <class T>
struct Matrix {
  int rows{0};
  int cols{0};
  std::vector<T> data;

  const T* row(int i) const { return data.data() + static_cast<std::ptrdiff_t>(i) * cols; }
  T* row(int i) { return data.data() + static_cast<std::ptrdiff_t>(i) * cols; }
  T operator()(int i, int j) const { return row(i)[j]; }
};

template <class T>
struct LayerCache {
  std::vector<T> x_in, h1, mean1, rstd1, qkv, att, y, x_mid, h2, mean2, rstd2, fc, act;
  std::vector<T> drop1, drop2;  // per-element dropout scale, empty when off
};

template <class T>
struct ForwardCache {
  int n{0};
  std::vector<int> tokens;
  std::vector<T> x0;
  std::vector<LayerCache<T>> layers;
  std::vector<T> x_final, hf, meanf, rstdf;
  std::vector<T> logits;
};

namespace detail {

template <class T>
void check_tokens(const Model<T>& m, std::span<const int> tokens) {
  if (static_cast<int>(tokens.size()) > m.config.context_len) {
    throw Error(Errc::SequenceTooLong, std::to_string(tokens.size()) + " > context_len " +
                                           std::to_string(m.config.context_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= m.vocab_size()) {
      throw Error(Errc::IndexOutOfVocab, "token index " + std::to_string(t));
    }
  }
}

template <class T>
void fill_dropout(std::vector<T>& mask, std::size_t n, double rate, std::mt19937_64* rng) {
  if (!rng || rate <= 0.0) {
    mask.clear();
    return;
  }
  mask.resize(n);
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& v : mask) v = keep(*rng) ? scale : T(0);
}

}  // namespace detail

/// Full forward pass keeping every activation needed by backward(). Dropout
/// is applied only when `dropout_rng` is non-null.
template <class T>
void forward_cached(const Model<T>& m, std::span<const int> tokens, ForwardCache<T>& c,
                    std::mt19937_64* dropout_rng = nullptr) {
  detail::check_tokens(m, tokens);
  const auto& cfg = m.config;
  const int n = static_cast<int>(tokens.size());
  const int d = cfg.embedding_dim;
  const int f = cfg.feedforward_dim;
  const int H = cfg.n_heads;
  const int hd = d / H;
  const int V = m.vocab_size();
  const auto& L = m.layout;
  const std::size_t nd = static_cast<std::size_t>(n) * d;

  c.n = n;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.x0.assign(nd, T(0));
  for (int i = 0; i < n; ++i) {
    const T* te = m.at(L.wte) + static_cast<std::ptrdiff_t>(tokens[static_cast<std::size_t>(i)]) * d;
    const T* pe = m.at(L.wpe) + static_cast<std::ptrdiff_t>(i) * d;
    T* xr = c.x0.data() + static_cast<std::ptrdiff_t>(i) * d;
    for (int k = 0; k < d; ++k) xr[k] = te[k] + pe[k];
  }
  c.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  std::vector<T> x = c.x0;
  std::vector<T> tmp(nd);
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<T> scores(static_cast<std::size_t>(n));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& P = L.layers[static_cast<std::size_t>(l)];
    auto& lc = c.layers[static_cast<std::size_t>(l)];
    lc.x_in = x;
    lc.h1.resize(nd);
    lc.mean1.resize(static_cast<std::size_t>(n));
    lc.rstd1.resize(static_cast<std::size_t>(n));
    nn::layernorm(x.data(), m.at(P.ln1_g), m.at(P.ln1_b), lc.h1.data(), lc.mean1.data(),
                  lc.rstd1.data(), n, d);
    lc.qkv.resize(nd * 3);
    nn::linear(lc.h1.data(), m.at(P.w_qkv), m.at(P.b_qkv), lc.qkv.data(), n, d, 3 * d);

    lc.att.assign(static_cast<std::size_t>(H) * n * n, T(0));
    lc.y.assign(nd, T(0));
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < n; ++i) {
        const T* q = lc.qkv.data() + static_cast<std::ptrdiff_t>(i) * 3 * d + h * hd;
        for (int j = 0; j <= i; ++j) {
          const T* k = lc.qkv.data() + static_cast<std::ptrdiff_t>(j) * 3 * d + d + h * hd;
          T s = 0;
          for (int e = 0; e < hd; ++e) s += q[e] * k[e];
          scores[static_cast<std::size_t>(j)] = s * scale;
        }
        T* p = lc.att.data() + (static_cast<std::ptrdiff_t>(h) * n + i) * n;
        nn::softmax(scores.data(), p, i + 1);
        T* yr = lc.y.data() + static_cast<std::ptrdiff_t>(i) * d + h * hd;
        for (int j = 0; j <= i; ++j) {
          const T* v = lc.qkv.data() + static_cast<std::ptrdiff_t>(j) * 3 * d + 2 * d + h * hd;
          const T pj = p[j];
          for (int e = 0; e < hd; ++e) yr[e] += pj * v[e];
        }
      }
    }
    nn::linear(lc.y.data(), m.at(P.w_o), m.at(P.b_o), tmp.data(), n, d, d);
    detail::fill_dropout(lc.drop1, nd, cfg.dropout, dropout_rng);
    lc.x_mid.resize(nd);
    for (std::size_t i = 0; i < nd; ++i) {
      lc.x_mid[i] = x[i] + (lc.drop1.empty() ? tmp[i] : tmp[i] * lc.drop1[i]);
    }

    lc.h2.resize(nd);
    lc.mean2.resize(static_cast<std::size_t>(n));
    lc.rstd2.resize(static_cast<std::size_t>(n));
    nn::layernorm(lc.x_mid.data(), m.at(P.ln2_g), m.at(P.ln2_b), lc.h2.data(), lc.mean2.data(),
                  lc.rstd2.data(), n, d);
    const std::size_t nf = static_cast<std::size_t>(n) * f;
    lc.fc.resize(nf);
    lc.act.resize(nf);
    nn::linear(lc.h2.data(), m.at(P.w_fc), m.at(P.b_fc), lc.fc.data(), n, d, f);
    for (std::size_t i = 0; i < nf; ++i) lc.act[i] = nn::gelu(lc.fc[i]);
    nn::linear(lc.act.data(), m.at(P.w_proj), m.at(P.b_proj), tmp.data(), n, f, d);
    detail::fill_dropout(lc.drop2, nd, cfg.dropout, dropout_rng);
    for (std::size_t i = 0; i < nd; ++i) {
      x[i] = lc.x_mid[i] + (lc.drop2.empty() ? tmp[i] : tmp[i] * lc.drop2[i]);
    }
  }

  c.x_final = std::move(x);
  c.hf.resize(nd);
  c.meanf.resize(static_cast<std::size_t>(n));
  c.rstdf.resize(static_cast<std::size_t>(n));
  nn::layernorm(c.x_final.data(), m.at(L.lnf_g), m.at(L.lnf_b), c.hf.data(), c.meanf.data(),
                c.rstdf.data(), n, d);
  c.logits.resize(static_cast<std::size_t>(n) * V);
  nn::linear(c.hf.data(), m.at(L.head), static_cast<const T*>(nullptr), c.logits.data(), n, d, V);
}

/// Back-propagates `dlogits` (n x V) through a cached forward pass.
/// Parameter gradients are accumulated into `grads` (layout-shaped) when it is
/// non-null; the gradient with respect to the summed input embeddings
/// (token + position, n x d) is written to `dinput` when non-null.
template <class T>
void backward(const Model<T>& m, const ForwardCache<T>& c, const std::vector<T>& dlogits,
              std::vector<T>* grads, std::vector<T>* dinput) {
  const auto& cfg = m.config;
  const int n = c.n;
  const int d = cfg.embedding_dim;
  const int f = cfg.feedforward_dim;
  const int H = cfg.n_heads;
  const int hd = d / H;
  const int V = m.vocab_size();
  const auto& L = m.layout;
  const std::size_t nd = static_cast<std::size_t>(n) * d;
  const std::size_t nf = static_cast<std::size_t>(n) * f;
  T* G = grads ? grads->data() : nullptr;
  auto g = [&](std::size_t off) -> T* { return G ? G + off : nullptr; };

  std::vector<T> dhf(nd);
  nn::linear_backward(dlogits.data(), c.hf.data(), m.at(L.head), dhf.data(), g(L.head),
                      static_cast<T*>(nullptr), n, d, V);
  std::vector<T> dx(nd, T(0));
  nn::layernorm_backward(dhf.data(), c.x_final.data(), m.at(L.lnf_g), c.meanf.data(),
                         c.rstdf.data(), dx.data(), g(L.lnf_g), g(L.lnf_b), n, d);

  std::vector<T> dbranch(nd), dact(nf), dh(nd), dy(nd), dqkv(nd * 3);
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<T> dp(static_cast<std::size_t>(n));

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& P = L.layers[static_cast<std::size_t>(l)];
    const auto& lc = c.layers[static_cast<std::size_t>(l)];

    // MLP branch: x_out = x_mid + drop2 * proj(gelu(fc(ln2(x_mid))))
    for (std::size_t i = 0; i < nd; ++i) dbranch[i] = lc.drop2.empty() ? dx[i] : dx[i] * lc.drop2[i];
    nn::linear_backward(dbranch.data(), lc.act.data(), m.at(P.w_proj), dact.data(), g(P.w_proj),
                        g(P.b_proj), n, f, d);
    for (std::size_t i = 0; i < nf; ++i) dact[i] *= nn::gelu_grad(lc.fc[i]);
    nn::linear_backward(dact.data(), lc.h2.data(), m.at(P.w_fc), dh.data(), g(P.w_fc), g(P.b_fc),
                        n, d, f);
    nn::layernorm_backward(dh.data(), lc.x_mid.data(), m.at(P.ln2_g), lc.mean2.data(),
                           lc.rstd2.data(), dx.data(), g(P.ln2_g), g(P.ln2_b), n, d);

    // Attention branch: x_mid = x_in + drop1 * o(attn(qkv(ln1(x_in))))
    for (std::size_t i = 0; i < nd; ++i) dbranch[i] = lc.drop1.empty() ? dx[i] : dx[i] * lc.drop1[i];
    nn::linear_backward(dbranch.data(), lc.y.data(), m.at(P.w_o), dy.data(), g(P.w_o), g(P.b_o), n,
                        d, d);
    std::fill(dqkv.begin(), dqkv.end(), T(0));
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < n; ++i) {
        const T* p = lc.att.data() + (static_cast<std::ptrdiff_t>(h) * n + i) * n;
        const T* dyr = dy.data() + static_cast<std::ptrdiff_t>(i) * d + h * hd;
        T dot = 0;
        for (int j = 0; j <= i; ++j) {
          const std::ptrdiff_t vj = static_cast<std::ptrdiff_t>(j) * 3 * d + 2 * d + h * hd;
          const T* v = lc.qkv.data() + vj;
          T* dv = dqkv.data() + vj;
          T s = 0;
          for (int e = 0; e < hd; ++e) {
            s += dyr[e] * v[e];
            dv[e] += p[j] * dyr[e];
          }
          dp[static_cast<std::size_t>(j)] = s;
          dot += p[j] * s;
        }
        const std::ptrdiff_t qi = static_cast<std::ptrdiff_t>(i) * 3 * d + h * hd;
        const T* q = lc.qkv.data() + qi;
        T* dq = dqkv.data() + qi;
        for (int j = 0; j <= i; ++j) {
          const T ds = p[j] * (dp[static_cast<std::size_t>(j)] - dot) * scale;
          const std::ptrdiff_t kj = static_cast<std::ptrdiff_t>(j) * 3 * d + d + h * hd;
          const T* k = lc.qkv.data() + kj;
          T* dk = dqkv.data() + kj;
          for (int e = 0; e < hd; ++e) {
            dq[e] += ds * k[e];
            dk[e] += ds * q[e];
          }
        }
      }
    }
    nn::linear_backward(dqkv.data(), lc.h1.data(), m.at(P.w_qkv), dh.data(), g(P.w_qkv),
                        g(P.b_qkv), n, d, 3 * d);
    nn::layernorm_backward(dh.data(), lc.x_in.data(), m.at(P.ln1_g), lc.mean1.data(),
                           lc.rstd1.data(), dx.data(), g(P.ln1_g), g(P.ln1_b), n, d);
  }

  if (G) {
    for (int i = 0; i < n; ++i) {
      T* te = G + L.wte + static_cast<std::ptrdiff_t>(c.tokens[static_cast<std::size_t>(i)]) * d;
      T* pe = G + L.wpe + static_cast<std::ptrdiff_t>(i) * d;
      const T* dr = dx.data() + static_cast<std::ptrdiff_t>(i) * d;
      for (int k = 0; k < d; ++k) {
        te[k] += dr[k];
        pe[k] += dr[k];
      }
    }
  }
  if (dinput) *dinput = std::move(dx);
}

/// Logits for every position (rows) over the vocabulary (columns). Row j
/// depends only on tokens 0..j.
template <class T>
Matrix<T> forward(const Model<T>& m, std::span<const int> tokens) {
  ForwardCache<T> c;
  forward_cached(m, tokens, c);
  return Matrix<T>{c.n, m.vocab_size(), std::move(c.logits)};
}

/// Softmax of every logits row.
template <class T>
Matrix<T> distributions(const Model<T>& m, std::span<const int> tokens) {
  auto logits = forward(m, tokens);
  Matrix<T> out{logits.rows, logits.cols, std::vector<T>(logits.data.size())};
  for (int i = 0; i < logits.rows; ++i) nn::softmax(logits.row(i), out.row(i), logits.cols);
  return out;
}

template <class T>
std::vector<T> next_logits(const Model<T>& m, std::span<const int> prefix) {
  if (prefix.empty()) throw Error(Errc::InvalidArgument, "empty prefix");
  auto logits = forward(m, prefix);
  const T* last = logits.row(logits.rows - 1);
  return std::vector<T>(last, last + logits.cols);
}

/// Probability of each vocabulary entry following `prefix`.
template <class T>
std::vector<T> next_distribution(const Model<T>& m, std::span<const int> prefix) {
  auto logits = next_logits(m, prefix);
  std::vector<T> p(logits.size());
  nn::softmax(logits.data(), p.data(), static_cast<int>(logits.size()));
  return p;
}

// ---------------------------------------------------------------------------
// Language-modelling loss

/// Sequences padded with Vocab::kPad; the effective length of each sequence
/// ends at its first Pad.
struct Batch {
  std::vector<std::vector<int>> sequences;
};

inline std::size_t effective_length(const std::vector<int>& seq) {
  std::size_t n = 0;
  while (n < seq.size() && seq[n] != Vocab::kPad) ++n;
  return n;
}

/// Pads sequences to a common length.
inline Batch make_batch(std::vector<std::vector<int>> seqs) {
  std::size_t len = 0;
  for (const auto& s : seqs) len = std::max(len, s.size());
  for (auto& s : seqs) s.resize(len, Vocab::kPad);
  return Batch{std::move(seqs)};
}

inline bool is_target(int token) { return token != Vocab::kPad && token != Vocab::kUnknown; }

inline std::size_t count_targets(const Batch& b) {
  std::size_t n = 0;
  for (const auto& s : b.sequences) {
    const std::size_t len = effective_length(s);
    for (std::size_t j = 1; j < len; ++j) n += is_target(s[j]) ? 1 : 0;
  }
  return n;
}

template <class T>
struct LossAndGrad {
  double loss{0.0};
  std::size_t targets{0};
  std::vector<T> grads;  // same layout as Model::params
};

namespace detail {

// Sum of -log p(target) over a chunk of sequences; gradients of the mean
// (scaled by inv_total) accumulated into `grads` when non-null.
template <class T>
double chunk_loss(const Model<T>& m, const Batch& b, std::size_t begin, std::size_t end,
                  double inv_total, std::vector<T>* grads,
                  const std::vector<std::uint64_t>* dropout_seeds) {
  const int V = m.vocab_size();
  double total = 0.0;
  ForwardCache<T> cache;
  std::vector<T> dlogits;
  for (std::size_t s = begin; s < end; ++s) {
    const auto& seq = b.sequences[s];
    const std::size_t len = effective_length(seq);
    if (len < 2) continue;
    std::mt19937_64 rng(dropout_seeds ? (*dropout_seeds)[s] : 0);
    const bool use_dropout = dropout_seeds && m.config.dropout > 0.0;
    forward_cached(m, std::span<const int>(seq.data(), len), cache, use_dropout ? &rng : nullptr);
    if (grads) dlogits.assign(len * static_cast<std::size_t>(V), T(0));
    bool any = false;
    for (std::size_t j = 0; j + 1 < len; ++j) {
      const int target = seq[j + 1];
      if (!is_target(target)) continue;
      any = true;
      const T* row = cache.logits.data() + j * static_cast<std::size_t>(V);
      total += static_cast<double>(nn::logsumexp(row, V) - row[target]);
      if (grads) {
        T* dr = dlogits.data() + j * static_cast<std::size_t>(V);
        nn::softmax(row, dr, V);
        dr[target] -= T(1);
        const T scale = static_cast<T>(inv_total);
        for (int v = 0; v < V; ++v) dr[v] *= scale;
      }
    }
    if (grads && any) backward(m, cache, dlogits, grads, static_cast<std::vector<T>*>(nullptr));
  }
  return total;
}

}  // namespace detail

/// Mean negative log-likelihood of every non-Pad, non-Unknown next token in
/// the batch, and (optionally) its exact gradient. Work is split into
/// `threads` contiguous chunks whose partial sums are reduced in chunk order.
template <class T>
LossAndGrad<T> loss_and_gradients(const Model<T>& m, const Batch& b, bool want_grads = true,
                                  int threads = 1,
                                  const std::vector<std::uint64_t>* dropout_seeds = nullptr) {
  for (const auto& s : b.sequences) {
    detail::check_tokens(m, std::span<const int>(s.data(), s.size()));
  }
  LossAndGrad<T> out;
  out.targets = count_targets(b);
  if (want_grads) out.grads.assign(m.params.size(), T(0));
  if (out.targets == 0) return out;
  const double inv = 1.0 / static_cast<double>(out.targets);
  const std::size_t n = b.sequences.size();
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(
                                                           static_cast<std::size_t>(std::max(threads, 1)), n));
  if (workers == 1) {
    out.loss = detail::chunk_loss(m, b, 0, n, inv, want_grads ? &out.grads : nullptr, dropout_seeds) * inv;
    return out;
  }
  std::vector<double> partial(workers, 0.0);
  std::vector<std::vector<T>> partial_grads(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = n * w / workers;
    const std::size_t end = n * (w + 1) / workers;
    if (want_grads) partial_grads[w].assign(m.params.size(), T(0));
    pool.emplace_back([&, w, begin, end] {
      partial[w] = detail::chunk_loss(m, b, begin, end, inv,
                                      want_grads ? &partial_grads[w] : nullptr, dropout_seeds);
    });
  }
  for (auto& t : pool) t.join();
  double total = 0.0;
  for (std::size_t w = 0; w < workers; ++w) {
    total += partial[w];
    if (want_grads) {
      for (std::size_t i = 0; i < out.grads.size(); ++i) out.grads[i] += partial_grads[w][i];
    }
  }
  out.loss = total * inv;
  return out;
}

template <class T>
double loss(const Model<T>& m, const Batch& b) {
  return loss_and_gradients(m, b, false).loss;
}

template <class T>
std::vector<T> gradients(const Model<T>& m, const Batch& b) {
  return loss_and_gradients(m, b, true).grads;
}

}  // namespace chronicle
