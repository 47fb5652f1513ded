#include <cmath>
#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "chronicle/model.hpp"
#include "support.hpp"

using namespace chronicle;
using namespace chronicle::testing;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

// Straight-line re-implementation used as an oracle. Deliberately written
// without the library kernels.
Mat naive_logits(const Model<double>& m, const std::vector<int>& tokens) {
  const auto& c = m.config;
  const int n = static_cast<int>(tokens.size());
  const int d = c.embedding_dim, f = c.feedforward_dim, H = c.n_heads, hd = d / H;
  const int V = m.vocab_size();
  const auto& L = m.layout;
  auto P = [&](std::size_t off, int i) { return m.params[off + static_cast<std::size_t>(i)]; };
  auto matmul = [&](const Mat& x, std::size_t w, int in, int out, const std::size_t* b) {
    Mat y(x.size(), Vec(static_cast<std::size_t>(out), 0.0));
    for (std::size_t r = 0; r < x.size(); ++r) {
      for (int o = 0; o < out; ++o) {
        double s = b ? P(*b, o) : 0.0;
        for (int i = 0; i < in; ++i) s += x[r][static_cast<std::size_t>(i)] * P(w, i * out + o);
        y[r][static_cast<std::size_t>(o)] = s;
      }
    }
    return y;
  };
  auto norm = [&](const Mat& x, std::size_t g, std::size_t b) {
    Mat y = x;
    for (auto& row : y) {
      double mu = 0;
      for (double v : row) mu += v;
      mu /= d;
      double var = 0;
      for (double v : row) var += (v - mu) * (v - mu);
      var /= d;
      for (int k = 0; k < d; ++k) {
        row[static_cast<std::size_t>(k)] =
            (row[static_cast<std::size_t>(k)] - mu) / std::sqrt(var + 1e-5) * P(g, k) + P(b, k);
      }
    }
    return y;
  };
  Mat x(static_cast<std::size_t>(n), Vec(static_cast<std::size_t>(d)));
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) {
      x[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] =
          P(L.wte, tokens[static_cast<std::size_t>(i)] * d + k) + P(L.wpe, i * d + k);
    }
  }
  for (const auto& lp : L.layers) {
    const Mat qkv = matmul(norm(x, lp.ln1_g, lp.ln1_b), lp.w_qkv, d, 3 * d, &lp.b_qkv);
    Mat y(static_cast<std::size_t>(n), Vec(static_cast<std::size_t>(d), 0.0));
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < n; ++i) {
        Vec s;
        double mx = -1e300;
        for (int j = 0; j <= i; ++j) {
          double dot = 0;
          for (int e = 0; e < hd; ++e) {
            dot += qkv[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * hd + e)] *
                   qkv[static_cast<std::size_t>(j)][static_cast<std::size_t>(d + h * hd + e)];
          }
          s.push_back(dot / std::sqrt(static_cast<double>(hd)));
          mx = std::max(mx, s.back());
        }
        double z = 0;
        for (auto& v : s) z += (v = std::exp(v - mx));
        for (int j = 0; j <= i; ++j) {
          for (int e = 0; e < hd; ++e) {
            y[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * hd + e)] +=
                s[static_cast<std::size_t>(j)] / z *
                qkv[static_cast<std::size_t>(j)][static_cast<std::size_t>(2 * d + h * hd + e)];
          }
        }
      }
    }
    const Mat a = matmul(y, lp.w_o, d, d, &lp.b_o);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) x[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] += a[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    Mat hmid = matmul(norm(x, lp.ln2_g, lp.ln2_b), lp.w_fc, d, f, &lp.b_fc);
    for (auto& row : hmid) {
      for (auto& v : row) {
        v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
      }
    }
    const Mat o = matmul(hmid, lp.w_proj, f, d, &lp.b_proj);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) x[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] += o[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  }
  return matmul(norm(x, L.lnf_g, L.lnf_b), L.head, d, V, nullptr);
}

}  // namespace

TEST(Model, LayoutCountsParameters) {
  const auto v = numbered_vocab(10);
  const auto c = tiny_config(8, 2, 2, 16, 12);
  Model<float> m(c, v);
  const std::size_t d = 8, f = 12, V = 12, T = 16;
  const std::size_t per_layer = 2 * d + d * 3 * d + 3 * d + d * d + d + 2 * d + d * f + f + f * d + d;
  EXPECT_EQ(m.params.size(), V * d + T * d + 2 * per_layer + 2 * d + d * V);
}

TEST(Model, RejectsBadConfig) {
  auto c = tiny_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_THROW(ModelConfig{}.check_context_for(257), Error);
  EXPECT_NO_THROW(ModelConfig{}.check_context_for(256));
}

TEST(Model, ShapesAndNormalisation) {
  const auto v = numbered_vocab(20);
  const auto m = make_model<float>(tiny_config(16, 2, 4, 32, 32), v, 3);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto seq = random_sequences(rng, 1, 1, 32, v.size())[0];
    const auto p = distributions(m, seq);
    ASSERT_EQ(p.rows, static_cast<int>(seq.size()));
    ASSERT_EQ(p.cols, v.size());
    for (int i = 0; i < p.rows; ++i) {
      double s = 0;
      for (int k = 0; k < p.cols; ++k) {
        EXPECT_GE(p(i, k), 0.0f);
        s += p(i, k);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Model, Causality) {
  const auto v = numbered_vocab(20);
  const auto m = random_model<float>(tiny_config(16, 2, 4, 32, 32), v, 11, 0.3);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto seq = random_sequences(rng, 1, 2, 32, v.size())[0];
    const auto base = forward(m, seq);
    const int j = static_cast<int>(rng() % seq.size());
    seq[static_cast<std::size_t>(j)] = 2 + (seq[static_cast<std::size_t>(j)] - 2 + 1) % (v.size() - 2);
    const auto changed = forward(m, seq);
    for (int i = 0; i < j; ++i) {
      EXPECT_EQ(std::memcmp(base.row(i), changed.row(i), sizeof(float) * static_cast<std::size_t>(v.size())), 0)
          << "row " << i << " changed by a perturbation at " << j;
    }
  }
}

TEST(Model, LastRowMatchesPrefixForward) {
  const auto v = numbered_vocab(9);
  const auto m = random_model<float>(tiny_config(8, 2, 2, 24, 16), v, 2, 0.3);
  std::mt19937_64 rng(2);
  const auto seq = random_sequences(rng, 1, 20, 20, v.size())[0];
  const auto full = forward(m, seq);
  for (std::size_t n = 1; n <= seq.size(); ++n) {
    const auto last = next_logits(m, std::span<const int>(seq.data(), n));
    EXPECT_EQ(std::memcmp(last.data(), full.row(static_cast<int>(n) - 1), sizeof(float) * last.size()), 0);
  }
}

TEST(Model, MatchesHandComputedOracle) {
  const auto v = numbered_vocab(4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = random_model<double>(tiny_config(4, 1, 2, 6, 8), v, seed, 0.7);
    for (const std::vector<int>& seq : {std::vector<int>{2, 5}, std::vector<int>{2, 5, 3, 3, 4}}) {
      const auto got = forward(m, seq);
      const auto want = naive_logits(m, seq);
      for (int i = 0; i < got.rows; ++i) {
        for (int k = 0; k < got.cols; ++k) {
          EXPECT_NEAR(got(i, k), want[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)], 1e-10);
        }
      }
    }
  }
  // two layers as well
  const auto m2 = random_model<double>(tiny_config(8, 2, 4, 8, 8), numbered_vocab(6), 9, 0.5);
  const std::vector<int> seq = {7, 2, 3, 6, 5, 4, 2};
  const auto got = forward(m2, seq);
  const auto want = naive_logits(m2, seq);
  for (int i = 0; i < got.rows; ++i)
    for (int k = 0; k < got.cols; ++k) EXPECT_NEAR(got(i, k), want[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)], 1e-10);
}

TEST(Model, UniformOutputGivesLogV) {
  const auto v = numbered_vocab(10);
  auto m = random_model<double>(tiny_config(), v, 1);
  const auto& head = m.layout.tensors.back();
  std::fill(m.params.begin() + static_cast<std::ptrdiff_t>(head.offset), m.params.end(), 0.0);
  std::mt19937_64 rng(1);
  const auto b = make_batch(random_sequences(rng, 4, 2, 16, v.size()));
  EXPECT_NEAR(loss(m, b), std::log(static_cast<double>(v.size())), 1e-9);
}

TEST(Model, CertainTargetGivesZeroLoss) {
  // Single real token X; every target is X and the head puts all mass on it.
  const auto v = numbered_vocab(1);
  auto m = random_model<double>(tiny_config(), v, 2);
  const auto& L = m.layout;
  const int d = m.config.embedding_dim;
  for (int k = 0; k < d; ++k) {
    m.params[L.lnf_g + static_cast<std::size_t>(k)] = 0.0;
    m.params[L.lnf_b + static_cast<std::size_t>(k)] = 1.0;
    for (int t = 0; t < v.size(); ++t) {
      m.params[L.head + static_cast<std::size_t>(k * v.size() + t)] = t == 2 ? 1000.0 / d : 0.0;
    }
  }
  const auto b = make_batch({{2, 2, 2, 2}, {2, 2}});
  EXPECT_NEAR(loss(m, b), 0.0, 1e-12);
}

TEST(Model, LossMatchesPerPrefixRecomputation) {
  const auto v = numbered_vocab(10);
  const auto m = random_model<double>(tiny_config(8, 2, 2, 16, 16), v, 4, 0.4);
  std::mt19937_64 rng(4);
  auto seqs = random_sequences(rng, 5, 1, 16, v.size());
  seqs[1][0] = Vocab::kUnknown;
  if (seqs[2].size() > 2) seqs[2][2] = Vocab::kUnknown;
  const auto b = make_batch(seqs);
  double total = 0;
  int count = 0;
  for (const auto& s : seqs) {
    for (std::size_t j = 1; j < s.size(); ++j) {
      if (s[j] == Vocab::kUnknown) continue;
      const auto p = next_distribution(m, std::span<const int>(s.data(), j));
      total -= std::log(p[static_cast<std::size_t>(s[j])]);
      ++count;
    }
  }
  EXPECT_EQ(count_targets(b), static_cast<std::size_t>(count));
  EXPECT_NEAR(loss(m, b), total / count, 1e-9);
}

TEST(Model, GradientsMatchFiniteDifferences) {
  const auto v = numbered_vocab(10);  // V = 12
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto m = random_model<double>(tiny_config(8, 1, 2, 8, 16), v, 100 + seed);
    std::mt19937_64 rng(seed);
    const auto b = make_batch(random_sequences(rng, 3, 2, 8, v.size()));
    const auto r = finite_difference_check(m, b);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed << " worst " << r.worst_tensor;
    EXPECT_EQ(r.checked, m.params.size());
  }
}

TEST(Model, GradientsWithTwoLayersMatchFiniteDifferences) {
  const auto v = numbered_vocab(6);
  const auto m = random_model<double>(tiny_config(8, 2, 4, 6, 8), v, 77);
  std::mt19937_64 rng(77);
  const auto b = make_batch(random_sequences(rng, 2, 3, 6, v.size()));
  EXPECT_LT(finite_difference_check(m, b).max_rel_error, 1e-4);
}

TEST(Model, NoTargetsGivesZeroLossAndGradients) {
  const auto v = numbered_vocab(5);
  const auto m = random_model<double>(tiny_config(), v, 1);
  const auto b = make_batch({{3}, {4, Vocab::kUnknown, Vocab::kUnknown}, {}});
  const auto r = loss_and_gradients(m, b);
  EXPECT_EQ(r.targets, 0u);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grads) EXPECT_EQ(g, 0.0);
}

TEST(Model, DuplicatedBatchLeavesGradientUnchanged) {
  const auto v = numbered_vocab(8);
  const auto m = random_model<double>(tiny_config(8, 1, 2, 12, 16), v, 8);
  std::mt19937_64 rng(8);
  auto seqs = random_sequences(rng, 3, 2, 12, v.size());
  const auto once = loss_and_gradients(m, make_batch(seqs));
  auto doubled = seqs;
  doubled.insert(doubled.end(), seqs.begin(), seqs.end());
  const auto twice = loss_and_gradients(m, make_batch(doubled));
  EXPECT_NEAR(once.loss, twice.loss, 1e-12);
  for (std::size_t i = 0; i < once.grads.size(); ++i) EXPECT_NEAR(once.grads[i], twice.grads[i], 1e-12);
}

TEST(Model, ThreadedReductionIsDeterministic) {
  const auto v = numbered_vocab(8);
  const auto m = random_model<float>(tiny_config(8, 1, 2, 12, 16), v, 8);
  std::mt19937_64 rng(9);
  const auto b = make_batch(random_sequences(rng, 7, 2, 12, v.size()));
  const auto a = loss_and_gradients(m, b, true, 3);
  const auto c = loss_and_gradients(m, b, true, 3);
  EXPECT_EQ(a.loss, c.loss);
  EXPECT_EQ(a.grads, c.grads);
  const auto serial = loss_and_gradients(m, b, true, 1);
  EXPECT_NEAR(a.loss, serial.loss, 1e-5);
}

TEST(Model, InputValidation) {
  const auto v = numbered_vocab(5);
  const auto m = make_model<float>(tiny_config(8, 1, 2, 4, 8), v, 0);
  try {
    forward(m, std::vector<int>{2, 3, 4, 5, 6});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::SequenceTooLong);
  }
  try {
    forward(m, std::vector<int>{2, 7});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IndexOutOfVocab);
  }
}
