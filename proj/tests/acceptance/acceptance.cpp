// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Optional arguments select criteria by number.

#include <sys/wait.h>

#include <chrono>
#include <climits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "chronicle/generate.hpp"
#include "chronicle/metrics.hpp"
#include "chronicle/metrics_reference.hpp"
#include "chronicle/train.hpp"
#include "../support.hpp"

namespace fs = std::filesystem;
using namespace chronicle;
using namespace chronicle::testing;

namespace {

struct Outcome {
  bool pass{false};
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Reports produced along the way; the monotonicity check runs over all of them.
std::vector<std::pair<std::string, MetricsReport>> g_reports;

// ---------------------------------------------------------------------------
// 1. gradients

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto vocab = numbered_vocab(10);  // V = 12
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  const int models = 24;
  for (int seed = 0; seed < models; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 1000);
    const auto m = random_model<double>(tiny_config(8, 1, 2, 16, 16), vocab, static_cast<std::uint64_t>(seed), 0.5);
    const auto b = make_batch(random_sequences(rng, 3, 3, 10, vocab.size()));
    const auto r = finite_difference_check(m, b);
    checked += r.checked;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      where = r.worst_tensor + " (seed " + std::to_string(seed) + ")";
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          std::to_string(models) + " models, " + std::to_string(checked) + " parameters, max relative error " +
              fmt("%.2e", worst) + " at " + where + ", " + fmt("%.1f s", secs) + " (limits 1e-4, 60 s)"};
}

// ---------------------------------------------------------------------------
// 2. loss calibration

Outcome loss_calibration() {
  double worst = 0.0;
  int cases = 0;
  for (int real : {3, 10, 40, 200}) {
    const auto vocab = numbered_vocab(real);
    const int V = vocab.size();
    auto check = [&](auto m) {
      // a zero head makes every logit zero, so the output is uniform
      for (std::size_t i = m.layout.head; i < m.layout.head + static_cast<std::size_t>(m.config.embedding_dim * V); ++i) {
        m.params[i] = 0;
      }
      std::mt19937_64 rng(static_cast<std::uint64_t>(real));
      const auto b = make_batch(random_sequences(rng, 4, 2, 12, V));
      worst = std::max(worst, std::abs(loss(m, b) - std::log(static_cast<double>(V))));
      ++cases;
    };
    check(random_model<double>(tiny_config(8, 1, 2, 16, 16), vocab, 1));
    check(random_model<float>(tiny_config(16, 2, 4, 16, 32), vocab, 2));
    check(make_model<float>(ModelConfig{}, vocab, 3));
  }
  return {worst <= 1e-6, std::to_string(cases) + " models, max |loss - ln V| = " + fmt("%.2e", worst) + " (limit 1e-6)"};
}

// ---------------------------------------------------------------------------
// 3. fast vs brute-force evaluation

SynthParams oracle_params(int i) {
  SynthParams p;
  p.seed = 500 + static_cast<std::uint64_t>(i);
  p.n_patients = 20 + (i * 7) % 31;  // 20..50
  p.n_concepts = 15 + (i * 5) % 30;
  p.mean_events = 10 + i % 15;
  p.hierarchy_depth = 1 + i % 3;
  p.chronic_fraction = (i % 4) * 0.15;
  p.mortality = (i % 3) * 0.01;
  return p;
}

BuildConfig loose_build(int max_concepts = 40) {
  BuildConfig bc;
  bc.min_global_count = 1;
  bc.min_patient_count = 1;
  bc.min_concepts = 3;
  bc.max_concepts = max_concepts;
  return bc;
}

Outcome oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  int matches = 0, corpora = 20;
  std::int64_t positions = 0;
  std::string mismatch;
  for (int i = 0; i < corpora; ++i) {
    const auto p = oracle_params(i);
    const auto c = make_corpus(p, loose_build(), 0.4, static_cast<std::uint64_t>(i));
    const auto m = random_model<float>(tiny_config(8, 1, 2, 2 * 40 + 8, 16), c.vocab, static_cast<std::uint64_t>(i), 0.4);
    const ModelPredictor<float> pred(m);
    EvalConfig ec;
    if (i % 5 == 4) ec.time_ranges = {7, 90, std::nullopt};
    const auto fast = evaluate(pred, c.test, c.records, ec);
    const auto slow = reference_evaluate(pred, c.test, c.records, ec);
    positions += fast.positions;
    if (fast == slow && fast.positions > 0) {
      ++matches;
    } else if (mismatch.empty()) {
      mismatch = ", first mismatch on corpus " + std::to_string(i);
    }
    g_reports.emplace_back("oracle corpus " + std::to_string(i), fast);
  }
  const double secs = seconds_since(t0);
  return {matches == corpora && secs < 120.0,
          std::to_string(matches) + "/" + std::to_string(corpora) + " corpora identical (" +
              std::to_string(positions) + " positions)" + mismatch + ", " + fmt("%.1f s", secs) + " (limit 120 s)"};
}

// ---------------------------------------------------------------------------
// 4. convergence towards the Bayes-optimal predictor

struct DeskRun {
  SynthCorpus corpus;
  Model<float> model;
  BayesResult bayes;
  double accuracy{0.0};
  double seconds{0.0};
};

// Flat first-order world without chronic recurrence or deaths, so the
// concept sequence inside each fragment is exactly the Markov chain.
SynthParams markov_params() {
  SynthParams p;
  p.seed = 11;
  p.n_patients = 2000;
  p.n_concepts = 50;
  p.mean_events = 30;
  p.dominance = 0.6;
  return p;
}

/// Top-1 accuracy over concept tokens at the positions bayes_optimal scores.
double model_accuracy(const Model<float>& m, const std::vector<Timeline>& test) {
  std::int64_t positions = 0, correct = 0;
  for (const auto& t : test) {
    auto ids = m.vocab.encode(t);
    if (static_cast<int>(ids.size()) > m.config.context_len) ids.resize(static_cast<std::size_t>(m.config.context_len));
    const auto p = distributions(m, ids);
    for (std::size_t j = 1; j < ids.size(); ++j) {
      if (!is_concept(t.items[j].token)) continue;
      ++positions;
      const float* row = p.row(static_cast<int>(j - 1));
      int best = -1;
      for (int v = 0; v < m.vocab_size(); ++v) {
        if (m.vocab.is_concept(v) && (best < 0 || row[v] > row[best])) best = v;
      }
      correct += best == ids[j];
    }
  }
  return positions ? static_cast<double>(correct) / static_cast<double>(positions) : 0.0;
}

DeskRun& desk_run() {
  static std::unique_ptr<DeskRun> run;
  if (run) return *run;
  const auto t0 = std::chrono::steady_clock::now();
  run = std::make_unique<DeskRun>();
  run->corpus = make_corpus(markov_params(), loose_build(256), 0.1, 11);
  run->bayes = bayes_optimal(run->corpus.world, run->corpus.test);

  ModelConfig mc;  // desk configuration: 2 layers, d = 64
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.embedding_dim = 64;
  mc.feedforward_dim = 256;
  TrainConfig tc;
  tc.epochs = 8;
  tc.learning_rate = 3e-3;
  tc.batch_size = 16;
  tc.warmup_ratio = 0.05;
  tc.seed = 11;
  run->model = make_model<float>(mc, run->corpus.vocab, 11);
  train(run->model, run->corpus.train, tc, [](int epoch, double loss) {
    std::cerr << "  desk model epoch " << epoch + 1 << " loss " << fmt("%.4f", loss) << "\n";
  });
  run->accuracy = model_accuracy(run->model, run->corpus.test);
  run->seconds = seconds_since(t0);
  return *run;
}

Outcome bayes_convergence() {
  auto& r = desk_run();
  const double b = r.bayes.accuracy;
  const double sigma = std::sqrt(b * (1.0 - b) / static_cast<double>(r.bayes.positions));
  const ModelPredictor<float> pred(r.model);
  g_reports.emplace_back("desk model", evaluate(pred, r.corpus.test, r.corpus.records, EvalConfig{}));
  const bool pass = r.accuracy >= 0.95 * b && r.accuracy <= b + 2 * sigma && r.seconds < 900.0;
  return {pass, "model " + fmt("%.4f", r.accuracy) + " vs Bayes " + fmt("%.4f", b) + " (ratio " +
                    fmt("%.3f", r.accuracy / b) + ", sigma " + fmt("%.4f", sigma) + ", " +
                    std::to_string(r.bayes.positions) + " positions, " + std::to_string(r.corpus.train.size()) +
                    " training timelines), " + fmt("%.0f s", r.seconds) + " (limits ratio >= 0.95, <= Bayes + 2 sigma, 900 s)"};
}

// ---------------------------------------------------------------------------
// 5. recurring concepts are easier to forecast than new ones

Outcome recurrence_trend() {
  SynthParams p;
  p.seed = 21;
  p.n_patients = 600;
  p.n_concepts = 60;
  p.mean_events = 30;
  p.chronic_fraction = 0.3;
  p.recurrence_probability = 0.3;
  const auto c = make_corpus(p, loose_build(256), 0.2, 21);
  ModelConfig mc;
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.embedding_dim = 32;
  mc.feedforward_dim = 128;
  TrainConfig tc;
  tc.epochs = 4;
  tc.learning_rate = 3e-3;
  tc.batch_size = 16;
  tc.warmup_ratio = 0.05;
  tc.seed = 21;
  auto m = make_model<float>(mc, c.vocab, 21);
  train(m, c.train, tc);
  const ModelPredictor<float> pred(m);
  const EvalConfig ec;
  const auto report = evaluate(pred, c.test, c.records, ec);
  g_reports.emplace_back("chronic world", report);

  bool pass = true;
  std::ostringstream detail;
  detail << "P@10 recurring/new:";
  for (const auto& range : ec.time_ranges) {
    detail << " [" << range_label(range) << "]";
    for (auto g : kTypeGroups) {
      const auto* rec = report.find(CellKey{g, range, 10, Novelty::Recurring});
      const auto* nov = report.find(CellKey{g, range, 10, Novelty::New});
      const auto pr = rec ? rec->precision() : std::nullopt;
      const auto pn = nov ? nov->precision() : std::nullopt;
      const bool ok = pr && pn && *pr > *pn;
      pass = pass && ok;
      detail << " " << to_string(g) << " " << (pr ? fmt("%.3f", *pr) : "n/a") << "/" << (pn ? fmt("%.3f", *pn) : "n/a")
             << (ok ? "" : " (!)");
    }
  }
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 6. hand-traced timelines

struct Golden {
  std::string name;
  PatientRecord record;
  BuildConfig cfg;
  std::vector<std::vector<std::string>> expected;  // per fragment, "SPELLING@YYYY-MM-DD"
};

Ontology golden_ontology() {
  std::vector<ConceptRow> rows = {{"P", "parent", ConceptType::Disorder, {}},
                                  {"C", "child", ConceptType::Disorder, {"P"}},
                                  {"G", "grandchild", ConceptType::Disorder, {"C"}}};
  for (char ch = 'A'; ch <= 'K'; ++ch) {
    if (ch == 'C' || ch == 'G') continue;
    rows.push_back({std::string(1, ch), std::string("flat ") + ch, ConceptType::Finding, {}});
  }
  for (int i = 1; i <= 10; ++i) rows.push_back({"X" + std::to_string(i), "filler", ConceptType::Finding, {}});
  return Ontology(rows);
}

const Date kBirth = make_date(1970, 6, 15);
const Date kBase = make_date(2010, 3, 1);  // age 39 until day 106

std::string at(const std::string& spelling, Date d) { return spelling + "@" + format_date(d); }
std::string at(const std::string& spelling, int day) { return at(spelling, add_days(kBase, day)); }

PatientRecord make_record(const std::string& id, Sex sex, Ethnicity eth, std::vector<std::pair<int, std::string>> events,
                          std::optional<Date> death = std::nullopt) {
  PatientRecord r;
  r.patient_id = id;
  r.demographics = Demographics{sex, eth, kBirth, death};
  for (const auto& [day, concept_id] : events) r.events.push_back({id, add_days(kBase, day), concept_id});
  std::stable_sort(r.events.begin(), r.events.end(), event_order);
  return r;
}

std::vector<std::pair<int, std::string>> daily(const std::vector<std::string>& concepts, int start = 0) {
  std::vector<std::pair<int, std::string>> out;
  for (std::size_t i = 0; i < concepts.size(); ++i) out.emplace_back(start + static_cast<int>(i), concepts[i]);
  return out;
}

std::vector<Golden> golden_cases() {
  std::vector<Golden> g;
  const BuildConfig def;
  const std::string F = "SEX:F", M = "SEX:M";

  // 9 concepts on 9 days: below the minimum, nothing survives.
  g.push_back({"nine concepts dropped", make_record("g1", Sex::Female, Ethnicity::Asian,
                                                    daily({"A", "B", "D", "E", "F", "H", "I", "J", "K"})), def, {}});

  // Exactly 10 concepts: kept.
  g.push_back({"ten concepts kept",
               make_record("g2", Sex::Female, Ethnicity::Black, daily({"A", "B", "D", "E", "F", "H", "I", "J", "K", "X1"})),
               def,
               {{at(F, 0), at("ETH:Black", 0), at("AGE:39", 0), at("C:A", 0), at("SEP", 1), at("C:B", 1), at("SEP", 2),
                 at("C:D", 2), at("SEP", 3), at("C:E", 3), at("SEP", 4), at("C:F", 4), at("SEP", 5), at("C:H", 5),
                 at("SEP", 6), at("C:I", 6), at("SEP", 7), at("C:J", 7), at("SEP", 8), at("C:K", 8), at("SEP", 9),
                 at("C:X1", 9)}}});

  // 12 events over 3 days with one same-day duplicate: 11 concepts, 2 SEPs.
  g.push_back({"same-day duplicate",
               make_record("g3", Sex::Female, Ethnicity::Black,
                           {{0, "A"}, {0, "B"}, {0, "D"}, {0, "E"}, {1, "F"}, {1, "H"}, {1, "I"}, {1, "J"},
                            {2, "K"}, {2, "X1"}, {2, "K"}, {2, "X2"}}),
               def,
               {{at(F, 0), at("ETH:Black", 0), at("AGE:39", 0), at("C:A", 0), at("C:B", 0), at("C:D", 0), at("C:E", 0),
                 at("SEP", 1), at("C:F", 1), at("C:H", 1), at("C:I", 1), at("C:J", 1), at("SEP", 2), at("C:K", 2),
                 at("C:X1", 2), at("C:X2", 2)}}});

  // Child on day 0, its parent on day 5: the parent is pruned.
  g.push_back({"ancestor after descendant pruned",
               make_record("g4", Sex::Male, Ethnicity::White,
                           {{0, "C"}, {0, "X1"}, {1, "X2"}, {2, "X3"}, {3, "X4"}, {4, "X5"}, {5, "P"}, {5, "X6"},
                            {6, "X7"}, {7, "X8"}, {8, "X9"}, {9, "X10"}}),
               def,
               {{at(M, 0), at("ETH:White", 0), at("AGE:39", 0), at("C:C", 0), at("C:X1", 0), at("SEP", 1),
                 at("C:X2", 1), at("SEP", 2), at("C:X3", 2), at("SEP", 3), at("C:X4", 3), at("SEP", 4), at("C:X5", 4),
                 at("SEP", 5), at("C:X6", 5), at("SEP", 6), at("C:X7", 6), at("SEP", 7), at("C:X8", 7), at("SEP", 8),
                 at("C:X9", 8), at("SEP", 9), at("C:X10", 9)}}});

  // Ancestors before descendants stay; later ancestors of kept concepts go,
  // including the grandparent chain.
  g.push_back({"pruning along a chain",
               make_record("g5", Sex::Male, Ethnicity::Mixed,
                           {{0, "P"}, {0, "X1"}, {1, "C"}, {1, "X2"}, {2, "G"}, {2, "P"}, {2, "X3"}, {3, "C"},
                            {3, "X4"}, {4, "X5"}, {5, "X6"}, {6, "X7"}, {7, "X8"}, {8, "X9"}, {9, "X10"}}),
               def,
               {{at(M, 0), at("ETH:Mixed", 0), at("AGE:39", 0), at("C:P", 0), at("C:X1", 0), at("SEP", 1), at("C:C", 1),
                 at("C:X2", 1), at("SEP", 2), at("C:G", 2), at("C:X3", 2), at("SEP", 3), at("C:X4", 3), at("SEP", 4),
                 at("C:X5", 4), at("SEP", 5), at("C:X6", 5), at("SEP", 6), at("C:X7", 6), at("SEP", 7), at("C:X8", 7),
                 at("SEP", 8), at("C:X9", 8), at("SEP", 9), at("C:X10", 9)}}});

  // Birthday on 2010-06-15 (day 106) falls inside the record.
  g.push_back({"age change",
               make_record("g6", Sex::Female, Ethnicity::Other,
                           daily({"A", "B", "D", "E", "F", "H", "I", "J", "K", "X1"}, 101)),
               def,
               {{at(F, 101), at("ETH:Other", 101), at("AGE:39", 101), at("C:A", 101), at("SEP", 102), at("C:B", 102),
                 at("SEP", 103), at("C:D", 103), at("SEP", 104), at("C:E", 104), at("SEP", 105), at("C:F", 105),
                 at("SEP", 106), at("AGE:40", 106), at("C:H", 106), at("SEP", 107), at("C:I", 107), at("SEP", 108),
                 at("C:J", 108), at("SEP", 109), at("C:K", 109), at("SEP", 110), at("C:X1", 110)}}});

  // Gaps of several days still give a single SEP; death closes the timeline.
  g.push_back({"death marker",
               make_record("g7", Sex::Unknown, Ethnicity::Unknown,
                           {{0, "A"}, {3, "B"}, {10, "D"}, {11, "E"}, {30, "F"}, {31, "H"}, {40, "I"}, {41, "J"},
                            {50, "K"}, {60, "X1"}},
                           add_days(kBase, 75)),
               def,
               {{at("SEX:U", 0), at("ETH:Unknown", 0), at("AGE:39", 0), at("C:A", 0), at("SEP", 3), at("C:B", 3),
                 at("SEP", 10), at("C:D", 10), at("SEP", 11), at("C:E", 11), at("SEP", 30), at("C:F", 30), at("SEP", 31),
                 at("C:H", 31), at("SEP", 40), at("C:I", 40), at("SEP", 41), at("C:J", 41), at("SEP", 50), at("C:K", 50),
                 at("SEP", 60), at("C:X1", 60), at("DEATH", 75)}}});

  // Three-day buckets anchored at the first event; dedupe is per bucket.
  BuildConfig three = def;
  three.bucket_days = 3;
  g.push_back({"three-day buckets",
               make_record("g8", Sex::Female, Ethnicity::White,
                           {{0, "A"}, {1, "A"}, {1, "B"}, {2, "D"}, {3, "A"}, {4, "E"}, {5, "F"}, {6, "H"}, {9, "I"},
                            {10, "J"}, {11, "K"}, {12, "X1"}, {20, "X2"}}),
               three,
               {{at(F, 0), at("ETH:White", 0), at("AGE:39", 0), at("C:A", 0), at("C:B", 1), at("C:D", 2), at("SEP", 3),
                 at("C:A", 3), at("C:E", 4), at("C:F", 5), at("SEP", 6), at("C:H", 6), at("SEP", 9), at("C:I", 9),
                 at("C:J", 10), at("C:K", 11), at("SEP", 12), at("C:X1", 12), at("SEP", 20), at("C:X2", 20)}}});

  // 256 daily concepts: one fragment at the limit.
  {
    std::vector<std::pair<int, std::string>> ev;
    std::vector<std::string> frag = {at(M, 0), at("ETH:Asian", 0), at("AGE:39", 0)};
    for (int d = 0; d < 256; ++d) {
      ev.emplace_back(d, d % 2 ? "B" : "A");
      if (d > 0) frag.push_back(at("SEP", d));
      if (d == 106) frag.push_back(at("AGE:40", d));
      frag.push_back(at(d % 2 ? "C:B" : "C:A", d));
    }
    g.push_back({"256 concepts", make_record("g9", Sex::Male, Ethnicity::Asian, ev), def, {frag}});

    // One more concept and a death: the overflow fragment keeps its own
    // prefix (now age 40) but holds a single concept, so it is dropped.
    ev.emplace_back(256, "A");
    g.push_back({"257 concepts", make_record("g10", Sex::Male, Ethnicity::Asian, ev, add_days(kBase, 300)), def, {frag}});
  }
  return g;
}

std::vector<std::string> spelled(const Timeline& t) {
  std::vector<std::string> out;
  for (const auto& i : t.items) out.push_back(at(spell(i.token), i.t));
  return out;
}

Outcome golden_timelines() {
  const auto o = golden_ontology();
  int ok = 0;
  std::string first_bad;
  const auto cases = golden_cases();
  for (const auto& c : cases) {
    const auto got = build_timeline(c.record, o, c.cfg);
    bool same = got.size() == c.expected.size();
    for (std::size_t f = 0; same && f < got.size(); ++f) {
      same = spelled(got[f]) == c.expected[f] && got[f].fragment_index == static_cast<int>(f) &&
             got[f].patient_id == c.record.patient_id;
    }
    if (same) {
      ++ok;
    } else if (first_bad.empty()) {
      first_bad = ", first failure: " + c.name;
    }
  }
  return {ok == static_cast<int>(cases.size()),
          std::to_string(ok) + "/" + std::to_string(cases.size()) + " records reproduce their hand-traced tokens" +
              first_bad};
}

// ---------------------------------------------------------------------------
// 7. monotonicity

Outcome monotonicity() {
  if (g_reports.empty()) oracle_equivalence();
  auto width = [](const TimeRange& r) { return r ? static_cast<std::int64_t>(*r) : INT64_MAX; };
  std::int64_t comparisons = 0, violations = 0;
  std::string first;
  for (const auto& [name, r] : g_reports) {
    for (const auto& a : r.cells) {
      for (const auto& b : r.cells) {
        if (a.key.group != b.key.group || a.key.novelty != b.key.novelty) continue;
        std::optional<double> lo, hi;
        if (a.key.k == b.key.k && width(a.key.range) < width(b.key.range)) {
          lo = a.precision();  // wider window, same candidates
          hi = b.precision();
        } else if (a.key.range == b.key.range && a.key.k < b.key.k) {
          lo = a.recall();
          hi = b.recall();
        }
        if (!lo || !hi) continue;
        ++comparisons;
        if (*hi < *lo) {
          ++violations;
          if (first.empty()) first = name;
        }
      }
    }
  }
  return {violations == 0 && comparisons > 0,
          std::to_string(g_reports.size()) + " reports, " + std::to_string(comparisons) + " cell comparisons, " +
              std::to_string(violations) + " violations" + (first.empty() ? "" : " (first in " + first + ")")};
}

// ---------------------------------------------------------------------------
// 8. CLI determinism

int shell(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli_determinism() {
  const std::string cli = CHRONICLE_CLI_PATH;
  const auto root = fs::temp_directory_path() / "chronicle_acceptance_determinism";
  fs::remove_all(root);
  std::vector<std::string> failures;
  for (const char* run : {"a", "b"}) {
    const auto d = (root / run).string();
    const std::vector<std::string> steps = {
        "synth --patients 150 --concepts 30 --seed 3 --chronic 0.2 --depth 2 -o " + d + "/data",
        "build-timelines -i " + d + "/data --min-global-count 5 -o " + d + "/built",
        "split --timelines " + d + "/built/timelines.jsonl --test-fraction 0.2 --seed 3 -o " + d + "/split",
        "train --train " + d + "/split/train.jsonl --ontology " + d +
            "/data/ontology.tsv --layers 1 --dim 16 --heads 2 --ff 32 --epochs 2 --lr 1e-3 --threads 1 --seed 3 -o " + d +
            "/model",
        "evaluate -m " + d + "/model --test " + d + "/split/test.jsonl --events " + d +
            "/built/filtered_events.jsonl --demographics " + d + "/data/demographics.jsonl -o " + d + "/eval",
        "generate -m " + d + "/model --prompt SEX:F --top-k 100 --steps 15 --seed 3 -o " + d + "/gen"};
    for (const auto& s : steps) {
      if (shell(cli + " " + s) != 0) failures.push_back(std::string(run) + ": " + s.substr(0, s.find(' ')));
    }
  }
  if (!failures.empty()) return {false, "pipeline step failed: " + failures.front()};

  std::set<fs::path> files;
  for (const char* run : {"a", "b"}) {
    for (const auto& e : fs::recursive_directory_iterator(root / run)) {
      if (e.is_regular_file()) files.insert(fs::relative(e.path(), root / run));
    }
  }
  int compared = 0, differing = 0;
  std::string first;
  for (const auto& f : files) {
    if (f.filename() == "manifest.json") continue;  // carries the wall-clock time
    ++compared;
    if (!fs::exists(root / "a" / f) || !fs::exists(root / "b" / f) || slurp(root / "a" / f) != slurp(root / "b" / f)) {
      ++differing;
      if (first.empty()) first = f.string();
    }
  }
  const bool pass = differing == 0 && compared >= 10;
  if (pass) fs::remove_all(root);
  return {pass, std::to_string(compared) + " output files compared, " + std::to_string(differing) + " differ" +
                    (first.empty() ? "" : " (first: " + first + ")")};
}

// ---------------------------------------------------------------------------
// 9. saliency

Outcome saliency_sanity() {
  auto& r = desk_run();
  const auto& test = r.corpus.test;
  std::mt19937_64 rng(9);
  int sampled = 0, top = 0;
  while (sampled < 100) {
    const auto& t = test[rng() % test.size()];
    const auto ids = r.model.vocab.encode(t);
    std::vector<std::size_t> concepts;
    for (std::size_t j = 0; j < ids.size() && j < static_cast<std::size_t>(r.model.config.context_len); ++j) {
      if (is_concept(t.items[j].token)) concepts.push_back(j);
    }
    if (concepts.size() < 2) continue;
    // prefix stops just before a concept; the target is that true concept
    const std::size_t k = 1 + rng() % (concepts.size() - 1);
    const std::size_t j = concepts[k], last = concepts[k - 1];
    if (ids[j] == Vocab::kUnknown) continue;
    const std::vector<int> prefix(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(j));
    const auto s = saliency(r.model, prefix, ids[j]);
    top += static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin()) == last;
    ++sampled;
  }
  return {top >= 80, std::to_string(top) + "/100 prefixes give the final concept token maximal saliency (limit 80)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_check},
      {"loss calibration", loss_calibration},
      {"metric oracle equivalence", oracle_equivalence},
      {"Bayes-optimal convergence", bayes_convergence},
      {"recurring beats new", recurrence_trend},
      {"timeline golden records", golden_timelines},
      {"metric monotonicity", monotonicity},
      {"CLI determinism", cli_determinism},
      {"saliency sanity", saliency_sanity},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail << " ["
              << fmt("%.1f s", seconds_since(t0)) << "]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
