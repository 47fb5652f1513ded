#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "chronicle/model.hpp"
#include "chronicle/timeline.hpp"

namespace chronicle {

enum class TypeGroup { All, Disorders, Findings, Substances, Procedures };
enum class Novelty { New, Recurring };

inline constexpr std::array<TypeGroup, 5> kTypeGroups = {TypeGroup::All, TypeGroup::Disorders,
                                                         TypeGroup::Findings, TypeGroup::Substances,
                                                         TypeGroup::Procedures};

inline std::string_view to_string(TypeGroup g) {
  switch (g) {
    case TypeGroup::All: return "All";
    case TypeGroup::Disorders: return "Disorders";
    case TypeGroup::Findings: return "Findings";
    case TypeGroup::Substances: return "Substances";
    case TypeGroup::Procedures: return "Procedures";
  }
  return "All";
}

inline TypeGroup parse_type_group(std::string_view s) {
  for (auto g : kTypeGroups) {
    if (detail::iequals(s, to_string(g))) return g;
  }
  throw Error(Errc::ParseError, "unknown type group '" + std::string(s) + "'");
}

inline std::string_view to_string(Novelty n) { return n == Novelty::New ? "New" : "Recurring"; }

inline Novelty parse_novelty(std::string_view s) {
  if (detail::iequals(s, "new")) return Novelty::New;
  if (detail::iequals(s, "recurring")) return Novelty::Recurring;
  throw Error(Errc::ParseError, "unknown novelty '" + std::string(s) + "'");
}

/// Whether concepts of type `t` are reported under group `g`.
inline bool in_group(TypeGroup g, ConceptType t) {
  switch (g) {
    case TypeGroup::All: return true;
    case TypeGroup::Disorders: return t == ConceptType::Disorder;
    case TypeGroup::Findings: return t == ConceptType::Finding;
    case TypeGroup::Substances: return t == ConceptType::Substance;
    case TypeGroup::Procedures: return t == ConceptType::Procedure;
  }
  return false;
}

/// Forward window in days; nullopt is an unbounded window.
using TimeRange = std::optional<int>;

inline std::string range_label(const TimeRange& r) {
  if (!r) return "inf";
  if (*r == 365) return "1y";
  return std::to_string(*r) + "d";
}

struct EvalConfig {
  std::vector<TimeRange> time_ranges{30, 365, std::nullopt};
  std::vector<int> top_ks{1, 5, 10};
  std::vector<TypeGroup> type_groups{kTypeGroups.begin(), kTypeGroups.end()};
  std::vector<Novelty> novelty_modes{Novelty::New, Novelty::Recurring};

  void validate() const {
    if (time_ranges.empty() || top_ks.empty() || type_groups.empty() || novelty_modes.empty()) {
      throw Error(Errc::InvalidArgument, "evaluation lists must be nonempty");
    }
    for (const auto& r : time_ranges) {
      if (r && *r <= 0) throw Error(Errc::InvalidArgument, "time ranges must be positive");
    }
    for (int k : top_ks) {
      if (k < 1) throw Error(Errc::InvalidArgument, "top-k must be >= 1");
    }
  }

  int max_k() const { return *std::max_element(top_ks.begin(), top_ks.end()); }
};

struct Tally {
  std::int64_t tp{0};
  std::int64_t fp{0};
  std::int64_t fn{0};

  bool operator==(const Tally&) const = default;
};

struct CellKey {
  TypeGroup group{TypeGroup::All};
  TimeRange range;
  int k{1};
  Novelty novelty{Novelty::New};

  bool operator==(const CellKey&) const = default;
};

struct Cell {
  CellKey key;
  std::int64_t positions{0};
  Tally total;
  std::map<ConceptId, Tally> per_concept;

  std::optional<double> precision() const {
    if (total.tp + total.fp == 0) return std::nullopt;
    return static_cast<double>(total.tp) / static_cast<double>(total.tp + total.fp);
  }
  std::optional<double> recall() const {
    if (total.tp + total.fn == 0) return std::nullopt;
    return static_cast<double>(total.tp) / static_cast<double>(total.tp + total.fn);
  }

  bool operator==(const Cell&) const = default;
};

struct MetricsReport {
  std::int64_t positions{0};  // evaluated positions (each counted once)
  std::vector<Cell> cells;

  const Cell* find(const CellKey& key) const {
    for (const auto& c : cells) {
      if (c.key == key) return &c;
    }
    return nullptr;
  }

  bool operator==(const MetricsReport&) const = default;
};

/// Empty report with one cell per configuration combination, in
/// group, range, k, novelty order.
inline MetricsReport empty_report(const EvalConfig& ec) {
  MetricsReport r;
  for (auto g : ec.type_groups) {
    for (const auto& t : ec.time_ranges) {
      for (int k : ec.top_ks) {
        for (auto n : ec.novelty_modes) r.cells.push_back(Cell{CellKey{g, t, k, n}, 0, {}, {}});
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Candidate selection

/// Concept tokens of `dist`'s vocabulary ranked by probability (ties by
/// concept id), restricted to `type` when given and to concepts whose
/// presence in `history` matches `novelty` when given. At most k entries.
template <class P>
std::vector<int> candidate_filter(const std::vector<P>& dist, const Vocab& vocab,
                                  std::optional<ConceptType> type, std::optional<Novelty> novelty,
                                  const std::unordered_set<ConceptId>& history, int k) {
  std::vector<int> pool;
  for (int i = 0; i < static_cast<int>(dist.size()); ++i) {
    const auto& id = vocab.concept_id(i);
    if (!id) continue;
    if (type && vocab.concept_type(i) != type) continue;
    if (novelty) {
      const bool seen = history.count(*id) != 0;
      if (seen != (*novelty == Novelty::Recurring)) continue;
    }
    pool.push_back(i);
  }
  auto better = [&](int a, int b) {
    const auto pa = dist[static_cast<std::size_t>(a)];
    const auto pb = dist[static_cast<std::size_t>(b)];
    if (pa != pb) return pa > pb;
    return *vocab.concept_id(a) < *vocab.concept_id(b);
  };
  const auto kk = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(std::max(k, 0)));
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(kk), pool.end(), better);
  pool.resize(kk);
  return pool;
}

// ---------------------------------------------------------------------------
// Predictors

/// Source of next-token distributions for evaluation.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual const Vocab& vocab() const = 0;
  virtual int context_len() const = 0;
  /// Row i is the distribution following tokens 0..i.
  virtual std::vector<std::vector<double>> all_next(std::span<const int> tokens) const = 0;
  /// Distribution following the whole prefix.
  virtual std::vector<double> next(std::span<const int> prefix) const = 0;
};

template <class T>
class ModelPredictor final : public Predictor {
 public:
  explicit ModelPredictor(const Model<T>& m) : m_(&m) {}

  const Vocab& vocab() const override { return m_->vocab; }
  int context_len() const override { return m_->config.context_len; }

  std::vector<std::vector<double>> all_next(std::span<const int> tokens) const override {
    const auto p = distributions(*m_, tokens);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(p.rows));
    for (int i = 0; i < p.rows; ++i) out[static_cast<std::size_t>(i)].assign(p.row(i), p.row(i) + p.cols);
    return out;
  }

  std::vector<double> next(std::span<const int> prefix) const override {
    const auto p = next_distribution(*m_, prefix);
    return std::vector<double>(p.begin(), p.end());
  }

 private:
  const Model<T>* m_;
};

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

// Per patient: concept -> sorted event dates.
using EventIndex = std::unordered_map<ConceptId, std::vector<std::int32_t>>;

inline std::unordered_map<std::string, EventIndex> index_histories(
    const std::vector<PatientRecord>& histories) {
  std::unordered_map<std::string, EventIndex> out;
  for (const auto& r : histories) {
    auto& idx = out[r.patient_id];
    for (const auto& e : r.events) idx[e.concept_id].push_back(e.timestamp.days);
  }
  for (auto& [p, idx] : out) {
    for (auto& [c, days] : idx) std::sort(days.begin(), days.end());
  }
  return out;
}

inline bool occurs_within(const EventIndex& idx, const ConceptId& c, std::int32_t from,
                          const TimeRange& range) {
  auto it = idx.find(c);
  if (it == idx.end()) return false;
  auto d = std::lower_bound(it->second.begin(), it->second.end(), from);
  if (d == it->second.end()) return false;
  return !range || static_cast<std::int64_t>(*d) <= static_cast<std::int64_t>(from) + *range;
}

inline bool occurs_before(const EventIndex& idx, const ConceptId& c, std::int32_t t) {
  auto it = idx.find(c);
  return it != idx.end() && !it->second.empty() && it->second.front() < t;
}

}  // namespace detail

/// Teacher-forced evaluation of every concept position (j >= 1, target not
/// Unknown, target typed) of the test fragments. `histories` are the
/// patients' frequency-filtered event lists, used for the forward windows
/// and for the new/recurring split.
inline MetricsReport evaluate(const Predictor& pred, const std::vector<Timeline>& test,
                              const std::vector<PatientRecord>& histories, const EvalConfig& ec) {
  ec.validate();
  const auto& vocab = pred.vocab();
  const auto index = detail::index_histories(histories);
  const detail::EventIndex no_events;
  MetricsReport report = empty_report(ec);
  const int max_k = ec.max_k();

  for (const auto& tl : test) {
    auto ids = vocab.encode(tl);
    if (static_cast<int>(ids.size()) > pred.context_len()) ids.resize(static_cast<std::size_t>(pred.context_len()));
    if (ids.size() < 2) continue;
    const auto rows = pred.all_next(ids);
    auto pit = index.find(tl.patient_id);
    const auto& events = pit == index.end() ? no_events : pit->second;

    for (std::size_t j = 1; j < ids.size(); ++j) {
      const auto& item = tl.items[j];
      if (!is_concept(item.token) || ids[j] == Vocab::kUnknown) continue;
      const auto gtype = vocab.concept_type(ids[j]);
      if (!gtype) continue;
      const ConceptId& g = concept_of(item.token);
      const std::int32_t t = item.t.days;
      const Novelty gnov = detail::occurs_before(events, g, t) ? Novelty::Recurring : Novelty::New;
      ++report.positions;

      std::unordered_set<ConceptId> history;
      for (const auto& [c, days] : events) {
        if (days.front() < t) history.insert(c);
      }
      const auto ranked = candidate_filter(rows[j - 1], vocab, gtype, gnov, history, max_k);

      for (auto& cell : report.cells) {
        const auto& key = cell.key;
        if (key.novelty != gnov || !in_group(key.group, *gtype)) continue;
        ++cell.positions;
        const auto n = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(key.k));
        bool hit = false;
        for (std::size_t r = 0; r < n; ++r) {
          const ConceptId& c = *vocab.concept_id(ranked[r]);
          hit = hit || c == g;
          if (detail::occurs_within(events, c, t, key.range)) {
            ++cell.total.tp;
            ++cell.per_concept[c].tp;
          } else {
            ++cell.total.fp;
            ++cell.per_concept[c].fp;
          }
        }
        if (!hit) {
          ++cell.total.fn;
          ++cell.per_concept[g].fn;
        }
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Per-concept ranking

struct ConceptScore {
  ConceptId concept_id;
  std::int64_t tp{0};
  std::int64_t fp{0};
  double precision{0.0};
};

struct Breakdown {
  std::vector<ConceptScore> best;
  std::vector<ConceptScore> worst;
};

/// Best and worst `top_n` concepts of one cell by precision; ties keep
/// concept id order.
inline Breakdown per_concept_breakdown(const MetricsReport& report, int top_n, Novelty novelty,
                                       TypeGroup group = TypeGroup::All,
                                       TimeRange range = std::nullopt, int k = 10) {
  Breakdown out;
  const Cell* cell = report.find(CellKey{group, range, k, novelty});
  if (!cell || top_n <= 0) return out;
  std::vector<ConceptScore> scored;
  for (const auto& [c, t] : cell->per_concept) {
    if (t.tp + t.fp == 0) continue;
    scored.push_back({c, t.tp, t.fp, static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fp)});
  }
  const auto n = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(top_n));
  out.best = scored;
  std::stable_sort(out.best.begin(), out.best.end(),
                   [](const auto& a, const auto& b) { return a.precision > b.precision; });
  out.best.resize(n);
  out.worst = scored;
  std::stable_sort(out.worst.begin(), out.worst.end(),
                   [](const auto& a, const auto& b) { return a.precision < b.precision; });
  out.worst.resize(n);
  return out;
}

// ---------------------------------------------------------------------------
// Serialisation

inline nlohmann::json range_json(const TimeRange& r) { return r ? nlohmann::json(*r) : nlohmann::json(nullptr); }

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  nlohmann::json per_concept = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json key = {{"group", to_string(c.key.group)},
                          {"range_days", range_json(c.key.range)},
                          {"k", c.key.k},
                          {"novelty", to_string(c.key.novelty)}};
    auto cell = key;
    cell["positions"] = c.positions;
    cell["tp"] = c.total.tp;
    cell["fp"] = c.total.fp;
    cell["fn"] = c.total.fn;
    cell["precision"] = optional_json(c.precision());
    cell["recall"] = optional_json(c.recall());
    cells.push_back(std::move(cell));
    nlohmann::json concepts = nlohmann::json::array();
    for (const auto& [id, t] : c.per_concept) {
      concepts.push_back({{"concept", id}, {"tp", t.tp}, {"fp", t.fp}, {"fn", t.fn}});
    }
    key["concepts"] = std::move(concepts);
    per_concept.push_back(std::move(key));
  }
  return {{"positions", r.positions}, {"cells", std::move(cells)}, {"per_concept", std::move(per_concept)}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.positions = j.at("positions").get<std::int64_t>();
    const auto& cells = j.at("cells");
    const auto& per = j.at("per_concept");
    if (cells.size() != per.size()) throw Error(Errc::ParseError, "cells and per_concept differ in length");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      Cell cell;
      cell.key.group = parse_type_group(c.at("group").get<std::string>());
      if (!c.at("range_days").is_null()) cell.key.range = c.at("range_days").get<int>();
      cell.key.k = c.at("k").get<int>();
      cell.key.novelty = parse_novelty(c.at("novelty").get<std::string>());
      cell.positions = c.at("positions").get<std::int64_t>();
      cell.total = {c.at("tp").get<std::int64_t>(), c.at("fp").get<std::int64_t>(),
                    c.at("fn").get<std::int64_t>()};
      for (const auto& e : per[i].at("concepts")) {
        cell.per_concept[e.at("concept").get<std::string>()] = {
            e.at("tp").get<std::int64_t>(), e.at("fp").get<std::int64_t>(), e.at("fn").get<std::int64_t>()};
      }
      r.cells.push_back(std::move(cell));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("metrics report: ") + e.what());
  }
  return r;
}

/// Plain-text grid: one row per (group, novelty), one precision/recall column
/// pair per (range, k).
inline std::string render_table(const MetricsReport& r) {
  std::vector<TypeGroup> groups;
  std::vector<Novelty> novelties;
  std::vector<std::pair<TimeRange, int>> columns;
  for (const auto& c : r.cells) {
    if (std::find(groups.begin(), groups.end(), c.key.group) == groups.end()) groups.push_back(c.key.group);
    if (std::find(novelties.begin(), novelties.end(), c.key.novelty) == novelties.end()) {
      novelties.push_back(c.key.novelty);
    }
    const std::pair<TimeRange, int> col{c.key.range, c.key.k};
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
  }
  auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string("  -  ");
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << *v;
    return s.str();
  };
  std::ostringstream out;
  out << std::left << std::setw(22) << "Type / novelty";
  for (const auto& [range, k] : columns) {
    out << std::setw(12) << (range_label(range) + " @" + std::to_string(k));
  }
  out << "\n" << std::setw(22) << "";
  for (std::size_t i = 0; i < columns.size(); ++i) out << std::setw(12) << "P     R";
  out << "\n";
  for (auto g : groups) {
    for (auto n : novelties) {
      out << std::setw(22) << (std::string(to_string(g)) + " / " + std::string(to_string(n)));
      for (const auto& [range, k] : columns) {
        const Cell* c = r.find(CellKey{g, range, k, n});
        out << std::setw(12) << (c ? fmt(c->precision()) + " " + fmt(c->recall()) : std::string());
      }
      out << "\n";
    }
  }
  out << "positions: " << r.positions << "\n";
  return out.str();
}

}  // namespace chronicle
