#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <iterator>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "chronicle/date.hpp"
#include "chronicle/error.hpp"
#include "chronicle/ontology.hpp"
#include "chronicle/token.hpp"

namespace chronicle {

struct AnnotationEvent {
  std::string patient_id;
  Date timestamp;
  ConceptId concept_id;

  bool operator==(const AnnotationEvent&) const = default;
};

struct Demographics {
  Sex sex{Sex::Unknown};
  Ethnicity ethnicity{Ethnicity::Unknown};
  Date birth_date;
  std::optional<Date> death_date;

  bool operator==(const Demographics&) const = default;
};

using DemographicsMap = std::map<std::string, Demographics>;

struct PatientRecord {
  std::string patient_id;
  Demographics demographics;
  std::vector<AnnotationEvent> events;  // sorted by (timestamp, concept id)
};

struct TimelineItem {
  Token token;
  Date t;

  bool operator==(const TimelineItem&) const = default;
};

struct Timeline {
  std::string patient_id;
  std::vector<TimelineItem> items;
  int fragment_index{0};

  std::size_t concept_count() const {
    return static_cast<std::size_t>(std::count_if(
        items.begin(), items.end(), [](const TimelineItem& i) { return is_concept(i.token); }));
  }

  bool operator==(const Timeline&) const = default;
};

struct BuildConfig {
  int bucket_days{1};
  int max_concepts{256};
  int min_concepts{10};
  int min_global_count{100};
  int min_patient_count{2};

  void validate() const {
    if (bucket_days < 1 || max_concepts < 1 || min_concepts < 1 || min_global_count < 1 ||
        min_patient_count < 1) {
      throw Error(Errc::InvalidArgument, "build config values must be positive");
    }
    if (min_concepts > max_concepts) {
      throw Error(Errc::InvalidArgument, "min_concepts exceeds max_concepts");
    }
  }
};

inline bool event_order(const AnnotationEvent& a, const AnnotationEvent& b) {
  return std::tie(a.timestamp, a.concept_id) < std::tie(b.timestamp, b.concept_id);
}

/// Groups events per patient (records ordered by patient id) and sorts each
/// patient's events by timestamp, ties by concept id.
inline std::vector<PatientRecord> aggregate_events(const std::vector<AnnotationEvent>& events,
                                                   const DemographicsMap& demographics) {
  std::map<std::string, std::vector<AnnotationEvent>> grouped;
  for (const auto& e : events) {
    if (demographics.find(e.patient_id) == demographics.end()) {
      throw Error(Errc::MissingDemographics, e.patient_id);
    }
    grouped[e.patient_id].push_back(e);
  }
  std::vector<PatientRecord> out;
  out.reserve(grouped.size());
  for (auto& [pid, evs] : grouped) {
    std::stable_sort(evs.begin(), evs.end(), event_order);
    out.push_back(PatientRecord{pid, demographics.at(pid), std::move(evs)});
  }
  return out;
}

/// Drops globally rare concepts and concepts seen too few times per patient.
/// The two passes repeat until neither removes anything, so every survivor
/// meets both thresholds.
inline std::vector<PatientRecord> apply_frequency_filters(std::vector<PatientRecord> records,
                                                          const BuildConfig& cfg) {
  for (bool changed = true; changed;) {
    changed = false;
    std::unordered_map<ConceptId, std::int64_t> global;
    for (const auto& r : records) {
      for (const auto& e : r.events) ++global[e.concept_id];
    }
    for (auto& r : records) {
      const auto before = r.events.size();
      std::erase_if(r.events, [&](const AnnotationEvent& e) {
        return global[e.concept_id] < cfg.min_global_count;
      });
      std::unordered_map<ConceptId, int> local;
      for (const auto& e : r.events) ++local[e.concept_id];
      std::erase_if(r.events, [&](const AnnotationEvent& e) {
        return local[e.concept_id] < cfg.min_patient_count;
      });
      changed = changed || r.events.size() != before;
    }
  }
  return records;
}

namespace detail {

// Drops events whose concept is an ancestor of a concept kept on a strictly
// earlier day. Concepts missing from the ontology are never pruned.
inline std::vector<AnnotationEvent> prune_ancestors(const std::vector<AnnotationEvent>& events,
                                                    const Ontology& o) {
  std::vector<AnnotationEvent> kept;
  std::unordered_set<int> blocked;  // ancestors of concepts kept on earlier days
  std::size_t i = 0;
  while (i < events.size()) {
    std::size_t j = i;
    while (j < events.size() && events[j].timestamp == events[i].timestamp) ++j;
    const std::size_t day_start = kept.size();
    for (std::size_t k = i; k < j; ++k) {
      const auto& e = events[k];
      if (o.contains(e.concept_id) && blocked.count(o.index_of(e.concept_id)) != 0) continue;
      kept.push_back(e);
    }
    for (std::size_t k = day_start; k < kept.size(); ++k) {
      if (!o.contains(kept[k].concept_id)) continue;
      for (int a : o.ancestor_indices(kept[k].concept_id)) blocked.insert(a);
    }
    i = j;
  }
  return kept;
}

inline bool is_structural_tail(const Token& t) {
  return std::holds_alternative<tok::Sep>(t) || std::holds_alternative<tok::Age>(t);
}

inline std::vector<TimelineItem> demographic_prefix(const Demographics& d, int age, Date t) {
  return {{tok::SexTok{d.sex}, t}, {tok::EthTok{d.ethnicity}, t}, {tok::Age{age}, t}};
}

inline int clamp_age(int years) { return std::clamp(years, 0, kMaxAge); }

}  // namespace detail

/// Turns one frequency-filtered record into model-ready timeline fragments:
/// ancestor pruning, day bucketing with in-bucket dedupe, age-change and SEP
/// tokens, demographic prefix, death marker, then splitting on max_concepts
/// and dropping fragments below min_concepts.
inline std::vector<Timeline> build_timeline(const PatientRecord& record, const Ontology& o,
                                            const BuildConfig& cfg) {
  cfg.validate();
  const auto events = detail::prune_ancestors(record.events, o);
  if (events.empty()) return {};
  const auto& demo = record.demographics;

  // Buckets are consecutive windows of bucket_days anchored at the first event.
  std::vector<std::vector<AnnotationEvent>> buckets;
  {
    std::int64_t current = -1;
    std::unordered_set<ConceptId> seen;
    for (const auto& e : events) {
      const std::int64_t b = (e.timestamp.days - events.front().timestamp.days) / cfg.bucket_days;
      if (b != current) {
        buckets.emplace_back();
        seen.clear();
        current = b;
      }
      if (seen.insert(e.concept_id).second) buckets.back().push_back(e);
    }
  }

  const Date first_t = events.front().timestamp;
  const int first_age = detail::clamp_age(completed_years(demo.birth_date, first_t));

  std::vector<TimelineItem> body;
  int prev_age = first_age;
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    const Date bt = buckets[b].front().timestamp;
    if (b > 0) body.push_back({tok::Sep{}, bt});
    const int age = detail::clamp_age(completed_years(demo.birth_date, bt));
    if (age != prev_age) {
      body.push_back({tok::Age{age}, bt});
      prev_age = age;
    }
    for (const auto& e : buckets[b]) body.push_back({tok::Concept{e.concept_id}, e.timestamp});
  }
  if (demo.death_date) {
    body.push_back({tok::Death{}, std::max(*demo.death_date, body.back().t)});
  }

  // Split so every fragment holds at most max_concepts concepts; each fragment
  // gets its own demographic prefix carrying the age current at its start.
  std::vector<std::vector<TimelineItem>> fragments;
  std::vector<TimelineItem> cur = detail::demographic_prefix(demo, first_age, first_t);
  int cur_concepts = 0;
  int cur_age = first_age;
  for (const auto& item : body) {
    if (is_concept(item.token)) {
      if (cur_concepts == cfg.max_concepts) {
        while (detail::is_structural_tail(cur.back().token)) cur.pop_back();
        fragments.push_back(std::move(cur));
        cur = detail::demographic_prefix(demo, cur_age, item.t);
        cur_concepts = 0;
      }
      ++cur_concepts;
    } else if (const auto* a = std::get_if<tok::Age>(&item.token)) {
      cur_age = a->years;
    }
    cur.push_back(item);
  }
  fragments.push_back(std::move(cur));

  std::vector<Timeline> out;
  for (auto& f : fragments) {
    const auto n = std::count_if(f.begin(), f.end(),
                                 [](const TimelineItem& i) { return is_concept(i.token); });
    if (n < cfg.min_concepts) continue;
    out.push_back(Timeline{record.patient_id, std::move(f), static_cast<int>(out.size())});
  }
  return out;
}

/// Builds timelines for every record, in record order.
inline std::vector<Timeline> build_timelines(const std::vector<PatientRecord>& records,
                                             const Ontology& o, const BuildConfig& cfg) {
  std::vector<Timeline> out;
  for (const auto& r : records) {
    auto ts = build_timeline(r, o, cfg);
    std::move(ts.begin(), ts.end(), std::back_inserter(out));
  }
  return out;
}

template <class T>
struct Split {
  std::vector<T> train;
  std::vector<T> test;
};

/// Patient-level random split; items sharing a patient id land on the same
/// side. Relative input order is preserved within each side.
template <class T, class IdFn>
Split<T> split_by_patient(const std::vector<T>& items, double test_fraction, std::uint64_t seed,
                          IdFn&& patient_of) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(Errc::InvalidArgument, "test_fraction must lie in (0, 1)");
  }
  std::vector<std::string> patients;
  std::unordered_set<std::string> seen;
  for (const auto& it : items) {
    const std::string& p = patient_of(it);
    if (seen.insert(p).second) patients.push_back(p);
  }
  std::sort(patients.begin(), patients.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = patients.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(patients[i - 1], patients[j]);
  }
  const auto n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(patients.size())));
  const std::unordered_set<std::string> test_set(patients.begin(),
                                                 patients.begin() + static_cast<std::ptrdiff_t>(n_test));
  Split<T> out;
  for (const auto& it : items) {
    (test_set.count(patient_of(it)) ? out.test : out.train).push_back(it);
  }
  return out;
}

inline Split<PatientRecord> split_corpus(const std::vector<PatientRecord>& records,
                                         double test_fraction, std::uint64_t seed) {
  return split_by_patient(records, test_fraction, seed,
                          [](const PatientRecord& r) -> const std::string& { return r.patient_id; });
}

// ---------------------------------------------------------------------------
// Corpus statistics

inline constexpr std::array<std::string_view, 6> kAgeBands = {"0-18",  "18-30", "30-41",
                                                             "41-50", "51-64", "64+"};

/// Bands are half-open: [0,18) [18,30) [30,41) [41,51) [51,64) [64,inf).
inline std::size_t age_band(int years) {
  if (years < 18) return 0;
  if (years < 30) return 1;
  if (years < 41) return 2;
  if (years < 51) return 3;
  if (years < 64) return 4;
  return 5;
}

struct StratumStats {
  std::size_t patients{0};
  std::size_t timelines{0};
  double mean_length{0.0};      // concepts per timeline
  double mean_span_years{0.0};  // first to last item

  bool operator==(const StratumStats&) const = default;
};

struct CorpusStats {
  StratumStats overall;
  std::map<std::string, StratumStats> by_ethnicity;
  std::map<std::string, StratumStats> by_sex;
  // Patient counts multi-count patients whose data spans several bands; the
  // length/span means use the band of each patient's most recent age.
  std::map<std::string, StratumStats> by_age_band;
  std::map<std::string, double> mean_concepts_per_type;  // Disorder/Substance/Finding/Procedure
};

inline CorpusStats corpus_stats(const std::vector<Timeline>& timelines,
                                const DemographicsMap& demographics,
                                const Ontology* ontology = nullptr) {
  struct Acc {
    std::set<std::string> patients;
    std::size_t n{0};
    double length{0.0};
    double span{0.0};
    StratumStats finish() const {
      StratumStats s;
      s.patients = patients.size();
      s.timelines = n;
      if (n > 0) {
        s.mean_length = length / static_cast<double>(n);
        s.mean_span_years = span / static_cast<double>(n);
      }
      return s;
    }
  };
  Acc overall;
  std::map<std::string, Acc> eth, sex, band;
  std::map<std::string, std::set<std::string>> band_patients;

  // Per-patient age range and most recent age across all of their timelines.
  std::map<std::string, std::pair<int, int>> age_range;
  for (const auto& t : timelines) {
    if (t.items.empty()) continue;
    const auto it = demographics.find(t.patient_id);
    if (it == demographics.end()) throw Error(Errc::MissingDemographics, t.patient_id);
    const int a0 = completed_years(it->second.birth_date, t.items.front().t);
    const int a1 = completed_years(it->second.birth_date, t.items.back().t);
    auto [pos, inserted] = age_range.try_emplace(t.patient_id, a0, a1);
    if (!inserted) {
      pos->second.first = std::min(pos->second.first, a0);
      pos->second.second = std::max(pos->second.second, a1);
    }
  }

  std::map<std::string, double> type_totals;
  const std::array<ConceptType, 4> groups = {ConceptType::Disorder, ConceptType::Substance,
                                             ConceptType::Finding, ConceptType::Procedure};
  for (const auto& t : timelines) {
    if (t.items.empty()) continue;
    const auto& d = demographics.at(t.patient_id);
    const double len = static_cast<double>(t.concept_count());
    const double span = years_between(t.items.front().t, t.items.back().t);
    auto add = [&](Acc& a) {
      a.patients.insert(t.patient_id);
      ++a.n;
      a.length += len;
      a.span += span;
    };
    add(overall);
    add(eth[std::string(ethnicity_name(d.ethnicity))]);
    add(sex[std::string(sex_name(d.sex))]);
    const auto [lo, hi] = age_range.at(t.patient_id);
    add(band[std::string(kAgeBands[age_band(hi)])]);
    for (std::size_t b = age_band(lo); b <= age_band(hi); ++b) {
      band_patients[std::string(kAgeBands[b])].insert(t.patient_id);
    }
    if (ontology) {
      for (const auto& item : t.items) {
        if (!is_concept(item.token) || !ontology->contains(concept_of(item.token))) continue;
        const auto ct = ontology->type_of(concept_of(item.token));
        if (std::find(groups.begin(), groups.end(), ct) != groups.end()) {
          type_totals[std::string(to_string(ct))] += 1.0;
        }
      }
    }
  }

  CorpusStats s;
  s.overall = overall.finish();
  for (const auto& [k, a] : eth) s.by_ethnicity[k] = a.finish();
  for (const auto& [k, a] : sex) s.by_sex[k] = a.finish();
  for (const auto& name : kAgeBands) {
    const std::string key(name);
    StratumStats st = band.count(key) ? band.at(key).finish() : StratumStats{};
    st.patients = band_patients.count(key) ? band_patients.at(key).size() : 0;
    if (st.patients > 0 || st.timelines > 0) s.by_age_band[key] = st;
  }
  if (ontology) {
    for (auto g : groups) {
      const std::string key(to_string(g));
      s.mean_concepts_per_type[key] =
          overall.n ? (type_totals.count(key) ? type_totals.at(key) : 0.0) /
                          static_cast<double>(overall.n)
                    : 0.0;
    }
  }
  return s;
}

}  // namespace chronicle
