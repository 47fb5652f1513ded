#pragma once

// Brute-force evaluation used to cross-check evaluate(). Every step is a
// linear scan; only the report types are shared with the fast path.

#include <algorithm>
#include <tuple>
#include <vector>

#include "chronicle/metrics.hpp"

namespace chronicle {

inline MetricsReport reference_evaluate(const Predictor& pred, const std::vector<Timeline>& test,
                                        const std::vector<PatientRecord>& histories,
                                        const EvalConfig& ec) {
  ec.validate();
  const auto& vocab = pred.vocab();

  MetricsReport report;
  for (auto g : ec.type_groups)
    for (const auto& t : ec.time_ranges)
      for (int k : ec.top_ks)
        for (auto n : ec.novelty_modes) {
          Cell c;
          c.key = CellKey{g, t, k, n};
          report.cells.push_back(c);
        }

  const std::vector<AnnotationEvent> none;
  for (const auto& tl : test) {
    const std::vector<AnnotationEvent>* events = &none;
    for (const auto& r : histories) {
      if (r.patient_id == tl.patient_id) events = &r.events;
    }
    auto seen_before = [&](const ConceptId& c, std::int32_t t) {
      for (const auto& e : *events) {
        if (e.concept_id == c && e.timestamp.days < t) return true;
      }
      return false;
    };
    auto seen_in_window = [&](const ConceptId& c, std::int32_t t, const TimeRange& range) {
      for (const auto& e : *events) {
        if (e.concept_id != c || e.timestamp.days < t) continue;
        if (!range || e.timestamp.days <= static_cast<std::int64_t>(t) + *range) return true;
      }
      return false;
    };

    const std::size_t limit = std::min<std::size_t>(tl.items.size(), static_cast<std::size_t>(pred.context_len()));
    std::vector<int> ids;
    for (std::size_t i = 0; i < limit; ++i) ids.push_back(vocab.index_of(tl.items[i].token));

    for (std::size_t j = 1; j < ids.size(); ++j) {
      const Token& target = tl.items[j].token;
      if (!std::holds_alternative<tok::Concept>(target)) continue;
      if (ids[j] == Vocab::kUnknown) continue;
      if (!vocab.concept_type(ids[j]).has_value()) continue;
      const ConceptType gtype = *vocab.concept_type(ids[j]);
      const ConceptId g = std::get<tok::Concept>(target).id;
      const std::int32_t t = tl.items[j].t.days;
      const bool recurring = seen_before(g, t);
      ++report.positions;

      const std::vector<int> prefix(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(j));
      const std::vector<double> dist = pred.next(prefix);
      std::vector<std::tuple<double, ConceptId>> pool;
      for (int v = 0; v < vocab.size(); ++v) {
        if (!vocab.is_concept(v) || vocab.concept_type(v) != gtype) continue;
        const ConceptId c = *vocab.concept_id(v);
        if (seen_before(c, t) != recurring) continue;
        pool.emplace_back(-dist[static_cast<std::size_t>(v)], c);
      }
      std::sort(pool.begin(), pool.end());

      for (auto& cell : report.cells) {
        if ((cell.key.novelty == Novelty::Recurring) != recurring) continue;
        if (!in_group(cell.key.group, gtype)) continue;
        ++cell.positions;
        bool found = false;
        for (std::size_t r = 0; r < pool.size() && r < static_cast<std::size_t>(cell.key.k); ++r) {
          const ConceptId& c = std::get<1>(pool[r]);
          if (c == g) found = true;
          if (seen_in_window(c, t, cell.key.range)) {
            cell.total.tp += 1;
            cell.per_concept[c].tp += 1;
          } else {
            cell.total.fp += 1;
            cell.per_concept[c].fp += 1;
          }
        }
        if (!found) {
          cell.total.fn += 1;
          cell.per_concept[g].fn += 1;
        }
      }
    }
  }
  return report;
}

}  // namespace chronicle
