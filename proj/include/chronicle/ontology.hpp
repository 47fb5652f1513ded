#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "chronicle/error.hpp"

namespace chronicle {

using ConceptId = std::string;

// Concept types selected from SNOMED. The source list has 19 names although
// it is described as 18 types; all 19 are kept.
enum class ConceptType {
  Occupation,
  Disorder,
  ClinicalDrug,
  TumourStaging,
  RecordArtifact,
  MedicinalProductForm,
  Organism,
  Situation,
  ObservableEntity,
  Substance,
  Finding,
  AssessmentScale,
  MedicinalProduct,
  BodyStructure,
  PhysicalObject,
  MorphologicAbnormality,
  RegimeTherapy,
  Product,
  Procedure,
};

inline constexpr std::size_t kConceptTypeCount = 19;

inline constexpr std::array<std::string_view, kConceptTypeCount> kConceptTypeNames = {
    "Occupation",        "Disorder",          "Clinical drug",
    "Tumour staging",    "Record artifact",   "Medicinal product form",
    "Organism",          "Situation",         "Observable entity",
    "Substance",         "Finding",           "Assessment scale",
    "Medicinal product", "Body structure",    "Physical object",
    "Morphologic abnormality", "Regime/Therapy", "Product",
    "Procedure",
};

inline std::string_view to_string(ConceptType t) {
  return kConceptTypeNames[static_cast<std::size_t>(t)];
}

namespace detail {
inline bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}
}  // namespace detail

/// Case-insensitive lookup; throws UnknownType.
inline ConceptType parse_concept_type(std::string_view s) {
  for (std::size_t i = 0; i < kConceptTypeNames.size(); ++i) {
    if (detail::iequals(s, kConceptTypeNames[i])) return static_cast<ConceptType>(i);
  }
  throw Error(Errc::UnknownType, "unknown concept type '" + std::string(s) + "'");
}

struct ConceptRow {
  ConceptId id;
  std::string name;
  ConceptType type{ConceptType::Disorder};
  std::vector<ConceptId> parents;
};

/// Concept vocabulary with a parent DAG. Immutable once constructed.
class Ontology {
 public:
  Ontology() = default;

  /// Validates the rows: unique ids, known parents, no cycles.
  explicit Ontology(std::vector<ConceptRow> rows) : rows_(std::move(rows)) {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (rows_[i].id.empty()) throw Error(Errc::ParseError, "empty concept id");
      if (!index_.emplace(rows_[i].id, static_cast<int>(i)).second) {
        throw Error(Errc::DuplicateConcept, rows_[i].id);
      }
    }
    parents_.resize(rows_.size());
    std::size_t edges = 0;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      for (const auto& p : rows_[i].parents) {
        auto it = index_.find(p);
        if (it == index_.end()) {
          throw Error(Errc::DanglingParent, rows_[i].id + " -> " + p);
        }
        auto& ps = parents_[i];
        if (std::find(ps.begin(), ps.end(), it->second) == ps.end()) {
          ps.push_back(it->second);
          ++edges;
        }
      }
    }
    edge_count_ = edges;
    compute_ancestors();
  }

  std::size_t size() const noexcept { return rows_.size(); }
  std::size_t edge_count() const noexcept { return edge_count_; }
  const std::vector<ConceptRow>& rows() const noexcept { return rows_; }

  bool contains(std::string_view id) const { return index_.count(std::string(id)) != 0; }

  const ConceptRow& at(std::string_view id) const { return rows_[index_of(id)]; }

  ConceptType type_of(std::string_view id) const { return rows_[index_of(id)].type; }

  const std::string& name_of(std::string_view id) const { return rows_[index_of(id)].name; }

  /// True iff `a` is reachable from `b` via one or more child->parent edges.
  bool is_ancestor(std::string_view a, std::string_view b) const {
    const int ia = index_of(a);
    const auto& anc = ancestors_[static_cast<std::size_t>(index_of(b))];
    return std::binary_search(anc.begin(), anc.end(), ia);
  }

  const std::vector<int>& direct_parents(std::string_view id) const {
    return parents_[static_cast<std::size_t>(index_of(id))];
  }

  /// Sorted row indices of every ancestor of `id`.
  const std::vector<int>& ancestor_indices(std::string_view id) const {
    return ancestors_[static_cast<std::size_t>(index_of(id))];
  }

  const ConceptId& id_at(int index) const { return rows_[static_cast<std::size_t>(index)].id; }

  /// Row index of `id`; throws UnknownConcept.
  int index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw Error(Errc::UnknownConcept, std::string(id));
    return it->second;
  }

 private:
  // Iterative DFS with colouring; closure stored as sorted index lists.
  void compute_ancestors() {
    const std::size_t n = rows_.size();
    ancestors_.assign(n, {});
    std::vector<int> state(n, 0);  // 0 new, 1 on stack, 2 done
    for (std::size_t root = 0; root < n; ++root) {
      if (state[root] != 0) continue;
      std::vector<std::pair<int, std::size_t>> stack{{static_cast<int>(root), 0}};
      state[root] = 1;
      while (!stack.empty()) {
        auto& [node, next] = stack.back();
        const auto& ps = parents_[static_cast<std::size_t>(node)];
        if (next < ps.size()) {
          const int p = ps[next++];
          if (state[static_cast<std::size_t>(p)] == 1) {
            throw Error(Errc::CyclicHierarchy, "cycle through " + rows_[static_cast<std::size_t>(p)].id);
          }
          if (state[static_cast<std::size_t>(p)] == 0) {
            state[static_cast<std::size_t>(p)] = 1;
            stack.emplace_back(p, 0);
          }
          continue;
        }
        auto& anc = ancestors_[static_cast<std::size_t>(node)];
        for (int p : ps) {
          anc.push_back(p);
          const auto& pa = ancestors_[static_cast<std::size_t>(p)];
          anc.insert(anc.end(), pa.begin(), pa.end());
        }
        std::sort(anc.begin(), anc.end());
        anc.erase(std::unique(anc.begin(), anc.end()), anc.end());
        state[static_cast<std::size_t>(node)] = 2;
        stack.pop_back();
      }
    }
  }

  std::vector<ConceptRow> rows_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::vector<int>> parents_;
  std::vector<std::vector<int>> ancestors_;
  std::size_t edge_count_{0};
};

namespace detail {
inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}
}  // namespace detail

/// Reads the tab-separated concept table (`id name type parents`, header
/// required when any rows are present).
inline Ontology load_ontology(std::istream& in) {
  std::vector<ConceptRow> rows;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      if (line != "id\tname\ttype\tparents") {
        throw Error(Errc::ParseError, "concept table: missing header row");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    auto cols = detail::split(line, '\t');
    if (cols.size() != 4) {
      throw Error(Errc::ParseError, "concept table line " + std::to_string(line_no) +
                                        ": expected 4 columns");
    }
    ConceptRow row{cols[0], cols[1], parse_concept_type(cols[2]), {}};
    if (!cols[3].empty()) row.parents = detail::split(cols[3], '|');
    rows.push_back(std::move(row));
  }
  return Ontology(std::move(rows));
}

inline Ontology load_ontology_string(const std::string& text) {
  std::istringstream in(text);
  return load_ontology(in);
}

inline void write_ontology(std::ostream& out, const Ontology& o) {
  out << "id\tname\ttype\tparents\n";
  for (const auto& r : o.rows()) {
    out << r.id << '\t' << r.name << '\t' << to_string(r.type) << '\t';
    for (std::size_t i = 0; i < r.parents.size(); ++i) out << (i ? "|" : "") << r.parents[i];
    out << '\n';
  }
}

}  // namespace chronicle
