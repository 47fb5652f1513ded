#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "chronicle/error.hpp"
#include "chronicle/ontology.hpp"
#include "chronicle/timeline.hpp"
#include "chronicle/token.hpp"

namespace chronicle {

/// Bijection between token spellings and dense indices. Index 0 is Pad and
/// index 1 is Unknown; real tokens follow in frequency-descending order.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;

  Vocab() { reset(); }

  int size() const noexcept { return static_cast<int>(spellings_.size()); }

  const std::string& spelling(int index) const { return spellings_.at(static_cast<std::size_t>(index)); }

  std::optional<int> find(const std::string& spelling) const {
    auto it = index_.find(spelling);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Index of a token, or kUnknown.
  int index_of(const Token& t) const {
    auto it = index_.find(spell(t));
    return it == index_.end() ? kUnknown : it->second;
  }

  bool is_concept(int index) const { return concept_ids_.at(static_cast<std::size_t>(index)).has_value(); }

  const std::optional<ConceptId>& concept_id(int index) const {
    return concept_ids_.at(static_cast<std::size_t>(index));
  }

  const std::optional<ConceptType>& concept_type(int index) const {
    return types_.at(static_cast<std::size_t>(index));
  }

  bool is_special(int index) const { return index == kPad || index == kUnknown; }

  /// Appends a token; returns its index. Existing spellings are returned as-is.
  int add(const std::string& spelling, std::optional<ConceptType> type = std::nullopt) {
    if (auto f = find(spelling)) return *f;
    const int idx = size();
    spellings_.push_back(spelling);
    index_.emplace(spelling, idx);
    std::optional<ConceptId> cid;
    if (spelling.starts_with("C:")) cid = spelling.substr(2);
    concept_ids_.push_back(cid);
    types_.push_back(cid ? type : std::nullopt);
    return idx;
  }

  std::vector<int> encode(const std::vector<TimelineItem>& items) const {
    std::vector<int> out;
    out.reserve(items.size());
    for (const auto& i : items) out.push_back(index_of(i.token));
    return out;
  }

  std::vector<int> encode(const Timeline& t) const { return encode(t.items); }

  bool operator==(const Vocab& o) const {
    return spellings_ == o.spellings_ && types_ == o.types_;
  }

  nlohmann::json to_json() const {
    nlohmann::json tokens = nlohmann::json::array();
    for (int i = 0; i < size(); ++i) {
      const auto& ty = types_[static_cast<std::size_t>(i)];
      tokens.push_back({{"index", i},
                        {"token", spellings_[static_cast<std::size_t>(i)]},
                        {"type", ty ? nlohmann::json(std::string(to_string(*ty))) : nlohmann::json(nullptr)}});
    }
    return {{"pad", kPad}, {"unknown", kUnknown}, {"tokens", std::move(tokens)}};
  }

  static Vocab from_json(const nlohmann::json& j) {
    Vocab v;
    const auto& tokens = j.at("tokens");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto& t = tokens[i];
      if (t.at("index").get<std::size_t>() != i) {
        throw Error(Errc::ParseError, "vocab indices must be dense and ordered");
      }
      if (i < 2) continue;
      std::optional<ConceptType> ty;
      if (!t.at("type").is_null()) ty = parse_concept_type(t.at("type").get<std::string>());
      v.add(t.at("token").get<std::string>(), ty);
    }
    return v;
  }

 private:
  void reset() {
    spellings_.clear();
    index_.clear();
    concept_ids_.clear();
    types_.clear();
    add(std::string(kPadSpelling));
    add(std::string(kUnknownSpelling));
  }

  std::vector<std::string> spellings_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::optional<ConceptId>> concept_ids_;
  std::vector<std::optional<ConceptType>> types_;
};

/// Vocabulary over every token spelling in the training fragments, ordered by
/// frequency (descending) then spelling. Concept tokens are tagged with their
/// type when an ontology is supplied.
inline Vocab build_vocab(const std::vector<Timeline>& train, const Ontology* ontology = nullptr) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : train) {
    for (const auto& i : t.items) ++counts[spell(i.token)];
  }
  if (counts.empty()) throw Error(Errc::EmptyCorpus, "no tokens in training timelines");
  std::vector<std::pair<std::string, std::size_t>> order(counts.begin(), counts.end());
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [s, n] : order) {
    std::optional<ConceptType> ty;
    if (ontology && s.starts_with("C:") && ontology->contains(s.substr(2))) {
      ty = ontology->type_of(s.substr(2));
    }
    v.add(s, ty);
  }
  return v;
}

}  // namespace chronicle
