#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "chronicle/error.hpp"
#include "chronicle/timeline.hpp"

namespace chronicle {

using nlohmann::json;

namespace detail {

template <class Fn>
void for_each_jsonl(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    json j;
    try {
      j = json::parse(line);
      fn(j);
    } catch (const json::exception& e) {
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path);
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path);
  return out;
}

}  // namespace detail

// Events: {"patient_id": str, "timestamp": "YYYY-MM-DD", "concept": str}

inline std::vector<AnnotationEvent> read_events(std::istream& in) {
  std::vector<AnnotationEvent> out;
  detail::for_each_jsonl(in, [&](const json& j) {
    out.push_back(AnnotationEvent{j.at("patient_id").get<std::string>(),
                                  parse_date(j.at("timestamp").get<std::string>()),
                                  j.at("concept").get<std::string>()});
  });
  return out;
}

inline void write_events(std::ostream& out, const std::vector<AnnotationEvent>& events) {
  for (const auto& e : events) {
    json j = {{"patient_id", e.patient_id},
              {"timestamp", format_date(e.timestamp)},
              {"concept", e.concept_id}};
    out << j.dump() << '\n';
  }
}

// Demographics: {"patient_id", "sex", "ethnicity", "birth_date", "death_date"|null}

inline DemographicsMap read_demographics(std::istream& in) {
  DemographicsMap out;
  detail::for_each_jsonl(in, [&](const json& j) {
    Demographics d;
    d.sex = parse_sex(j.at("sex").get<std::string>());
    d.ethnicity = parse_ethnicity(j.at("ethnicity").get<std::string>());
    d.birth_date = parse_date(j.at("birth_date").get<std::string>());
    if (j.contains("death_date") && !j.at("death_date").is_null()) {
      d.death_date = parse_date(j.at("death_date").get<std::string>());
      if (*d.death_date < d.birth_date) {
        throw Error(Errc::ParseError, "death_date precedes birth_date");
      }
    }
    out[j.at("patient_id").get<std::string>()] = d;
  });
  return out;
}

inline void write_demographics(std::ostream& out, const DemographicsMap& demographics) {
  for (const auto& [pid, d] : demographics) {
    json j = {{"patient_id", pid},
              {"sex", std::string(sex_name(d.sex))},
              {"ethnicity", std::string(ethnicity_name(d.ethnicity))},
              {"birth_date", format_date(d.birth_date)},
              {"death_date", d.death_date ? json(format_date(*d.death_date)) : json(nullptr)}};
    out << j.dump() << '\n';
  }
}

// Built timelines: {"patient_id", "fragment", "items": [{"token", "t"}]}

inline json timeline_to_json(const Timeline& t) {
  json items = json::array();
  for (const auto& i : t.items) items.push_back({{"token", spell(i.token)}, {"t", format_date(i.t)}});
  return {{"patient_id", t.patient_id}, {"fragment", t.fragment_index}, {"items", std::move(items)}};
}

inline Timeline timeline_from_json(const json& j) {
  Timeline t;
  t.patient_id = j.at("patient_id").get<std::string>();
  t.fragment_index = j.at("fragment").get<int>();
  for (const auto& i : j.at("items")) {
    t.items.push_back({parse_token(i.at("token").get<std::string>()),
                       parse_date(i.at("t").get<std::string>())});
  }
  return t;
}

inline std::vector<Timeline> read_timelines(std::istream& in) {
  std::vector<Timeline> out;
  detail::for_each_jsonl(in, [&](const json& j) { out.push_back(timeline_from_json(j)); });
  return out;
}

inline void write_timelines(std::ostream& out, const std::vector<Timeline>& timelines) {
  for (const auto& t : timelines) out << timeline_to_json(t).dump() << '\n';
}

inline std::vector<AnnotationEvent> read_events_file(const std::string& path) {
  auto in = detail::open_in(path);
  return read_events(in);
}

inline DemographicsMap read_demographics_file(const std::string& path) {
  auto in = detail::open_in(path);
  return read_demographics(in);
}

inline std::vector<Timeline> read_timelines_file(const std::string& path) {
  auto in = detail::open_in(path);
  return read_timelines(in);
}

inline Ontology load_ontology_file(const std::string& path) {
  auto in = detail::open_in(path);
  return load_ontology(in);
}

inline json stratum_to_json(const StratumStats& s) {
  return {{"patients", s.patients},
          {"timelines", s.timelines},
          {"mean_length", s.mean_length},
          {"mean_span_years", s.mean_span_years}};
}

inline json stats_to_json(const CorpusStats& s) {
  auto strata = [](const std::map<std::string, StratumStats>& m) {
    json j = json::object();
    for (const auto& [k, v] : m) j[k] = stratum_to_json(v);
    return j;
  };
  return {{"overall", stratum_to_json(s.overall)},
          {"by_ethnicity", strata(s.by_ethnicity)},
          {"by_sex", strata(s.by_sex)},
          {"by_age_band", strata(s.by_age_band)},
          {"mean_concepts_per_type", s.mean_concepts_per_type}};
}

}  // namespace chronicle
