#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "chronicle/date.hpp"
#include "chronicle/ontology.hpp"
#include "chronicle/random.hpp"
#include "chronicle/timeline.hpp"
#include "chronicle/timeline_io.hpp"

namespace chronicle {

struct SynthParams {
  int n_concepts{50};
  int n_patients{200};
  double mean_events{30.0};  // kernel steps per patient
  std::uint64_t seed{0};
  int hierarchy_depth{1};  // nodes in the longest ancestor chain; 1 is flat
  double chronic_fraction{0.0};

  double mean_gap_days{7.0};
  int branching{4};                   // successors per concept
  double dominance{0.6};              // probability of the most likely successor
  double demographic_effect{0.0};     // chance a row's favourite differs by sex
  double recurrence_probability{0.3}; // per later event day, for chronic concepts
  double mortality{0.0};              // mean per-event death hazard

  void validate() const {
    if (n_concepts < 1 || n_patients < 1 || !(mean_events >= 1.0) || hierarchy_depth < 1 ||
        branching < 1 || !(mean_gap_days >= 1.0)) {
      throw Error(Errc::InvalidArgument, "synthetic parameters must be positive");
    }
    auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!unit(chronic_fraction) || !unit(dominance) || !unit(demographic_effect) ||
        !unit(recurrence_probability) || !unit(mortality)) {
      throw Error(Errc::InvalidArgument, "synthetic probabilities must lie in [0, 1]");
    }
    if (hierarchy_depth > n_concepts) {
      throw Error(Errc::InvalidArgument, "hierarchy_depth exceeds n_concepts");
    }
  }
};

/// Demographic strata of the transition kernel, indexed by sex.
inline constexpr std::array<Sex, 2> kStrata = {Sex::Female, Sex::Male};

inline std::size_t stratum_of(Sex s) { return s == Sex::Male ? 1 : 0; }

struct SynthWorld {
  SynthParams params;
  std::vector<ConceptRow> concepts;
  std::vector<std::vector<double>> initial;               // [stratum][concept]
  std::vector<std::vector<std::vector<double>>> kernel;   // [stratum][from][to]
  std::vector<double> chronic;                            // recurrence probability, 0 if not chronic
  std::vector<double> mortality;                          // death hazard after each concept

  int size() const { return static_cast<int>(concepts.size()); }
  Ontology ontology() const { return Ontology(concepts); }

  int index_of(const ConceptId& id) const {
    for (int i = 0; i < size(); ++i) {
      if (concepts[static_cast<std::size_t>(i)].id == id) return i;
    }
    return -1;
  }
};

namespace detail {

inline std::string synth_concept_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "SC%04d", i);
  return buf;
}

// Loose type mix: the four evaluated groups dominate.
inline ConceptType draw_type(std::mt19937_64& rng) {
  static const std::vector<double> w = {0.36, 0.26, 0.18, 0.14, 0.03, 0.03};
  static const std::array<ConceptType, 6> types = {ConceptType::Disorder, ConceptType::Finding,
                                                   ConceptType::Substance, ConceptType::Procedure,
                                                   ConceptType::BodyStructure, ConceptType::Organism};
  return types[sample_index(w, rng)];
}

inline std::string type_word(ConceptType t) {
  std::string s(to_string(t));
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline void normalise(std::vector<double>& w) {
  double s = 0.0;
  for (double x : w) s += x;
  for (auto& x : w) x /= s;
}

}  // namespace detail

/// Random world: typed concepts with a hierarchy, sex-specific first-order
/// transition kernels, chronic recurrence and per-concept mortality.
inline SynthWorld build_world(const SynthParams& p) {
  p.validate();
  std::mt19937_64 rng(mix_seed(p.seed, 0xC0FFEE));
  const int n = p.n_concepts;
  SynthWorld w;
  w.params = p;

  // concepts and hierarchy
  std::vector<int> level(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    ConceptType t;
    if (i < 4 && n >= 4) {
      t = std::array{ConceptType::Disorder, ConceptType::Finding, ConceptType::Substance,
                     ConceptType::Procedure}[static_cast<std::size_t>(i)];
    } else {
      t = detail::draw_type(rng);
    }
    ConceptRow row{detail::synth_concept_id(i), "", t, {}};
    row.name = "Synthetic " + detail::type_word(t) + " " + std::to_string(i);
    if (p.hierarchy_depth > 1) {
      // the first hierarchy_depth concepts form one full chain
      level[static_cast<std::size_t>(i)] =
          i < p.hierarchy_depth ? i : static_cast<int>(uniform_index(static_cast<std::size_t>(p.hierarchy_depth), rng));
      const int lv = level[static_cast<std::size_t>(i)];
      if (lv > 0) {
        std::vector<int> cands;
        for (int j = 0; j < i; ++j) {
          if (level[static_cast<std::size_t>(j)] == lv - 1) cands.push_back(j);
        }
        row.parents.push_back(detail::synth_concept_id(cands[uniform_index(cands.size(), rng)]));
      }
    }
    w.concepts.push_back(std::move(row));
  }

  // kernels: shared successor sets, one dominant successor per row
  const std::size_t S = kStrata.size();
  w.initial.assign(S, std::vector<double>(static_cast<std::size_t>(n), 0.0));
  w.kernel.assign(S, std::vector<std::vector<double>>(static_cast<std::size_t>(n),
                                                      std::vector<double>(static_cast<std::size_t>(n), 0.0)));
  for (std::size_t s = 0; s < S; ++s) {
    for (auto& x : w.initial[s]) {
      const double u = unit_uniform(rng);
      x = 0.05 + u * u * u;
    }
    detail::normalise(w.initial[s]);
  }
  for (int c = 0; c < n; ++c) {
    std::vector<int> others;
    for (int j = 0; j < n; ++j) {
      if (j != c) others.push_back(j);
    }
    if (others.empty()) others.push_back(c);
    shuffle(others, rng);
    others.resize(std::min<std::size_t>(others.size(), static_cast<std::size_t>(p.branching)));
    std::vector<double> rest(others.size(), 0.0);
    for (auto& x : rest) x = 0.2 + unit_uniform(rng);
    const std::size_t favourite_m =
        others.size() > 1 && unit_uniform(rng) < p.demographic_effect ? 1 + uniform_index(others.size() - 1, rng) : 0;
    for (std::size_t s = 0; s < S; ++s) {
      auto& row = w.kernel[s][static_cast<std::size_t>(c)];
      const std::size_t fav = s == 0 ? 0 : favourite_m;
      if (others.size() == 1) {
        row[static_cast<std::size_t>(others[0])] = 1.0;
        continue;
      }
      double rest_sum = 0.0;
      for (std::size_t i = 0; i < others.size(); ++i) {
        if (i != fav) rest_sum += rest[i];
      }
      for (std::size_t i = 0; i < others.size(); ++i) {
        row[static_cast<std::size_t>(others[i])] =
            i == fav ? p.dominance : (1.0 - p.dominance) * rest[i] / rest_sum;
      }
    }
  }

  w.chronic.assign(static_cast<std::size_t>(n), 0.0);
  w.mortality.assign(static_cast<std::size_t>(n), 0.0);
  for (int c = 0; c < n; ++c) {
    if (unit_uniform(rng) < p.chronic_fraction) w.chronic[static_cast<std::size_t>(c)] = p.recurrence_probability;
    w.mortality[static_cast<std::size_t>(c)] = std::min(1.0, p.mortality * 2.0 * unit_uniform(rng));
  }
  return w;
}

struct Population {
  std::vector<AnnotationEvent> events;
  DemographicsMap demographics;
};

/// Walks the kernel for each patient. Patient i uses its own stream derived
/// from (seed, i), so the population is reproducible and order-independent.
inline Population sample_population(const SynthWorld& w, int n_patients, std::uint64_t seed) {
  if (n_patients < 0) throw Error(Errc::InvalidArgument, "n_patients must be >= 0");
  const auto& p = w.params;
  const int n = w.size();
  if (n == 0) throw Error(Errc::InvalidArgument, "empty world");
  const double gap_p = 1.0 / p.mean_gap_days;  // 1 + geometric(gap_p) has mean mean_gap_days
  const Date birth_lo = make_date(1930, 1, 1);
  const Date birth_hi = make_date(2000, 12, 31);
  const Date start_lo = make_date(2005, 1, 1);
  const Date start_hi = make_date(2015, 12, 31);
  static const std::vector<double> eth_w = {0.1, 0.12, 0.05, 0.05, 0.08, 0.6};

  Population pop;
  for (int i = 0; i < n_patients; ++i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    char id[16];
    std::snprintf(id, sizeof id, "P%06d", i);
    Demographics d;
    d.sex = unit_uniform(rng) < 0.5 ? Sex::Female : Sex::Male;
    d.ethnicity = static_cast<Ethnicity>(sample_index(eth_w, rng));
    d.birth_date = add_days(birth_lo, static_cast<std::int64_t>(uniform_index(
                                          static_cast<std::size_t>(birth_hi.days - birth_lo.days + 1), rng)));
    Date t = add_days(start_lo, static_cast<std::int64_t>(uniform_index(
                                    static_cast<std::size_t>(start_hi.days - start_lo.days + 1), rng)));
    const auto s = stratum_of(d.sex);
    const int budget = std::max(1, static_cast<int>(std::lround(p.mean_events * (0.5 + unit_uniform(rng)))));

    std::vector<int> chronic_seen;
    int c = static_cast<int>(sample_index(w.initial[s], rng));
    for (int step = 0; step < budget; ++step) {
      if (step > 0) {
        t = add_days(t, 1 + geometric(gap_p, rng));
        c = static_cast<int>(sample_index(w.kernel[s][static_cast<std::size_t>(c)], rng));
        for (int cc : chronic_seen) {
          if (cc != c && unit_uniform(rng) < w.chronic[static_cast<std::size_t>(cc)]) {
            pop.events.push_back({id, t, w.concepts[static_cast<std::size_t>(cc)].id});
          }
        }
      }
      pop.events.push_back({id, t, w.concepts[static_cast<std::size_t>(c)].id});
      if (w.chronic[static_cast<std::size_t>(c)] > 0.0 &&
          std::find(chronic_seen.begin(), chronic_seen.end(), c) == chronic_seen.end()) {
        chronic_seen.push_back(c);
      }
      if (unit_uniform(rng) < w.mortality[static_cast<std::size_t>(c)]) {
        d.death_date = add_days(t, 1 + geometric(gap_p, rng));
        break;
      }
    }
    pop.demographics[id] = d;
  }
  return pop;
}

struct BayesResult {
  double accuracy{0.0};
  std::int64_t positions{0};
  std::int64_t correct{0};
};

/// Top-1 accuracy of the predictor that knows the true kernel: at every
/// concept position after the first token it predicts the argmax of the row
/// for the previous concept in the fragment (or the initial row of the
/// fragment's sex stratum when there is none).
inline BayesResult bayes_optimal(const SynthWorld& w, const std::vector<Timeline>& timelines) {
  std::map<ConceptId, int> index;
  for (int i = 0; i < w.size(); ++i) index[w.concepts[static_cast<std::size_t>(i)].id] = i;
  auto argmax = [](const std::vector<double>& row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  };
  BayesResult r;
  for (const auto& tl : timelines) {
    std::size_t s = 0;
    int prev = -1;
    for (std::size_t j = 0; j < tl.items.size(); ++j) {
      const auto& tk = tl.items[j].token;
      if (const auto* sx = std::get_if<tok::SexTok>(&tk)) s = stratum_of(sx->value);
      if (!is_concept(tk)) continue;
      auto it = index.find(concept_of(tk));
      if (it == index.end()) {
        prev = -1;
        continue;
      }
      if (j >= 1) {
        const auto& row = prev < 0 ? w.initial[s] : w.kernel[s][static_cast<std::size_t>(prev)];
        ++r.positions;
        r.correct += argmax(row) == it->second;
      }
      prev = it->second;
    }
  }
  r.accuracy = r.positions ? static_cast<double>(r.correct) / static_cast<double>(r.positions) : 0.0;
  return r;
}

inline double bayes_optimal_accuracy(const SynthWorld& w, const std::vector<Timeline>& timelines) {
  return bayes_optimal(w, timelines).accuracy;
}

// ---------------------------------------------------------------------------
// world.json

inline void to_json(nlohmann::json& j, const SynthParams& p) {
  j = {{"n_concepts", p.n_concepts},
       {"n_patients", p.n_patients},
       {"mean_events", p.mean_events},
       {"seed", p.seed},
       {"hierarchy_depth", p.hierarchy_depth},
       {"chronic_fraction", p.chronic_fraction},
       {"mean_gap_days", p.mean_gap_days},
       {"branching", p.branching},
       {"dominance", p.dominance},
       {"demographic_effect", p.demographic_effect},
       {"recurrence_probability", p.recurrence_probability},
       {"mortality", p.mortality}};
}

inline void from_json(const nlohmann::json& j, SynthParams& p) {
  p.n_concepts = j.at("n_concepts").get<int>();
  p.n_patients = j.at("n_patients").get<int>();
  p.mean_events = j.at("mean_events").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.hierarchy_depth = j.at("hierarchy_depth").get<int>();
  p.chronic_fraction = j.at("chronic_fraction").get<double>();
  p.mean_gap_days = j.at("mean_gap_days").get<double>();
  p.branching = j.at("branching").get<int>();
  p.dominance = j.at("dominance").get<double>();
  p.demographic_effect = j.at("demographic_effect").get<double>();
  p.recurrence_probability = j.at("recurrence_probability").get<double>();
  p.mortality = j.at("mortality").get<double>();
}

inline nlohmann::json world_to_json(const SynthWorld& w) {
  nlohmann::json concepts = nlohmann::json::array();
  for (const auto& c : w.concepts) {
    concepts.push_back({{"id", c.id}, {"name", c.name}, {"type", to_string(c.type)}, {"parents", c.parents}});
  }
  nlohmann::json strata = nlohmann::json::array();
  for (auto s : kStrata) strata.push_back(std::string(sex_code(s)));
  return {{"params", w.params},     {"concepts", std::move(concepts)}, {"strata", std::move(strata)},
          {"initial", w.initial},   {"kernel", w.kernel},              {"chronic", w.chronic},
          {"mortality", w.mortality}};
}

inline SynthWorld world_from_json(const nlohmann::json& j) {
  SynthWorld w;
  try {
    w.params = j.at("params").get<SynthParams>();
    for (const auto& c : j.at("concepts")) {
      w.concepts.push_back({c.at("id").get<std::string>(), c.at("name").get<std::string>(),
                            parse_concept_type(c.at("type").get<std::string>()),
                            c.at("parents").get<std::vector<std::string>>()});
    }
    w.initial = j.at("initial").get<std::vector<std::vector<double>>>();
    w.kernel = j.at("kernel").get<std::vector<std::vector<std::vector<double>>>>();
    w.chronic = j.at("chronic").get<std::vector<double>>();
    w.mortality = j.at("mortality").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("world.json: ") + e.what());
  }
  return w;
}

/// Writes events.jsonl, demographics.jsonl, ontology.tsv and world.json.
inline void write_synthetic_dataset(const SynthWorld& w, const Population& pop,
                                    const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  {
    auto out = detail::open_out((dir / "events.jsonl").string());
    write_events(out, pop.events);
  }
  {
    auto out = detail::open_out((dir / "demographics.jsonl").string());
    write_demographics(out, pop.demographics);
  }
  {
    auto out = detail::open_out((dir / "ontology.tsv").string());
    write_ontology(out, w.ontology());
  }
  {
    auto out = detail::open_out((dir / "world.json").string());
    out << world_to_json(w).dump() << "\n";
  }
}

}  // namespace chronicle
