#pragma once

#include <array>
#include <charconv>
#include <string>
#include <string_view>
#include <variant>

#include "chronicle/error.hpp"
#include "chronicle/ontology.hpp"

namespace chronicle {

enum class Sex { Female, Male, Unknown };
enum class Ethnicity { Asian, Black, Mixed, Other, Unknown, White };

inline constexpr int kMaxAge = 130;

inline std::string_view sex_code(Sex s) {
  switch (s) {
    case Sex::Female: return "F";
    case Sex::Male: return "M";
    case Sex::Unknown: return "U";
  }
  return "U";
}

inline std::string_view sex_name(Sex s) {
  switch (s) {
    case Sex::Female: return "Female";
    case Sex::Male: return "Male";
    case Sex::Unknown: return "Unknown";
  }
  return "Unknown";
}

/// Accepts the one-letter code or the full name.
inline Sex parse_sex(std::string_view s) {
  if (s == "F" || detail::iequals(s, "Female")) return Sex::Female;
  if (s == "M" || detail::iequals(s, "Male")) return Sex::Male;
  if (s == "U" || detail::iequals(s, "Unknown")) return Sex::Unknown;
  throw Error(Errc::ParseError, "unknown sex '" + std::string(s) + "'");
}

inline constexpr std::array<std::string_view, 6> kEthnicityNames = {"Asian", "Black", "Mixed",
                                                                   "Other", "Unknown", "White"};

inline std::string_view ethnicity_name(Ethnicity e) {
  return kEthnicityNames[static_cast<std::size_t>(e)];
}

inline Ethnicity parse_ethnicity(std::string_view s) {
  for (std::size_t i = 0; i < kEthnicityNames.size(); ++i) {
    if (detail::iequals(s, kEthnicityNames[i])) return static_cast<Ethnicity>(i);
  }
  throw Error(Errc::ParseError, "unknown ethnicity '" + std::string(s) + "'");
}

namespace tok {
struct Concept {
  ConceptId id;
  bool operator==(const Concept&) const = default;
};
struct SexTok {
  Sex value;
  bool operator==(const SexTok&) const = default;
};
struct EthTok {
  Ethnicity value;
  bool operator==(const EthTok&) const = default;
};
struct Age {
  int years;
  bool operator==(const Age&) const = default;
};
struct Sep {
  bool operator==(const Sep&) const = default;
};
struct Death {
  bool operator==(const Death&) const = default;
};
struct Pad {
  bool operator==(const Pad&) const = default;
};
}  // namespace tok

using Token = std::variant<tok::Concept, tok::SexTok, tok::EthTok, tok::Age, tok::Sep, tok::Death,
                           tok::Pad>;

inline bool is_concept(const Token& t) { return std::holds_alternative<tok::Concept>(t); }

inline const ConceptId& concept_of(const Token& t) { return std::get<tok::Concept>(t).id; }

inline constexpr std::string_view kPadSpelling = "<PAD>";
inline constexpr std::string_view kUnknownSpelling = "<UNK>";

/// Canonical spelling: C:<id>, SEX:<F|M|U>, ETH:<name>, AGE:<years>, SEP, DEATH.
inline std::string spell(const Token& t) {
  struct Visitor {
    std::string operator()(const tok::Concept& c) const { return "C:" + c.id; }
    std::string operator()(const tok::SexTok& s) const { return "SEX:" + std::string(sex_code(s.value)); }
    std::string operator()(const tok::EthTok& e) const {
      return "ETH:" + std::string(ethnicity_name(e.value));
    }
    std::string operator()(const tok::Age& a) const { return "AGE:" + std::to_string(a.years); }
    std::string operator()(const tok::Sep&) const { return "SEP"; }
    std::string operator()(const tok::Death&) const { return "DEATH"; }
    std::string operator()(const tok::Pad&) const { return std::string(kPadSpelling); }
  };
  return std::visit(Visitor{}, t);
}

/// Inverse of spell(); throws ParseError on malformed spellings.
inline Token parse_token(std::string_view s) {
  auto bad = [&] { return Error(Errc::ParseError, "malformed token '" + std::string(s) + "'"); };
  if (s == "SEP") return tok::Sep{};
  if (s == "DEATH") return tok::Death{};
  if (s == kPadSpelling) return tok::Pad{};
  if (s.starts_with("C:")) {
    if (s.size() == 2) throw bad();
    return tok::Concept{std::string(s.substr(2))};
  }
  if (s.starts_with("SEX:")) {
    const auto v = s.substr(4);
    if (v == "F") return tok::SexTok{Sex::Female};
    if (v == "M") return tok::SexTok{Sex::Male};
    if (v == "U") return tok::SexTok{Sex::Unknown};
    throw bad();
  }
  if (s.starts_with("ETH:")) {
    try {
      return tok::EthTok{parse_ethnicity(s.substr(4))};
    } catch (const Error&) {
      throw bad();
    }
  }
  if (s.starts_with("AGE:")) {
    const auto v = s.substr(4);
    int years = -1;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), years);
    if (v.empty() || ec != std::errc{} || p != v.data() + v.size() || years < 0 ||
        years > kMaxAge) {
      throw bad();
    }
    return tok::Age{years};
  }
  throw bad();
}

}  // namespace chronicle
