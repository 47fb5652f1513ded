#pragma once

// JSON-over-HTTP front end for a loaded model. Handlers are plain functions
// of (model, request) and are usable without a socket.

#include <cctype>
#include <cstdlib>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <httplib.h>

#include "chronicle/generate.hpp"
#include "chronicle/metrics.hpp"
#include "chronicle/model.hpp"
#include "chronicle/ontology.hpp"

namespace chronicle {

struct Response {
  int status{200};
  nlohmann::json body;
};

inline constexpr int kMaxForecastK = 100;
inline constexpr std::size_t kMaxVocabHits = 50;

namespace detail {

inline int http_status(Errc c) {
  switch (c) {
    case Errc::SequenceTooLong: return 422;
    case Errc::ParseError:
    case Errc::UnknownToken:
    case Errc::InvalidArgument:
    case Errc::IndexOutOfVocab:
    case Errc::UnknownType: return 400;
    default: return 500;
  }
}

inline Response error_response(Errc c, const std::string& detail, std::optional<int> position = std::nullopt) {
  nlohmann::json body = {{"error", errc_name(c)}, {"detail", detail}};
  if (position) body["position"] = *position;
  return {http_status(c), std::move(body)};
}

// Error raised while decoding a request; carries the offending item index.
struct RequestError {
  Errc code;
  std::string detail;
  std::optional<int> position;
};

inline std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace detail

struct ServiceInfo {
  std::string model_version;
};

class Service {
 public:
  Service(Model<float> model, std::optional<Ontology> ontology, ServiceInfo info)
      : model_(std::move(model)), ontology_(std::move(ontology)), info_(std::move(info)) {}

  const Model<float>& model() const { return model_; }

  Response health() const { return {200, {{"status", "ok"}, {"model_version", info_.model_version}}}; }

  /// Body: {"items": [spelling...], "type"?, "novelty"?, "k"?}
  Response forecast(const std::string& body) const {
    return guarded([&] {
      const auto req = parse_body(body);
      const int k = req.value("k", 10);
      if (k < 1 || k > kMaxForecastK) {
        throw detail::RequestError{Errc::InvalidArgument, "k must lie in [1, 100]", std::nullopt};
      }
      std::optional<ConceptType> type;
      std::optional<Novelty> novelty;
      try {
        if (req.contains("type") && !req["type"].is_null()) type = parse_concept_type(req["type"].get<std::string>());
        if (req.contains("novelty") && !req["novelty"].is_null()) {
          novelty = parse_novelty(req["novelty"].get<std::string>());
        }
      } catch (const nlohmann::json::exception& e) {
        throw detail::RequestError{Errc::ParseError, e.what(), std::nullopt};
      }
      const auto tokens = encode_items(req);
      if (tokens.empty()) throw detail::RequestError{Errc::InvalidArgument, "items must not be empty", std::nullopt};
      const auto history = history_of(tokens);
      const auto dist = next_distribution(model_, tokens);
      const auto ranked = candidate_filter(dist, model_.vocab, type, novelty, history, k);
      nlohmann::json out = nlohmann::json::array();
      for (int i : ranked) {
        auto c = describe(i);
        c["probability"] = dist[static_cast<std::size_t>(i)];
        c["novelty"] = to_string(history.count(*model_.vocab.concept_id(i)) ? Novelty::Recurring : Novelty::New);
        out.push_back(std::move(c));
      }
      return Response{200, {{"candidates", std::move(out)}}};
    });
  }

  /// Body: {"items", "top_k"?, "temperature"?, "seed"?, "max_new_tokens"?, "concepts_only"?}
  Response generate(const std::string& body) const {
    return guarded([&] {
      const auto req = parse_body(body);
      SamplerConfig sc;
      try {
        sc.top_k = req.value("top_k", sc.top_k);
        sc.temperature = req.value("temperature", sc.temperature);
        sc.seed = req.value("seed", sc.seed);
        sc.max_new_tokens = req.value("max_new_tokens", sc.max_new_tokens);
        sc.concepts_only = req.value("concepts_only", sc.concepts_only);
      } catch (const nlohmann::json::exception& e) {
        throw detail::RequestError{Errc::ParseError, e.what(), std::nullopt};
      }
      const auto tokens = encode_items(req);
      if (tokens.empty()) throw detail::RequestError{Errc::InvalidArgument, "items must not be empty", std::nullopt};
      const auto g = chronicle::generate(model_, tokens, sc);
      nlohmann::json out = nlohmann::json::array();
      for (std::size_t i = 0; i < g.tokens.size(); ++i) {
        auto item = describe(g.tokens[i]);
        item["generated"] = static_cast<bool>(g.generated[i]);
        out.push_back(std::move(item));
      }
      return Response{200, {{"tokens", std::move(out)}}};
    });
  }

  /// Body: {"items", "target": spelling}
  Response saliency(const std::string& body) const {
    return guarded([&] {
      const auto req = parse_body(body);
      if (!req.contains("target") || !req["target"].is_string()) {
        throw detail::RequestError{Errc::ParseError, "target must be a token spelling", std::nullopt};
      }
      const auto spelling = req["target"].get<std::string>();
      const int target = index_of_spelling(spelling, std::nullopt);
      const auto tokens = encode_items(req);
      if (tokens.empty()) throw detail::RequestError{Errc::InvalidArgument, "items must not be empty", std::nullopt};
      const auto scores = chronicle::saliency(model_, tokens, target);
      return Response{200, {{"scores", scores}}};
    });
  }

  /// Case-insensitive substring search over concept names and ids.
  Response vocab(const std::string& query) const {
    const auto q = detail::lower(query);
    nlohmann::json out = nlohmann::json::array();
    const auto& v = model_.vocab;
    for (int i = 0; i < v.size() && out.size() < kMaxVocabHits; ++i) {
      if (!v.is_concept(i)) continue;
      const auto name = name_of(*v.concept_id(i));
      if (detail::lower(name).find(q) == std::string::npos &&
          detail::lower(*v.concept_id(i)).find(q) == std::string::npos) {
        continue;
      }
      out.push_back(describe(i));
    }
    return {200, {{"matches", std::move(out)}}};
  }

 private:
  template <class F>
  Response guarded(F&& f) const {
    try {
      return f();
    } catch (const detail::RequestError& e) {
      return detail::error_response(e.code, e.detail, e.position);
    } catch (const Error& e) {
      return detail::error_response(e.code(), e.what());
    }
  }

  static nlohmann::json parse_body(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw detail::RequestError{Errc::ParseError, e.what(), std::nullopt};
    }
    if (!j.is_object()) throw detail::RequestError{Errc::ParseError, "request body must be an object", std::nullopt};
    return j;
  }

  int index_of_spelling(const std::string& s, std::optional<int> position) const {
    Token t;
    try {
      t = parse_token(s);
    } catch (const Error& e) {
      throw detail::RequestError{Errc::ParseError, e.what(), position};
    }
    const int i = model_.vocab.index_of(t);
    if (i == Vocab::kUnknown || i == Vocab::kPad) {
      throw detail::RequestError{Errc::UnknownToken, "token '" + s + "' is not in the vocabulary", position};
    }
    return i;
  }

  std::vector<int> encode_items(const nlohmann::json& req) const {
    if (!req.contains("items") || !req["items"].is_array()) {
      throw detail::RequestError{Errc::ParseError, "items must be an array of token spellings", std::nullopt};
    }
    std::vector<int> out;
    int pos = 0;
    for (const auto& item : req["items"]) {
      if (!item.is_string()) throw detail::RequestError{Errc::ParseError, "item is not a string", pos};
      out.push_back(index_of_spelling(item.get<std::string>(), pos));
      ++pos;
    }
    return out;
  }

  std::unordered_set<ConceptId> history_of(const std::vector<int>& tokens) const {
    std::unordered_set<ConceptId> h;
    for (int t : tokens) {
      if (const auto& id = model_.vocab.concept_id(t)) h.insert(*id);
    }
    return h;
  }

  std::string name_of(const ConceptId& id) const {
    if (ontology_ && ontology_->contains(id)) return ontology_->name_of(id);
    return id;
  }

  nlohmann::json describe(int index) const {
    const auto& v = model_.vocab;
    nlohmann::json j = {{"token", v.spelling(index)}};
    if (const auto& id = v.concept_id(index)) {
      j["concept"] = *id;
      j["name"] = name_of(*id);
      j["type"] = v.concept_type(index) ? std::string(to_string(*v.concept_type(index))) : std::string();
    }
    return j;
  }

  Model<float> model_;
  std::optional<Ontology> ontology_;
  ServiceInfo info_;
};

struct BindAddress {
  std::string host{"127.0.0.1"};
  int port{8080};
};

/// Parses "host:port"; the flag wins over the CHRONICLE_BIND environment
/// variable, which wins over the default.
inline BindAddress resolve_bind(const std::optional<std::string>& flag) {
  std::optional<std::string> text = flag;
  if (!text) {
    if (const char* env = std::getenv("CHRONICLE_BIND"); env && *env) text = env;
  }
  BindAddress b;
  if (!text) return b;
  const auto colon = text->rfind(':');
  if (colon == std::string::npos) throw Error(Errc::InvalidArgument, "bind address must be host:port");
  b.host = text->substr(0, colon);
  try {
    std::size_t used = 0;
    b.port = std::stoi(text->substr(colon + 1), &used);
    if (used != text->size() - colon - 1) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    throw Error(Errc::InvalidArgument, "bad port in bind address '" + *text + "'");
  }
  if (b.host.empty() || b.port < 0 || b.port > 65535) {
    throw Error(Errc::InvalidArgument, "bad bind address '" + *text + "'");
  }
  return b;
}

/// Routes HTTP requests to a Service.
class HttpServer {
 public:
  explicit HttpServer(const Service& service) : service_(service) {
    auto send = [](httplib::Response& res, const Response& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server_.Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, service_.health());
    });
    server_.Get("/v1/vocab", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.vocab(req.has_param("query") ? req.get_param_value("query") : std::string()));
    });
    server_.Post("/v1/forecast", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.forecast(req.body));
    });
    server_.Post("/v1/generate", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.generate(req.body));
    });
    server_.Post("/v1/saliency", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.saliency(req.body));
    });
  }

  /// Binds the socket; port 0 picks a free port. Returns the bound port.
  int bind(const BindAddress& b) {
    const int port = b.port == 0 ? server_.bind_to_any_port(b.host) : (server_.bind_to_port(b.host, b.port) ? b.port : -1);
    if (port < 0) throw Error(Errc::IoFailure, "cannot bind " + b.host + ":" + std::to_string(b.port));
    return port;
  }

  /// Blocks until stop() is called.
  void run() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  const Service& service_;
  httplib::Server server_;
};

}  // namespace chronicle
