// chronicle: command-line driver for the timeline forecasting pipeline.

#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chronicle/artifact.hpp"
#include "chronicle/generate.hpp"
#include "chronicle/metrics.hpp"
#include "chronicle/metrics_reference.hpp"
#include "chronicle/service.hpp"
#include "chronicle/synthgen.hpp"
#include "chronicle/timeline.hpp"
#include "chronicle/timeline_io.hpp"
#include "chronicle/train.hpp"

#ifndef CHRONICLE_GIT_DESCRIBE
#define CHRONICLE_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using namespace chronicle;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    auto out = detail::open_out(tmp.string());
    out << text;
    if (!out.flush()) throw Error(Errc::IoFailure, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

template <class F>
void write_file(const fs::path& path, F&& body) {
  std::ostringstream ss;
  body(ss);
  write_atomic(path, ss.str());
}

// Every option of a subcommand with its resolved value.
json resolved_options(const CLI::App& sub) {
  json j = json::object();
  for (const auto* opt : sub.get_options()) {
    const auto name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    const auto& r = opt->results();
    if (r.empty()) {
      j[name] = opt->get_default_str();
    } else if (r.size() == 1) {
      j[name] = r.front();
    } else {
      j[name] = r;
    }
  }
  return j;
}

struct Manifest {
  std::string subcommand;
  json config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed{0};
};

void write_manifest(const fs::path& dir, const Manifest& m) {
  const json j = {{"subcommand", m.subcommand}, {"config", m.config},   {"inputs", m.inputs},
                  {"outputs", m.outputs},       {"seed", m.seed},       {"wall_clock", utc_now()},
                  {"git_describe", CHRONICLE_GIT_DESCRIBE}};
  write_atomic(dir / "manifest.json", j.dump(2) + "\n");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

std::string in_dir(const std::string& explicit_path, const std::string& dir, const char* name) {
  if (!explicit_path.empty()) return explicit_path;
  if (dir.empty()) throw CLI::RequiredError(std::string("--") + name + " or --input");
  return (fs::path(dir) / name).string();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

std::vector<int> encode_prompt(const Vocab& v, const std::string& prompt) {
  std::vector<int> out;
  for (const auto& s : split_list(prompt)) {
    const int i = v.index_of(parse_token(s));
    if (i == Vocab::kUnknown) throw Error(Errc::UnknownToken, "prompt token '" + s + "' is not in the vocabulary");
    out.push_back(i);
  }
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Options shared between the parser and the handlers.
struct Opts {
  // synth
  SynthParams synth;
  std::string out;
  // build-timelines
  std::string input, events, demographics, ontology;
  BuildConfig build;
  // split
  std::string timelines;
  double test_fraction{0.05};
  // train
  std::string train_file;
  ModelConfig model;
  TrainConfig tc;
  std::uint64_t seed{0};
  int threads{1};
  // evaluate
  std::string model_dir, test_file;
  bool reference{false};
  std::string ranges{"30,365,inf"};
  std::string ks{"1,5,10"};
  int breakdown{10};
  // generate
  std::string prompt;
  SamplerConfig sampler;
  // serve
  std::string bind;
};

int run_synth(const CLI::App& sub, Opts& o) {
  o.synth.seed = o.seed;
  o.synth.validate();
  const fs::path dir(o.out);
  ensure_dir(dir);
  const auto world = build_world(o.synth);
  const auto pop = sample_population(world, o.synth.n_patients, mix_seed(o.seed, 1));
  write_synthetic_dataset(world, pop, dir);
  std::cerr << "synth: " << pop.events.size() << " events for " << pop.demographics.size() << " patients\n";
  write_manifest(dir, {"synth", resolved_options(sub), {},
                       {"events.jsonl", "demographics.jsonl", "ontology.tsv", "world.json"}, o.seed});
  return 0;
}

int run_build(const CLI::App& sub, Opts& o) {
  o.build.validate();
  const auto events_path = in_dir(o.events, o.input, "events.jsonl");
  const auto demo_path = in_dir(o.demographics, o.input, "demographics.jsonl");
  const auto onto_path = in_dir(o.ontology, o.input, "ontology.tsv");
  const auto ontology = load_ontology_file(onto_path);
  const auto demographics = read_demographics_file(demo_path);
  const auto records = apply_frequency_filters(aggregate_events(read_events_file(events_path), demographics), o.build);
  const auto timelines = build_timelines(records, ontology, o.build);

  const fs::path dir(o.out);
  ensure_dir(dir);
  write_file(dir / "filtered_events.jsonl", [&](std::ostream& out) {
    for (const auto& r : records) write_events(out, r.events);
  });
  write_file(dir / "timelines.jsonl", [&](std::ostream& out) { write_timelines(out, timelines); });
  std::cerr << "build-timelines: " << timelines.size() << " timelines from " << records.size() << " patients\n";
  write_manifest(dir, {"build-timelines", resolved_options(sub), {events_path, demo_path, onto_path},
                       {"filtered_events.jsonl", "timelines.jsonl"}, o.seed});
  return 0;
}

int run_split(const CLI::App& sub, Opts& o) {
  const auto path = in_dir(o.timelines, o.input, "timelines.jsonl");
  const auto timelines = read_timelines_file(path);
  const auto s = split_by_patient(timelines, o.test_fraction, o.seed,
                                  [](const Timeline& t) -> const std::string& { return t.patient_id; });
  const fs::path dir(o.out);
  ensure_dir(dir);
  write_file(dir / "train.jsonl", [&](std::ostream& out) { write_timelines(out, s.train); });
  write_file(dir / "test.jsonl", [&](std::ostream& out) { write_timelines(out, s.test); });
  std::cerr << "split: " << s.train.size() << " train, " << s.test.size() << " test timelines\n";
  write_manifest(dir, {"split", resolved_options(sub), {path}, {"train.jsonl", "test.jsonl"}, o.seed});
  return 0;
}

int run_train(const CLI::App& sub, Opts& o) {
  const auto train_path = in_dir(o.train_file, o.input, "train.jsonl");
  const auto onto_path = in_dir(o.ontology, o.input, "ontology.tsv");
  const auto ontology = load_ontology_file(onto_path);
  const auto corpus = read_timelines_file(train_path);
  if (corpus.empty()) throw Error(Errc::EmptyCorpus, train_path + " has no timelines");
  o.model.validate();
  o.tc.seed = o.seed;
  o.tc.threads = o.threads;

  auto m = make_model<float>(o.model, build_vocab(corpus, &ontology), mix_seed(o.seed, 2));
  const fs::path dir(o.out);
  ensure_dir(dir);
  std::ostringstream log;
  const auto result = train(m, corpus, o.tc, [&](int epoch, double loss) {
    std::cerr << "epoch " << epoch + 1 << "/" << o.tc.epochs << " loss " << loss << "\n";
    log << json({{"epoch", epoch + 1}, {"loss", loss}}).dump() << '\n';
  });
  save_model(m, dir, o.tc);
  write_atomic(dir / "train_log.jsonl", log.str());
  std::cerr << "train: " << result.steps << " steps, vocab " << m.vocab_size() << ", "
            << m.params.size() << " parameters\n";
  write_manifest(dir, {"train", resolved_options(sub), {train_path, onto_path},
                       {"config.json", "vocab.json", "weights.bin", "train_log.jsonl"}, o.seed});
  return 0;
}

EvalConfig eval_config(const Opts& o) {
  EvalConfig ec;
  ec.time_ranges.clear();
  for (const auto& r : split_list(o.ranges)) {
    if (r == "inf") {
      ec.time_ranges.push_back(std::nullopt);
    } else {
      try {
        ec.time_ranges.push_back(std::stoi(r));
      } catch (const std::exception&) {
        throw CLI::ValidationError("--ranges", "bad range '" + r + "'");
      }
    }
  }
  ec.top_ks.clear();
  for (const auto& k : split_list(o.ks)) {
    try {
      ec.top_ks.push_back(std::stoi(k));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--top-ks", "bad k '" + k + "'");
    }
  }
  ec.validate();
  return ec;
}

json breakdown_json(const Breakdown& b) {
  auto rows = [](const std::vector<ConceptScore>& v) {
    json a = json::array();
    for (const auto& s : v) a.push_back({{"concept", s.concept_id}, {"tp", s.tp}, {"fp", s.fp}, {"precision", s.precision}});
    return a;
  };
  return {{"best", rows(b.best)}, {"worst", rows(b.worst)}};
}

int run_evaluate(const CLI::App& sub, Opts& o) {
  const auto ec = eval_config(o);
  const auto test_path = in_dir(o.test_file, o.input, "test.jsonl");
  const auto events_path = in_dir(o.events, o.input, "filtered_events.jsonl");
  const auto demo_path = in_dir(o.demographics, o.input, "demographics.jsonl");
  const auto m = load_model(o.model_dir);
  const auto test = read_timelines_file(test_path);
  const auto histories = aggregate_events(read_events_file(events_path), read_demographics_file(demo_path));
  const ModelPredictor<float> pred(m);
  const auto report = evaluate(pred, test, histories, ec);

  const fs::path dir(o.out);
  ensure_dir(dir);
  const json breakdown = {{"New", breakdown_json(per_concept_breakdown(report, o.breakdown, Novelty::New))},
                          {"Recurring", breakdown_json(per_concept_breakdown(report, o.breakdown, Novelty::Recurring))}};
  write_atomic(dir / "report.json", report_to_json(report).dump(2) + "\n");
  write_atomic(dir / "breakdown.json", breakdown.dump(2) + "\n");
  const auto table = render_table(report);
  write_atomic(dir / "report.txt", table);
  std::cout << table;

  int rc = 0;
  if (o.reference) {
    const auto ref = reference_evaluate(pred, test, histories, ec);
    if (ref == report) {
      std::cerr << "reference: match\n";
    } else {
      std::cerr << "reference: MISMATCH between fast and brute-force evaluation\n";
      rc = 1;
    }
  }
  write_manifest(dir, {"evaluate", resolved_options(sub), {o.model_dir, test_path, events_path, demo_path},
                       {"report.json", "breakdown.json", "report.txt"}, o.seed});
  return rc;
}

int run_generate(const CLI::App& sub, Opts& o) {
  const auto m = load_model(o.model_dir);
  std::optional<Ontology> ontology;
  if (!o.ontology.empty()) ontology = load_ontology_file(o.ontology);
  o.sampler.seed = o.seed;
  const auto prompt = encode_prompt(m.vocab, o.prompt);
  if (prompt.empty()) throw Error(Errc::InvalidArgument, "empty prompt");
  const auto g = generate(m, prompt, o.sampler);

  std::ostringstream text;
  json tokens = json::array();
  for (std::size_t i = 0; i < g.tokens.size(); ++i) {
    const auto& spelling = m.vocab.spelling(g.tokens[i]);
    std::string name;
    if (const auto& id = m.vocab.concept_id(g.tokens[i]); id && ontology && ontology->contains(*id)) {
      name = ontology->name_of(*id);
    }
    text << (g.generated[i] ? "+ " : "  ") << spelling;
    if (!name.empty()) text << "  " << name;
    text << '\n';
    tokens.push_back({{"token", spelling}, {"generated", static_cast<bool>(g.generated[i])}});
  }
  std::cout << text.str();
  if (!o.out.empty()) {
    const fs::path dir(o.out);
    ensure_dir(dir);
    write_atomic(dir / "generation.json", json({{"tokens", tokens}}).dump(2) + "\n");
    std::vector<std::string> inputs = {o.model_dir};
    if (!o.ontology.empty()) inputs.push_back(o.ontology);
    write_manifest(dir, {"generate", resolved_options(sub), inputs, {"generation.json"}, o.seed});
  }
  return 0;
}

int run_stats(const CLI::App& sub, Opts& o) {
  const auto path = in_dir(o.timelines, o.input, "timelines.jsonl");
  const auto demo_path = in_dir(o.demographics, o.input, "demographics.jsonl");
  std::optional<Ontology> ontology;
  if (!o.ontology.empty()) ontology = load_ontology_file(o.ontology);
  const auto stats = corpus_stats(read_timelines_file(path), read_demographics_file(demo_path),
                                  ontology ? &*ontology : nullptr);
  const auto text = stats_to_json(stats).dump(2) + "\n";
  std::cout << text;
  if (!o.out.empty()) {
    const fs::path dir(o.out);
    ensure_dir(dir);
    write_atomic(dir / "stats.json", text);
    write_manifest(dir, {"stats", resolved_options(sub), {path, demo_path}, {"stats.json"}, o.seed});
  }
  return 0;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int run_serve(const CLI::App&, Opts& o) {
  ArtifactInfo info;
  auto m = load_model(o.model_dir, &info);
  std::optional<Ontology> ontology;
  if (!o.ontology.empty()) ontology = load_ontology_file(o.ontology);
  const auto bind = resolve_bind(o.bind.empty() ? std::nullopt : std::optional<std::string>(o.bind));
  const Service service(std::move(m), std::move(ontology), ServiceInfo{hex64(info.checksum)});
  HttpServer server(service);
  const int port = server.bind(bind);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serving on " << bind.host << ":" << port << "\n";
  server.run();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forecasting of coded patient timelines"};
  app.set_config("--config", "", "TOML configuration file; command-line flags take precedence");
  app.require_subcommand(1);
  app.set_version_flag("--version", CHRONICLE_GIT_DESCRIBE);
  Opts o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic Markov-world dataset");
  synth->add_option("--patients", o.synth.n_patients, "Number of patients")->capture_default_str();
  synth->add_option("--concepts", o.synth.n_concepts, "Number of concepts")->capture_default_str();
  synth->add_option("--mean-events", o.synth.mean_events, "Mean events per patient")->capture_default_str();
  synth->add_option("--depth", o.synth.hierarchy_depth, "Hierarchy depth")->capture_default_str();
  synth->add_option("--chronic", o.synth.chronic_fraction, "Fraction of chronic concepts")->capture_default_str();
  synth->add_option("--recurrence", o.synth.recurrence_probability, "Re-emission probability of chronic concepts")
      ->capture_default_str();
  synth->add_option("--mean-gap", o.synth.mean_gap_days, "Mean days between events")->capture_default_str();
  synth->add_option("--branching", o.synth.branching, "Successors per concept")->capture_default_str();
  synth->add_option("--dominance", o.synth.dominance, "Probability of the favourite successor")->capture_default_str();
  synth->add_option("--demographic-effect", o.synth.demographic_effect, "Sex effect on transitions")
      ->capture_default_str();
  synth->add_option("--mortality", o.synth.mortality, "Mean per-step death hazard")->capture_default_str();
  synth->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  synth->add_option("-o,--out", o.out, "Output directory")->required();

  auto* build = app.add_subcommand("build-timelines", "Filter events and build tokenized timelines");
  build->add_option("-i,--input", o.input, "Directory holding events.jsonl, demographics.jsonl, ontology.tsv");
  build->add_option("--events", o.events, "Events file (JSON Lines)");
  build->add_option("--demographics", o.demographics, "Demographics file (JSON Lines)");
  build->add_option("--ontology", o.ontology, "Ontology file (TSV)");
  build->add_option("--bucket-days", o.build.bucket_days, "Bucket width in days")->capture_default_str();
  build->add_option("--max-concepts", o.build.max_concepts, "Concepts per fragment")->capture_default_str();
  build->add_option("--min-concepts", o.build.min_concepts, "Minimum concepts per fragment")->capture_default_str();
  build->add_option("--min-global-count", o.build.min_global_count, "Minimum corpus-wide concept count")
      ->capture_default_str();
  build->add_option("--min-patient-count", o.build.min_patient_count, "Minimum per-patient concept count")
      ->capture_default_str();
  build->add_option("--seed", o.seed, "Random seed (recorded only)")->capture_default_str();
  build->add_option("-o,--out", o.out, "Output directory")->required();

  auto* split = app.add_subcommand("split", "Patient-level train/test split of timelines");
  split->add_option("-i,--input", o.input, "Directory holding timelines.jsonl");
  split->add_option("--timelines", o.timelines, "Timelines file");
  split->add_option("--test-fraction", o.test_fraction, "Fraction of patients held out")->capture_default_str();
  split->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  split->add_option("-o,--out", o.out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model on timelines");
  tr->add_option("-i,--input", o.input, "Directory holding train.jsonl and ontology.tsv");
  tr->add_option("--train", o.train_file, "Training timelines");
  tr->add_option("--ontology", o.ontology, "Ontology file (TSV)");
  tr->add_option("--layers", o.model.n_layers, "Transformer layers")->capture_default_str();
  tr->add_option("--heads", o.model.n_heads, "Attention heads")->capture_default_str();
  tr->add_option("--dim", o.model.embedding_dim, "Embedding dimension")->capture_default_str();
  tr->add_option("--context", o.model.context_len, "Context length in tokens")->capture_default_str();
  tr->add_option("--ff", o.model.feedforward_dim, "Feed-forward width")->capture_default_str();
  tr->add_option("--dropout", o.model.dropout, "Dropout rate")->capture_default_str();
  tr->add_option("--lr", o.tc.learning_rate, "Peak learning rate")->capture_default_str();
  tr->add_option("--weight-decay", o.tc.weight_decay, "AdamW weight decay")->capture_default_str();
  tr->add_option("--batch", o.tc.batch_size, "Sequences per step")->capture_default_str();
  tr->add_option("--epochs", o.tc.epochs, "Passes over the corpus")->capture_default_str();
  tr->add_option("--warmup", o.tc.warmup_ratio, "Warmup fraction of steps")->capture_default_str();
  tr->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  tr->add_option("--threads", o.threads, "Worker threads for gradient computation")->capture_default_str();
  tr->add_option("-o,--out", o.out, "Artifact directory")->required();

  auto* ev = app.add_subcommand("evaluate", "Windowed top-k precision/recall on held-out timelines");
  ev->add_option("-m,--model", o.model_dir, "Model artifact directory")->required();
  ev->add_option("-i,--input", o.input, "Directory holding test.jsonl, filtered_events.jsonl, demographics.jsonl");
  ev->add_option("--test", o.test_file, "Held-out timelines");
  ev->add_option("--events", o.events, "Filtered events used as full histories");
  ev->add_option("--demographics", o.demographics, "Demographics file");
  ev->add_option("--ranges", o.ranges, "Comma-separated windows in days, 'inf' for unbounded")->capture_default_str();
  ev->add_option("--top-ks", o.ks, "Comma-separated k values")->capture_default_str();
  ev->add_option("--breakdown", o.breakdown, "Concepts listed per best/worst table")->capture_default_str();
  ev->add_flag("--reference", o.reference, "Cross-check against brute-force evaluation");
  ev->add_option("--seed", o.seed, "Random seed (recorded only)")->capture_default_str();
  ev->add_option("-o,--out", o.out, "Output directory")->required();

  auto* gen = app.add_subcommand("generate", "Sample a continuation of a prompt");
  gen->add_option("-m,--model", o.model_dir, "Model artifact directory")->required();
  gen->add_option("--prompt", o.prompt, "Comma-separated token spellings")->required();
  gen->add_option("--ontology", o.ontology, "Ontology file for concept names");
  gen->add_option("--top-k", o.sampler.top_k, "Sample from the k most likely tokens")->capture_default_str();
  gen->add_option("--temperature", o.sampler.temperature, "Softmax temperature")->capture_default_str();
  gen->add_option("--steps", o.sampler.max_new_tokens, "Concepts to generate")->capture_default_str();
  gen->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  gen->add_option("-o,--out", o.out, "Optional output directory");
  o.sampler.concepts_only = true;

  auto* st = app.add_subcommand("stats", "Corpus statistics of built timelines");
  st->add_option("-i,--input", o.input, "Directory holding timelines.jsonl and demographics.jsonl");
  st->add_option("--timelines", o.timelines, "Timelines file");
  st->add_option("--demographics", o.demographics, "Demographics file");
  st->add_option("--ontology", o.ontology, "Ontology file for per-type counts");
  st->add_option("-o,--out", o.out, "Optional output directory");

  auto* sv = app.add_subcommand("serve", "Serve a model over HTTP");
  sv->add_option("-m,--model", o.model_dir, "Model artifact directory")->required();
  sv->add_option("--ontology", o.ontology, "Ontology file for concept names");
  sv->add_option("--bind", o.bind, "host:port (default: $CHRONICLE_BIND, then 127.0.0.1:8080)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return run_synth(*synth, o);
    if (*build) return run_build(*build, o);
    if (*split) return run_split(*split, o);
    if (*tr) return run_train(*tr, o);
    if (*ev) return run_evaluate(*ev, o);
    if (*gen) return run_generate(*gen, o);
    if (*st) return run_stats(*st, o);
    if (*sv) return run_serve(*sv, o);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::InvalidArgument ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
