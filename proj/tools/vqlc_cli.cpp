// vqlc command-line entry point.
//
// Exit codes: 0 success, 2 invalid input or flags, 3 runtime failure.
// Relative paths resolve against --workdir. Every command except --dump-config
// writes one run manifest.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "vqlc/eval/judge_http.hpp"
#include "vqlc/vqlc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw vqlc::RuntimeError("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

/// Hash of a file, or of every regular file under a directory (name-sorted).
std::string hash_path(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) {
      acc += fs::relative(f, p).generic_string() + ":" + sha256_hex(vqlc::detail::read_file_bytes(f)) + "\n";
    }
    return sha256_hex(acc);
  }
  return sha256_hex(vqlc::detail::read_file_bytes(p));
}

void write_text(const fs::path& p, const std::string& text) { vqlc::detail::write_file_bytes(p, text); }

struct Common {
  std::string workdir = ".";
  std::uint64_t seed = 0;
  std::string manifest;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : fs::path(workdir) / path;
  }
};

struct Manifest {
  explicit Manifest(std::string cmd) : command(std::move(cmd)) {}

  std::string command;
  json config = json::object();
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const Common& c) const {
    json in = json::array(), out = json::array();
    for (const auto& p : inputs) in.push_back({{"path", p.generic_string()}, {"sha256", hash_path(p)}});
    for (const auto& p : outputs) out.push_back({{"path", p.generic_string()}, {"sha256", hash_path(p)}});
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const json m = {{"command", command}, {"config", config}, {"seed", c.seed},
                    {"inputs", in},       {"outputs", out},   {"wall_seconds", wall}};
    const fs::path p = c.resolve(c.manifest.empty() ? command + ".manifest.json" : c.manifest);
    write_text(p, m.dump(2) + "\n");
  }
};

using AnyAssigner = std::variant<vqlc::VqlcModel, vqlc::CentroidAssigner>;

AnyAssigner load_assigner(const fs::path& p) {
  const vqlc::TensorBlob blob = vqlc::TensorBlob::load(p);
  const std::string kind = blob.meta().value("kind", std::string{});
  if (kind == "vqlc-model") return vqlc::VqlcModel::from_blob(blob);
  if (kind == "centroid-assigner") return vqlc::CentroidAssigner::from_blob(blob);
  throw vqlc::ValidationError(p.string() + ": unknown checkpoint kind '" + kind + "'");
}

void add_common(CLI::App* sub, Common& c, bool with_seed = true) {
  sub->add_option("--workdir", c.workdir, "Base directory for relative paths");
  if (with_seed) sub->add_option("--seed", c.seed, "Root seed for all random substreams");
  sub->add_option("--manifest", c.manifest, "Run manifest path (default <command>.manifest.json)");
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out = "data";
  std::size_t tokens = 5000;
  std::size_t dim = 32;
  std::size_t clusters = 10;
  vqlc::SynthOptions opt;
};

void cmd_synth(const SynthArgs& a, const Common& c) {
  Manifest m("synth");
  m.config = {{"tokens", a.tokens},
              {"dim", a.dim},
              {"clusters", a.clusters},
              {"sigma", a.opt.sigma},
              {"sentence_length", a.opt.sentence_length},
              {"vocab_per_cluster", a.opt.vocab_per_cluster}};
  const auto ds = vqlc::synthesize_dataset(a.tokens, a.dim, a.clusters, c.seed, a.opt);
  const fs::path out = c.resolve(a.out);
  vqlc::write_dataset(ds, out);
  m.outputs.push_back(out);
  m.write(c);
  std::cout << "wrote " << ds.num_tokens() << " tokens in " << ds.sentences.size() << " sentences to " << out.string()
            << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data = "data";
  std::string out = "model.bin";
  std::string metrics = "metrics.jsonl";
  std::string init = "kmeans";
  double fixed_alpha = 0.0;
  bool no_positional = false;
  vqlc::TrainConfig cfg;
};

void cmd_train(TrainArgs a, const Common& c) {
  a.cfg.seed = c.seed;
  a.cfg.filter.seed = c.seed;
  a.cfg.positional = !a.no_positional;
  a.cfg.init = a.init == "random" ? vqlc::CodebookInit::random : vqlc::CodebookInit::kmeans;
  if (a.fixed_alpha != 0.0) a.cfg.fixed_alpha = a.fixed_alpha;
  a.cfg.validate();
  Manifest m("train");
  m.config = a.cfg.to_json();
  const fs::path data = c.resolve(a.data);
  const auto ds = vqlc::load_dataset(data);
  m.inputs.push_back(data);
  std::string log;
  const auto res = vqlc::fit(ds, a.cfg, [&](const vqlc::EpochMetrics& e) {
    log += e.to_json().dump() + "\n";
    std::cerr << "epoch " << e.epoch << " rec " << e.rec_loss << " commit " << e.commit_loss << " ppl "
              << e.perplexity << " active " << e.active_codes << "\n";
  });
  const fs::path out = c.resolve(a.out), metrics = c.resolve(a.metrics);
  res.model.save(out);
  write_text(metrics, log);
  m.outputs = {out, metrics};
  m.write(c);
}

// ---------------------------------------------------------------------------
// concepts / explain

struct ConceptArgs {
  std::string model = "model.bin";
  std::string data = "data";
  std::string out = "concepts.jsonl";
  vqlc::FilterPolicy filter;
};

std::vector<vqlc::Concept> concepts_for(const AnyAssigner& a, const vqlc::ActivationDataset& ds,
                                        const vqlc::FilterPolicy& policy, std::uint64_t seed) {
  const auto pool = vqlc::filter_pool(ds, policy);
  return std::visit([&](const auto& as) { return vqlc::extract_concepts(as, ds, pool, seed); }, a);
}

void cmd_concepts(ConceptArgs a, const Common& c) {
  a.filter.seed = c.seed;
  Manifest m("concepts");
  m.config = {{"min_token_frequency", a.filter.min_token_frequency},
              {"max_occurrences_per_token", a.filter.max_occurrences_per_token}};
  const fs::path model = c.resolve(a.model), data = c.resolve(a.data), out = c.resolve(a.out);
  const auto assigner = load_assigner(model);
  const auto ds = vqlc::load_dataset(data);
  const auto concepts = concepts_for(assigner, ds, a.filter, c.seed);
  write_text(out, vqlc::concepts_to_jsonl(concepts));
  m.inputs = {model, data};
  m.outputs = {out};
  m.write(c);
  std::cout << concepts.size() << " concepts written to " << out.string() << "\n";
}

struct ExplainArgs {
  ConceptArgs base;
  std::vector<std::int64_t> sentences;
  std::vector<std::int64_t> predictions;
  std::string family = "encoder-based";
  std::string mode = "report";
};

void cmd_explain(ExplainArgs a, const Common& c) {
  a.base.filter.seed = c.seed;
  vqlc::detail::require(!a.sentences.empty(), "explain: at least one --sentence is required");
  vqlc::detail::require(a.predictions.empty() || a.predictions.size() == a.sentences.size(),
                        "explain: --prediction must be given once per --sentence or not at all");
  vqlc::detail::require(a.mode == "report" || a.mode == "judge", "explain: --mode must be report or judge");
  const auto family = vqlc::parse_model_family(a.family);
  const auto mode = a.mode == "report" ? vqlc::RenderMode::report : vqlc::RenderMode::judge;
  Manifest m("explain");
  m.config = {{"family", vqlc::to_string(family)}, {"mode", a.mode}, {"sentences", a.sentences}};
  const fs::path model = c.resolve(a.base.model), data = c.resolve(a.base.data), out = c.resolve(a.base.out);
  const auto assigner = load_assigner(model);
  const auto ds = vqlc::load_dataset(data);
  const auto concepts = concepts_for(assigner, ds, a.base.filter, c.seed);
  json arr = json::array();
  for (std::size_t i = 0; i < a.sentences.size(); ++i) {
    std::optional<std::int64_t> pred;
    if (!a.predictions.empty()) pred = a.predictions[i];
    const auto e = std::visit(
        [&](const auto& as) { return vqlc::explain(as, ds, concepts, a.sentences[i], pred, family, mode); }, assigner);
    arr.push_back(e.to_json());
  }
  write_text(out, arr.dump(2) + "\n");
  m.inputs = {model, data};
  m.outputs = {out};
  m.write(c);
}

// ---------------------------------------------------------------------------
// baseline

struct BaselineArgs {
  std::string method = "kmeans";
  std::string data = "data";
  std::string out = "baseline.bin";
  std::string dendrogram = "dendrogram.jsonl";
  std::size_t k = 400;
  std::size_t iters = 50;
  std::size_t restarts = 10;
  std::size_t memory_limit = vqlc::kDefaultMemoryGuard;
  vqlc::FilterPolicy filter;
};

void cmd_baseline(BaselineArgs a, const Common& c) {
  a.filter.seed = c.seed;
  Manifest m("baseline");
  m.config = {{"method", a.method},
              {"k", a.k},
              {"iters", a.iters},
              {"restarts", a.restarts},
              {"memory_limit", a.memory_limit},
              {"min_token_frequency", a.filter.min_token_frequency},
              {"max_occurrences_per_token", a.filter.max_occurrences_per_token}};
  const fs::path data = c.resolve(a.data), out = c.resolve(a.out);
  const auto ds = vqlc::load_dataset(data);
  const auto pool = vqlc::gather_rows(ds.representations, vqlc::filter_pool(ds, a.filter));
  m.inputs = {data};
  if (a.method == "kmeans") {
    vqlc::kmeans_discover(pool, a.k, a.iters, c.seed, a.restarts).save(out);
    m.outputs = {out};
  } else if (a.method == "hierarchical") {
    const auto res = vqlc::hierarchical_discover(pool, a.k, a.memory_limit);
    res.assigner.save(out);
    const fs::path dendro = c.resolve(a.dendrogram);
    write_text(dendro, vqlc::dendrogram_to_jsonl(res.merges));
    m.outputs = {out, dendro};
  } else {
    throw vqlc::ValidationError("baseline: --method must be kmeans or hierarchical");
  }
  m.write(c);
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string kind;
  std::string data = "data";
  std::string model = "model.bin";
  std::string table = "ranks.csv";
  std::string out = "eval.json";
  std::string family = "encoder-based";
  vqlc::ProbeConfig probe;
};

void cmd_eval(const EvalArgs& a, const Common& c) {
  Manifest m("eval-" + a.kind);
  const fs::path out = c.resolve(a.out);
  json report;
  if (a.kind == "faithfulness") {
    const auto family = vqlc::parse_model_family(a.family);
    m.config = {{"family", vqlc::to_string(family)},
                {"probe", {{"epochs", a.probe.epochs}, {"lr", a.probe.lr}, {"l2", a.probe.l2}}}};
    const fs::path data = c.resolve(a.data), model = c.resolve(a.model);
    const auto ds = vqlc::load_dataset(data);
    const auto assigner = load_assigner(model);
    const auto s = vqlc::salient_representations(ds, family);
    const auto probe = vqlc::train_probe(s.reps, s.labels, a.probe);
    const auto r = std::visit([&](const auto& as) { return vqlc::faithfulness(probe, ds, as, family); }, assigner);
    report = r.to_json();
    report["method"] = std::visit([](const auto& as) { return as.method(); }, assigner);
    m.inputs = {data, model};
  } else if (a.kind == "rank" || a.kind == "agreement") {
    const fs::path table = c.resolve(a.table);
    const auto t = vqlc::RankTable::load_csv(table.string());
    m.inputs = {table};
    if (a.kind == "rank") {
      const auto ranks = vqlc::average_rank(t);
      report = {{"average_rank", vqlc::average_rank_json(ranks)}};
      std::string csv = "method,avg_rank,n_valid\n";
      for (const auto& r : ranks) {
        csv += r.method + "," + (r.avg_rank ? json(*r.avg_rank).dump() : std::string()) + "," +
               std::to_string(r.n_valid) + "\n";
      }
      fs::path csv_path = out;
      csv_path.replace_extension(".csv");
      write_text(csv_path, csv);
      m.outputs.push_back(csv_path);
    } else {
      report = {{"krippendorff_alpha", vqlc::krippendorff_alpha(t)},
                {"level", "ordinal"},
                {"evaluators", t.evaluators.size()},
                {"samples", t.samples.size()}};
    }
  } else {
    throw vqlc::ValidationError("eval: kind must be faithfulness, rank or agreement");
  }
  write_text(out, report.dump(2) + "\n");
  m.outputs.insert(m.outputs.begin(), out);
  m.write(c);
  std::cout << report.dump() << "\n";
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  vqlc::BenchConfig cfg;
  std::string out = "bench.json";
  std::string csv = "bench.csv";
  bool no_rss = false;
  bool no_timing = false;
};

void cmd_bench(BenchArgs a, const Common& c) {
  a.cfg.seed = c.seed;
  a.cfg.poll_rss = !a.no_rss;
  a.cfg.timing = !a.no_timing;
  Manifest m("bench");
  m.config = a.cfg.to_json();
  const auto r = vqlc::bench_scalability(a.cfg);
  const fs::path out = c.resolve(a.out), csv = c.resolve(a.csv);
  write_text(out, r.to_json().dump(2) + "\n");
  write_text(csv, r.to_csv());
  m.outputs = {out, csv};
  m.write(c);
  for (const auto& p : r.points) {
    std::cout << p.method << " n=" << p.n << " peak=" << p.peak_bytes << " completed=" << p.completed << "\n";
  }
}

// ---------------------------------------------------------------------------
// judge

struct JudgeInputsArgs {
  std::string data = "data";
  std::vector<std::string> methods;  // name=checkpoint
  std::vector<std::int64_t> sentences;
  std::vector<std::int64_t> predictions;
  std::vector<std::string> label_names;
  std::string family = "encoder-based";
  std::string task = "agnews";
  std::string out = "judge_inputs.jsonl";
  vqlc::FilterPolicy filter;
};

void cmd_judge_inputs(JudgeInputsArgs a, const Common& c) {
  a.filter.seed = c.seed;
  vqlc::detail::require(a.methods.size() == vqlc::kJudgeMethods, "judge-inputs: exactly 3 --method name=path required");
  vqlc::detail::require(a.predictions.empty() || a.predictions.size() == a.sentences.size(),
                        "judge-inputs: --prediction must be given once per --sentence or not at all");
  const auto family = vqlc::parse_model_family(a.family);
  vqlc::parse_judge_task(a.task);
  Manifest m("judge-inputs");
  const fs::path data = c.resolve(a.data), out = c.resolve(a.out);
  const auto ds = vqlc::load_dataset(data);
  m.inputs = {data};
  struct Loaded {
    std::string name;
    AnyAssigner assigner;
    std::vector<vqlc::Concept> concepts;
  };
  std::vector<Loaded> loaded;
  for (const auto& spec : a.methods) {
    const auto eq = spec.find('=');
    vqlc::detail::require(eq != std::string::npos && eq > 0, "judge-inputs: --method expects name=path, got " + spec);
    const fs::path p = c.resolve(spec.substr(eq + 1));
    auto as = load_assigner(p);
    auto concepts = concepts_for(as, ds, a.filter, c.seed);
    loaded.push_back({spec.substr(0, eq), std::move(as), std::move(concepts)});
    m.inputs.push_back(p);
  }
  m.config = {{"family", vqlc::to_string(family)}, {"task", a.task}, {"methods", a.methods}};
  std::string lines;
  for (std::size_t i = 0; i < a.sentences.size(); ++i) {
    const auto& rec = ds.sentences[ds.sentence_index(a.sentences[i])];
    const std::int64_t pred = a.predictions.empty() ? rec.label.value_or(0) : a.predictions[i];
    std::string meaning = std::to_string(pred);
    if (pred >= 0 && static_cast<std::size_t>(pred) < a.label_names.size()) meaning = a.label_names[pred];
    json methods = json::array();
    for (const auto& l : loaded) {
      const auto e = std::visit(
          [&](const auto& as) {
            return vqlc::explain(as, ds, l.concepts, a.sentences[i], pred, family, vqlc::RenderMode::judge);
          },
          l.assigner);
      methods.push_back({{"name", l.name}, {"content", e.rendering.to_text()}});
    }
    lines += json{{"sample_id", std::to_string(rec.id)},
                  {"sentence", rec.text},
                  {"predicted_label", std::to_string(pred)},
                  {"predicted_label_meaning", meaning},
                  {"task", a.task},
                  {"methods", methods}}
                 .dump() +
             "\n";
  }
  write_text(out, lines);
  m.outputs = {out};
  m.write(c);
}

struct JudgeArgs {
  std::string inputs = "judge_inputs.jsonl";
  std::string evaluator = "judge";
  std::string replay;
  std::string log = "judge_log.jsonl";
  std::string prompts = "judge_prompts.jsonl";
  std::string table = "ranks.csv";
  bool prompts_only = false;
};

std::vector<vqlc::JudgeInput> read_judge_inputs(const fs::path& p) {
  std::vector<vqlc::JudgeInput> out;
  std::istringstream in(vqlc::detail::read_file_bytes(p));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      vqlc::JudgeInput ji;
      ji.sample_id = j.at("sample_id").get<std::string>();
      ji.sentence = j.at("sentence").get<std::string>();
      ji.predicted_label = j.at("predicted_label").get<std::string>();
      ji.predicted_label_meaning = j.value("predicted_label_meaning", ji.predicted_label);
      ji.task = vqlc::parse_judge_task(j.at("task").get<std::string>());
      for (const auto& mth : j.at("methods")) {
        ji.methods.push_back({mth.at("name").get<std::string>(), mth.at("content").get<std::string>()});
      }
      out.push_back(std::move(ji));
    } catch (const json::exception& e) {
      throw vqlc::ValidationError(p.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void cmd_judge(const JudgeArgs& a, const Common& c) {
  Manifest m("judge");
  m.config = {{"evaluator", a.evaluator}, {"replay", !a.replay.empty()}, {"prompts_only", a.prompts_only}};
  const fs::path inputs = c.resolve(a.inputs);
  m.inputs = {inputs};
  std::vector<vqlc::JudgeRequest> reqs;
  std::string prompt_lines;
  for (const auto& ji : read_judge_inputs(inputs)) {
    reqs.push_back(vqlc::judge_request(ji, c.seed));
    prompt_lines += json{{"sample_id", reqs.back().sample_id}, {"order", reqs.back().order},
                         {"prompt", reqs.back().prompt}}
                        .dump() +
                    "\n";
  }
  const fs::path prompts = c.resolve(a.prompts);
  write_text(prompts, prompt_lines);
  m.outputs = {prompts};
  if (!a.prompts_only) {
    const fs::path table_path = c.resolve(a.table);
    vqlc::RankTable table;
    if (fs::exists(table_path)) table = vqlc::RankTable::load_csv(table_path.string());
    if (!a.replay.empty()) {
      const fs::path fixture = c.resolve(a.replay);
      vqlc::ReplayJudgeClient client(fixture.string());
      vqlc::run_judge(client, a.evaluator, reqs, table);
      m.inputs.push_back(fixture);
    } else {
      const fs::path log = c.resolve(a.log);
      vqlc::HttpJudgeClient client(vqlc::JudgeEndpoint::from_env(), log.string());
      vqlc::run_judge(client, a.evaluator, reqs, table);
      m.outputs.push_back(log);
    }
    write_text(table_path, table.to_csv());
    m.outputs.push_back(table_path);
  }
  m.write(c);
}

bool looks_numeric(const std::string& v) {
  if (v == "true" || v == "false") return true;
  if (v.empty() || v.find_first_not_of("0123456789.-+eE") != std::string::npos) return false;
  char* end = nullptr;
  std::strtod(v.c_str(), &end);
  return end && *end == '\0';
}

/// TOML section for one subcommand with every option's effective value;
/// readable back through --config.
std::string dump_subcommand(const CLI::App* sub) {
  std::string out = "[" + sub->get_name() + "]\n";
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || opt->get_positional()) continue;
    std::vector<std::string> values;
    if (opt->count() > 0) {
      values = opt->results();
    } else {
      std::string d = opt->get_default_str();
      if (opt->get_expected_min() == 0 && d.empty()) d = "false";
      if (d.size() >= 2 && (d.front() == '[' || d.front() == '{') && (d.back() == ']' || d.back() == '}')) {
        std::stringstream ss(d.substr(1, d.size() - 2));
        for (std::string item; std::getline(ss, item, ',');) values.push_back(item);
      } else {
        values.push_back(d);
      }
    }
    const bool is_list = opt->get_expected_max() > 1;
    if (is_list && values.empty()) continue;
    const auto render = [](const std::string& v) { return looks_numeric(v) ? v : json(v).dump(); };
    std::string rendered;
    if (is_list) {
      rendered = "[";
      for (std::size_t i = 0; i < values.size(); ++i) rendered += (i ? ", " : "") + render(values[i]);
      rendered += "]";
    } else {
      rendered = render(values.empty() ? std::string() : values.back());
    }
    out += name + " = " + rendered + "\n";
  }
  return out;
}

void add_filter_flags(CLI::App* sub, vqlc::FilterPolicy& f) {
  sub->add_option("--min-freq", f.min_token_frequency, "Drop token types seen fewer times");
  sub->add_option("--max-occurrences", f.max_occurrences_per_token, "Per-type occurrence cap");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VQLC latent concept discovery and evaluation"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read options from a TOML/INI config file");
  bool dump_config = false;
  app.add_flag("--dump-config", dump_config, "Print the resolved subcommand options as TOML and exit")
      ->configurable(false);

  Common common;
  const auto validate_choice = [](std::vector<std::string> v) { return CLI::IsMember(std::move(v)); };

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Write a synthetic clustered dataset");
  add_common(s_synth, common);
  s_synth->add_option("--out", synth.out, "Output dataset directory");
  s_synth->add_option("--tokens", synth.tokens, "Number of token occurrences");
  s_synth->add_option("--dim", synth.dim, "Representation dimension");
  s_synth->add_option("--clusters", synth.clusters, "Number of planted clusters");
  s_synth->add_option("--sigma", synth.opt.sigma, "Per-coordinate noise");
  s_synth->add_option("--sentence-length", synth.opt.sentence_length, "Tokens per sentence");
  s_synth->add_option("--vocab", synth.opt.vocab_per_cluster, "Token types per cluster");

  TrainArgs train;
  auto* s_train = app.add_subcommand("train", "Train a VQLC model");
  add_common(s_train, common);
  s_train->add_option("--data", train.data, "Dataset directory");
  s_train->add_option("--out", train.out, "Checkpoint path");
  s_train->add_option("--metrics", train.metrics, "Per-epoch metrics JSONL");
  s_train->add_option("--beta", train.cfg.beta, "Commitment weight");
  s_train->add_option("--lambda", train.cfg.decay, "EMA decay");
  s_train->add_option("--codebook-size", train.cfg.codebook_size, "Number of concept vectors K");
  s_train->add_option("--top-k", train.cfg.top_k, "Candidates sampled per token during training");
  s_train->add_option("--temperature", train.cfg.temperature, "Sampling temperature");
  s_train->add_option("--dprime", train.cfg.model_dim, "Decoder width (0: d/2)");
  s_train->add_option("--heads", train.cfg.heads, "Decoder attention heads (0: 8 if d' >= 64 else 2)");
  s_train->add_option("--layers", train.cfg.layers, "Decoder blocks");
  s_train->add_flag("--no-positional", train.no_positional, "Disable sinusoidal positions in the decoder");
  s_train->add_option("--lr", train.cfg.lr, "Adam learning rate");
  s_train->add_option("--epochs", train.cfg.epochs, "Training epochs");
  s_train->add_option("--batch", train.cfg.batch_sentences, "Sentences per batch");
  s_train->add_option("--init", train.init, "Codebook initialization")->check(validate_choice({"kmeans", "random"}));
  s_train->add_option("--kmeans-iters", train.cfg.kmeans_iters, "Lloyd iterations for initialization");
  s_train->add_option("--kmeans-restarts", train.cfg.kmeans_restarts, "k-means++ restarts for initialization");
  s_train->add_option("--val-fraction", train.cfg.val_fraction, "Held-out sentence fraction for usage metrics");
  s_train->add_option("--fixed-alpha", train.fixed_alpha, "Pin the residual mix (0: learned)");
  add_filter_flags(s_train, train.cfg.filter);

  ConceptArgs concepts;
  auto* s_concepts = app.add_subcommand("concepts", "Export concepts of a model or baseline");
  add_common(s_concepts, common);
  s_concepts->add_option("--model", concepts.model, "VQLC or baseline checkpoint");
  s_concepts->add_option("--data", concepts.data, "Dataset directory");
  s_concepts->add_option("--out", concepts.out, "Concept JSONL");
  add_filter_flags(s_concepts, concepts.filter);

  ExplainArgs explain;
  explain.base.out = "explanations.json";
  auto* s_explain = app.add_subcommand("explain", "Explain sentences by their salient concept");
  add_common(s_explain, common);
  s_explain->add_option("--model", explain.base.model, "VQLC or baseline checkpoint");
  s_explain->add_option("--data", explain.base.data, "Dataset directory");
  s_explain->add_option("--out", explain.base.out, "Explanation JSON");
  s_explain->add_option("--sentence", explain.sentences, "Sentence id (repeatable)");
  s_explain->add_option("--prediction", explain.predictions, "Predicted label per --sentence");
  s_explain->add_option("--family", explain.family, "Model family")
      ->check(validate_choice({"encoder-based", "decoder-only", "encoder", "decoder"}));
  s_explain->add_option("--mode", explain.mode, "Rendering mode")->check(validate_choice({"report", "judge"}));
  add_filter_flags(s_explain, explain.base.filter);

  BaselineArgs baseline;
  auto* s_baseline = app.add_subcommand("baseline", "Run a clustering baseline");
  add_common(s_baseline, common);
  s_baseline->add_option("--method", baseline.method, "Baseline")->check(validate_choice({"kmeans", "hierarchical"}));
  s_baseline->add_option("--data", baseline.data, "Dataset directory");
  s_baseline->add_option("--out", baseline.out, "Assigner checkpoint");
  s_baseline->add_option("--dendrogram", baseline.dendrogram, "Merge list JSONL (hierarchical)");
  s_baseline->add_option("--k", baseline.k, "Number of concepts");
  s_baseline->add_option("--iters", baseline.iters, "Lloyd iterations (kmeans)");
  s_baseline->add_option("--restarts", baseline.restarts, "k-means++ restarts (kmeans)");
  s_baseline->add_option("--memory-limit", baseline.memory_limit, "Distance-matrix guard, e.g. 2GiB")
      ->transform(CLI::AsSizeValue(false));
  add_filter_flags(s_baseline, baseline.filter);

  EvalArgs eval;
  auto* s_eval = app.add_subcommand("eval", "Faithfulness, average rank or judge agreement");
  add_common(s_eval, common, false);
  s_eval->add_option("kind", eval.kind, "faithfulness | rank | agreement")
      ->required()
      ->check(validate_choice({"faithfulness", "rank", "agreement"}));
  s_eval->add_option("--data", eval.data, "Dataset directory (faithfulness)");
  s_eval->add_option("--model", eval.model, "Checkpoint (faithfulness)");
  s_eval->add_option("--family", eval.family, "Model family (faithfulness)")
      ->check(validate_choice({"encoder-based", "decoder-only", "encoder", "decoder"}));
  s_eval->add_option("--probe-epochs", eval.probe.epochs, "Probe gradient steps");
  s_eval->add_option("--probe-lr", eval.probe.lr, "Probe learning rate");
  s_eval->add_option("--probe-l2", eval.probe.l2, "Probe L2 penalty");
  s_eval->add_option("--table", eval.table, "Rank table CSV (rank, agreement)");
  s_eval->add_option("--out", eval.out, "Report JSON");

  BenchArgs bench;
  auto* s_bench = app.add_subcommand("bench", "Peak-memory scalability benchmark");
  add_common(s_bench, common);
  s_bench->add_option("--sizes", bench.cfg.sizes, "Token counts, ascending");
  s_bench->add_option("--dim", bench.cfg.dim, "Representation dimension");
  s_bench->add_option("--methods", bench.cfg.methods, "Methods to run")
      ->check(validate_choice({"hierarchical", "vqlc", "kmeans"}));
  s_bench->add_option("--memory-limit", bench.cfg.memory_limit, "Memory limit, e.g. 64MiB")
      ->transform(CLI::AsSizeValue(false));
  s_bench->add_option("--clusters", bench.cfg.clusters, "Planted clusters and hierarchical K");
  s_bench->add_option("--codebook-size", bench.cfg.codebook_size, "K for vqlc and kmeans");
  s_bench->add_option("--kmeans-iters", bench.cfg.kmeans_iters, "Lloyd iterations");
  s_bench->add_option("--epochs", bench.cfg.vqlc_epochs, "VQLC training epochs");
  s_bench->add_flag("--no-rss", bench.no_rss, "Allocation accounting only (byte-stable peaks)");
  s_bench->add_flag("--no-timing", bench.no_timing, "Omit wall time (byte-stable report)");
  s_bench->add_option("--out", bench.out, "Report JSON");
  s_bench->add_option("--csv", bench.csv, "Report CSV");

  JudgeInputsArgs jin;
  auto* s_jin = app.add_subcommand("judge-inputs", "Render three methods' explanations as judge inputs");
  add_common(s_jin, common);
  s_jin->add_option("--data", jin.data, "Dataset directory");
  s_jin->add_option("--method", jin.methods, "name=checkpoint (exactly 3)");
  s_jin->add_option("--sentence", jin.sentences, "Sentence id (repeatable)")->required();
  s_jin->add_option("--prediction", jin.predictions, "Predicted label per --sentence");
  s_jin->add_option("--label-names", jin.label_names, "Class names indexed by label");
  s_jin->add_option("--family", jin.family, "Model family")
      ->check(validate_choice({"encoder-based", "decoder-only", "encoder", "decoder"}));
  s_jin->add_option("--task", jin.task, "Task block")
      ->check(validate_choice({"jigsaw-toxic", "jigsaw-nontoxic", "movie", "agnews"}));
  s_jin->add_option("--out", jin.out, "Judge input JSONL");
  add_filter_flags(s_jin, jin.filter);

  JudgeArgs judge;
  auto* s_judge = app.add_subcommand("judge", "Rank method explanations with an LLM judge");
  add_common(s_judge, common);
  s_judge->add_option("--inputs", judge.inputs, "Judge input JSONL");
  s_judge->add_option("--evaluator", judge.evaluator, "Evaluator name recorded in the rank table");
  s_judge->add_option("--replay", judge.replay, "Recorded exchange fixture; no network when set");
  s_judge->add_option("--log", judge.log, "Exchange log for live calls");
  s_judge->add_option("--prompts", judge.prompts, "Instantiated prompts JSONL");
  s_judge->add_option("--table", judge.table, "Rank table CSV (merged if present)");
  s_judge->add_flag("--prompts-only", judge.prompts_only, "Write prompts without calling the judge");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }
  if (dump_config) {
    for (const CLI::App* sub : app.get_subcommands()) std::cout << dump_subcommand(sub);
    return 0;
  }

  try {
    if (s_synth->parsed()) cmd_synth(synth, common);
    if (s_train->parsed()) cmd_train(train, common);
    if (s_concepts->parsed()) cmd_concepts(concepts, common);
    if (s_explain->parsed()) cmd_explain(explain, common);
    if (s_baseline->parsed()) cmd_baseline(baseline, common);
    if (s_eval->parsed()) cmd_eval(eval, common);
    if (s_bench->parsed()) cmd_bench(bench, common);
    if (s_jin->parsed()) cmd_judge_inputs(jin, common);
    if (s_judge->parsed()) cmd_judge(judge, common);
  } catch (const vqlc::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
