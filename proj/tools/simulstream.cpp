// simulstream: scheduling engine and evaluation harness for one-to-many
// simultaneous speech translation over packetized feature streams.
//
// Subcommands: gen (synthetic corpus), train (count model), eval (quality +
// latency report), serve (host an agent over the wire protocol), report
// (merge report JSONs into a BLEU pivot table).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "simulstream/agent.hpp"
#include "simulstream/error.hpp"
#include "simulstream/log.hpp"
#include "simulstream/manifest.hpp"
#include "simulstream/prefix_model.hpp"
#include "simulstream/protocol.hpp"
#include "simulstream/report.hpp"
#include "simulstream/synthetic.hpp"

namespace ss = simulstream;

namespace {

// "es=4,fr=6" -> {es:4, fr:6}; a bare "6" -> {"": 6} (all languages).
std::map<std::string, int> parse_int_map(const std::string& text,
                                         const std::string& flag) {
  std::map<std::string, int> out;
  if (text.empty()) return out;
  size_t start = 0;
  while (start <= text.size()) {
    size_t comma = text.find(',', start);
    const std::string item = text.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    const size_t eq = item.find('=');
    try {
      if (eq == std::string::npos) {
        if (!out.empty()) throw std::invalid_argument("mixed");
        out[""] = std::stoi(item);
      } else {
        out[item.substr(0, eq)] = std::stoi(item.substr(eq + 1));
      }
    } catch (const std::exception&) {
      throw ss::ConfigError("cannot parse " + flag + " value '" + text +
                            "' (expected N or lang=N,lang=N)");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<std::string> parse_lang_list(const std::string& text) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= text.size() && !text.empty()) {
    size_t comma = text.find(',', start);
    const std::string item = text.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::map<std::string, int> expand_k(const std::map<std::string, int>& k_map,
                                    const std::vector<std::string>& langs) {
  std::map<std::string, int> out = k_map;
  if (out.count("")) {
    const int k = out.at("");
    out.erase("");
    for (const auto& lang : langs) out.emplace(lang, k);
  }
  for (const auto& lang : langs) {
    if (!out.count(lang))
      throw ss::ConfigError("no k configured for language " + lang);
  }
  return out;
}

std::vector<ss::Utterance> materialize(const ss::Manifest& manifest,
                                       const std::vector<std::string>& langs,
                                       int q) {
  std::vector<ss::Utterance> out;
  out.reserve(manifest.records.size());
  for (const auto& rec : manifest.records)
    out.push_back(ss::load_utterance(manifest, rec, langs, q));
  return out;
}

int cmd_gen(const ss::SyntheticConfig& cfg, const std::string& out_dir) {
  ss::generate_synthetic(cfg, out_dir);
  std::printf("wrote %s/manifest_{train,dev,test}.tsv (%d/%d/%d sentences)\n",
              out_dir.c_str(), cfg.train_count, cfg.dev_count, cfg.test_count);
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& variant,
              const std::string& k_text, const std::string& langs_text,
              double epsilon, int q, const std::string& out_path) {
  const ss::Manifest manifest = ss::load_manifest(manifest_path);
  std::vector<std::string> langs = langs_text.empty()
                                       ? manifest.languages
                                       : parse_lang_list(langs_text);
  std::sort(langs.begin(), langs.end());
  const auto k_map = expand_k(parse_int_map(k_text, "--k"), langs);

  ss::Conditioning cond;
  if (variant == "separate")
    cond = ss::Conditioning::kSeparate;
  else if (variant == "unified")
    cond = ss::Conditioning::kUnified;
  else
    throw ss::ConfigError("--variant must be separate or unified");

  const auto corpus = materialize(manifest, langs, q);
  const ss::ModelSet models =
      ss::train_count_model(corpus, cond, k_map, epsilon);

  // Training-NLL log: uniform initialization vs the trained tables.
  const double v = static_cast<double>(models.vocabulary->size());
  double uniform_nll = 0.0, trained_nll = 0.0;
  std::int64_t tokens = 0;
  for (const auto& utt : corpus) {
    for (const auto& [lang, k] : k_map) {
      const auto& y = utt.reference(lang);
      tokens += static_cast<std::int64_t>(y.size());
      uniform_nll += y.size() * std::log(v);
      trained_nll +=
          cond == ss::Conditioning::kUnified
              ? ss::unified_nll(models.model_for(lang), utt.stream, y, k, lang)
              : ss::prefix_nll(models.model_for(lang), utt.stream, y, k, lang);
    }
  }
  ss::save_model(models, std::filesystem::path(out_path));
  std::printf("trained %s model on %zu utterances, %lld target tokens\n",
              variant.c_str(), corpus.size(),
              static_cast<long long>(tokens));
  std::printf("training NLL: uniform %.6f -> trained %.6f (per token %.6f -> %.6f)\n",
              uniform_nll, trained_nll, uniform_nll / tokens,
              trained_nll / tokens);
  std::printf("model written to %s\n", out_path.c_str());
  return 0;
}

int cmd_eval(ss::RunConfig cfg, const std::string& k_text,
             const std::string& langs_text, const std::string& mode_text) {
  cfg.languages = parse_lang_list(langs_text);
  if (mode_text == "sync")
    cfg.mode = ss::ScheduleMode::kSync;
  else if (mode_text == "async")
    cfg.mode = ss::ScheduleMode::kAsync;
  else
    throw ss::ConfigError("--mode must be sync or async");
  cfg.k_per_lang = parse_int_map(k_text, "--k");
  if (cfg.k_per_lang.empty()) throw ss::ConfigError("--k is required");

  const ss::Report report = ss::run_eval(cfg);
  std::printf("%-8s %8s %8s %8s %8s %4s\n", "lang", "bleu", "AL", "AP", "DAL",
              "k");
  for (const auto& [lang, s] : report.languages) {
    std::printf("%-8s %8.2f %8.2f %8.4f %8.2f %4d\n", lang.c_str(), s.bleu,
                s.al, s.ap, s.dal, s.k);
  }
  std::printf("%d utterances, %d failed\n", report.utterance_count,
              report.failed_count);
  if (report.failed_count == report.utterance_count &&
      report.utterance_count > 0)
    return 3;
  return 0;
}

int cmd_serve(const std::string& agent_spec, const std::string& endpoint_spec,
              const std::string& manifest_path, int q, int timeout_ms) {
  const ss::AgentSpec spec = ss::AgentSpec::parse(agent_spec);
  if (spec.kind == ss::AgentSpec::Kind::kRemote)
    throw ss::ConfigError("serve needs a local agent (oracle|uniform:SEED|model:PATH)");

  std::shared_ptr<ss::Manifest> manifest;
  auto by_id = std::make_shared<std::map<std::string, size_t>>();
  if (spec.kind == ss::AgentSpec::Kind::kOracle ||
      spec.kind == ss::AgentSpec::Kind::kUniform) {
    if (manifest_path.empty())
      throw ss::ConfigError("oracle/uniform serving needs --manifest for references");
    manifest = std::make_shared<ss::Manifest>(ss::load_manifest(manifest_path));
    for (size_t i = 0; i < manifest->records.size(); ++i)
      (*by_id)[manifest->records[i].id] = i;
  }
  std::shared_ptr<const ss::ModelSet> models;
  if (spec.kind == ss::AgentSpec::Kind::kModel)
    models = std::make_shared<ss::ModelSet>(ss::load_model(spec.model_path));

  ss::AgentFactory factory =
      [spec, manifest, by_id, models](const ss::SessionInfo& info)
      -> std::unique_ptr<ss::Agent> {
    if (spec.kind == ss::AgentSpec::Kind::kModel)
      return ss::model_agent(models);
    auto it = by_id->find(info.utterance_id);
    if (it == by_id->end())
      throw ss::ProtocolError("unknown utterance id " + info.utterance_id);
    const ss::ManifestRecord& rec = manifest->records[it->second];
    std::map<std::string, std::vector<std::string>> refs;
    for (size_t c = 0; c < manifest->languages.size(); ++c)
      refs[manifest->languages[c]] = ss::split_tokens(rec.refs[c]);
    if (spec.kind == ss::AgentSpec::Kind::kOracle)
      return std::make_unique<ss::OracleAgent>(std::move(refs));
    return std::make_unique<ss::UniformAgent>(std::move(refs),
                                              info.utterance_id, spec.seed);
  };

  const ss::Endpoint ep = ss::parse_endpoint(endpoint_spec);
  if (ep.kind == ss::Endpoint::Kind::kStdio) {
    ss::serve_agent_fd(factory, 0, 1, timeout_ms);
    return 0;
  }
  ss::AgentServer server(factory, ep.host, ep.port, timeout_ms);
  server.start();
  std::fprintf(stderr, "serving %s on tcp://%s:%d (ctrl-c to stop)\n",
               agent_spec.c_str(), ep.host.c_str(), server.port());
  server.wait();
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs,
               const std::string& out_path) {
  if (inputs.empty()) throw ss::ConfigError("report needs input JSON files");
  std::vector<nlohmann::json> reports;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw ss::DataError("cannot open report: " + path);
    try {
      reports.push_back(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ss::DataError("cannot parse report " + path + ": " + e.what());
    }
  }
  const std::string tsv = ss::report_pivot_tsv(reports);
  if (out_path.empty()) {
    std::fputs(tsv.c_str(), stdout);
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw ss::DataError("cannot write " + out_path);
    out << tsv;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wait-k scheduling and evaluation for one-to-many simultaneous speech translation"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic aligned corpus");
  std::string gen_out = "corpus";
  std::string gen_shift = "es=1,fr=3";
  std::string gen_dict_seed;
  ss::SyntheticConfig gen_cfg;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--shift", gen_shift, "per-language shift, e.g. es=1,fr=3");
  gen->add_option("--dict-seed", gen_dict_seed, "per-language dictionary seed");
  gen->add_option("--vocab-size", gen_cfg.vocab_size, "source vocabulary size");
  gen->add_option("--train-count", gen_cfg.train_count, "train sentences");
  gen->add_option("--dev-count", gen_cfg.dev_count, "dev sentences");
  gen->add_option("--test-count", gen_cfg.test_count, "test sentences");
  gen->add_option("--min-len", gen_cfg.min_len, "min source tokens");
  gen->add_option("--max-len", gen_cfg.max_len, "max source tokens");
  gen->add_option("--frames-per-token", gen_cfg.frames_per_token,
                  "frames rendered per source token");
  gen->add_option("--dim", gen_cfg.frame_dim, "feature dimension");
  gen->add_option("--seed", gen_cfg.seed, "master seed");

  // train
  auto* train = app.add_subcommand("train", "train the count model");
  std::string train_manifest, train_variant = "separate", train_k = "3";
  std::string train_langs, train_out = "model.txt";
  double train_eps = 1e-3;
  int train_q = ss::kDefaultPacketFrames;
  train->add_option("--manifest", train_manifest, "train manifest")->required();
  train->add_option("--variant", train_variant, "separate|unified");
  train->add_option("--k", train_k, "wait-k, e.g. 3 or es=4,fr=6");
  train->add_option("--languages", train_langs, "subset, e.g. es,fr");
  train->add_option("--epsilon", train_eps, "smoothing epsilon");
  train->add_option("--q", train_q, "frames per packet");
  train->add_option("--out", train_out, "model output path");

  // eval
  auto* eval = app.add_subcommand("eval", "run an evaluation");
  ss::RunConfig eval_cfg;
  std::string eval_manifest, eval_k = "3", eval_langs, eval_mode = "sync";
  std::string eval_out;
  eval->add_option("--manifest", eval_manifest, "eval manifest")->required();
  eval->add_option("--agent", eval_cfg.agent,
                   "oracle | uniform:SEED | model:PATH | tcp://host:port");
  eval->add_option("--mode", eval_mode, "sync|async");
  eval->add_option("--k", eval_k, "wait-k, e.g. 6 or es=4,fr=6");
  eval->add_option("--languages", eval_langs, "subset, e.g. es,fr");
  eval->add_option("--workers", eval_cfg.workers, "parallel sessions");
  eval->add_option("--seed", eval_cfg.seed, "run seed (uniform agent)");
  eval->add_option("--q", eval_cfg.q, "frames per packet");
  eval->add_option("--out", eval_out, "report JSON path (TSV written beside)");

  // serve
  auto* serve = app.add_subcommand("serve", "host an agent over the wire protocol");
  std::string serve_agent = "oracle", serve_endpoint = "tcp://127.0.0.1:9000";
  std::string serve_manifest;
  int serve_q = ss::kDefaultPacketFrames;
  int serve_timeout = ss::kDefaultWireTimeoutMs;
  serve->add_option("--agent", serve_agent, "oracle | uniform:SEED | model:PATH");
  serve->add_option("--endpoint", serve_endpoint, "tcp://host:port or stdio://");
  serve->add_option("--manifest", serve_manifest,
                    "manifest providing references (oracle/uniform)");
  serve->add_option("--q", serve_q, "frames per packet");
  serve->add_option("--timeout-ms", serve_timeout, "per-message timeout");

  // report
  auto* report = app.add_subcommand("report", "render a BLEU pivot TSV from reports");
  std::vector<std::string> report_inputs;
  std::string report_out;
  report->add_option("inputs", report_inputs, "report JSON files");
  report->add_option("--out", report_out, "output TSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto shifts = parse_int_map(gen_shift, "--shift");
      const auto dict_seeds = gen_dict_seed.empty()
                                  ? std::map<std::string, int>{}
                                  : parse_int_map(gen_dict_seed, "--dict-seed");
      for (const auto& [lang, s] : shifts) {
        if (lang.empty())
          throw ss::ConfigError("--shift needs explicit languages, e.g. es=1,fr=3");
        ss::SyntheticLanguage spec;
        spec.shift = s;
        auto it = dict_seeds.find(lang);
        spec.dict_seed = it != dict_seeds.end()
                             ? static_cast<std::uint64_t>(it->second)
                             : ss::detail::fnv1a(lang);
        gen_cfg.languages[lang] = spec;
      }
      return cmd_gen(gen_cfg, gen_out);
    }
    if (train->parsed())
      return cmd_train(train_manifest, train_variant, train_k, train_langs,
                       train_eps, train_q, train_out);
    if (eval->parsed()) {
      eval_cfg.manifest = eval_manifest;
      eval_cfg.out = eval_out;
      return cmd_eval(eval_cfg, eval_k, eval_langs, eval_mode);
    }
    if (serve->parsed())
      return cmd_serve(serve_agent, serve_endpoint, serve_manifest, serve_q,
                       serve_timeout);
    if (report->parsed()) return cmd_report(report_inputs, report_out);
  } catch (const ss::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const ss::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const ss::ProtocolError& e) {
    std::fprintf(stderr, "protocol error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
