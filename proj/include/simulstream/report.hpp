#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "simulstream/agent.hpp"
#include "simulstream/bleu.hpp"
#include "simulstream/error.hpp"
#include "simulstream/latency.hpp"
#include "simulstream/log.hpp"
#include "simulstream/manifest.hpp"
#include "simulstream/prefix_model.hpp"
#include "simulstream/protocol.hpp"
#include "simulstream/session.hpp"

namespace simulstream {

// Agent selector: oracle | uniform:SEED | model:PATH | tcp://host:port |
// stdio://
struct AgentSpec {
  enum class Kind { kOracle, kUniform, kModel, kRemote };
  Kind kind = Kind::kOracle;
  std::uint64_t seed = 0;       // uniform
  std::string model_path;      // model
  std::string endpoint;        // remote
  std::string raw;

  static AgentSpec parse(const std::string& spec) {
    AgentSpec out;
    out.raw = spec;
    if (spec == "oracle") {
      out.kind = Kind::kOracle;
    } else if (spec.rfind("uniform:", 0) == 0) {
      out.kind = Kind::kUniform;
      try {
        out.seed = std::stoull(spec.substr(8));
      } catch (const std::exception&) {
        throw ConfigError("bad uniform agent seed in '" + spec + "'");
      }
    } else if (spec.rfind("model:", 0) == 0) {
      out.kind = Kind::kModel;
      out.model_path = spec.substr(6);
      if (out.model_path.empty())
        throw ConfigError("model agent needs a path: model:PATH");
    } else if (spec.rfind("tcp://", 0) == 0 || spec.rfind("stdio", 0) == 0) {
      out.kind = Kind::kRemote;
      out.endpoint = spec;
      parse_endpoint(spec);  // validates
    } else {
      throw ConfigError(
          "unknown agent spec '" + spec +
          "' (expected oracle | uniform:SEED | model:PATH | tcp://host:port)");
    }
    return out;
  }
};

struct RunConfig {
  std::filesystem::path manifest;
  std::vector<std::string> languages;      // empty = all manifest columns
  ScheduleMode mode = ScheduleMode::kSync;
  std::map<std::string, int> k_per_lang;   // one entry may fan out to all
  std::string agent = "oracle";
  int workers = 1;
  std::uint64_t seed = 0;
  int q = kDefaultPacketFrames;
  std::filesystem::path out;               // report JSON path; may be empty
};

struct LanguageSummary {
  int k = 0;
  double bleu = 0.0;
  double al = 0.0;
  double ap = 0.0;
  double dal = 0.0;
  int sentences = 0;           // sessions that produced a hypothesis record
  int latency_defined = 0;     // sessions included in the latency means
  int latency_warnings = 0;    // g never reached |x| (early EOS)
  int truncated = 0;
};

struct Report {
  nlohmann::json config;
  std::map<std::string, LanguageSummary> languages;
  nlohmann::json utterances = nlohmann::json::array();
  nlohmann::json failures = nlohmann::json::array();
  int utterance_count = 0;
  int failed_count = 0;
  std::string timestamp;

  nlohmann::json to_json() const {
    nlohmann::json langs = nlohmann::json::object();
    for (const auto& [tag, s] : languages) {
      langs[tag] = {{"k", s.k},
                    {"bleu", s.bleu},
                    {"al", s.al},
                    {"ap", s.ap},
                    {"dal", s.dal},
                    {"sentences", s.sentences},
                    {"latency_defined", s.latency_defined},
                    {"latency_warnings", s.latency_warnings},
                    {"truncated", s.truncated}};
    }
    return nlohmann::json{{"config", config},
                          {"languages", langs},
                          {"utterances", utterances},
                          {"failures", failures},
                          {"utterance_count", utterance_count},
                          {"failed_count", failed_count},
                          {"timestamp", timestamp}};
  }

  // Byte-stable payload: the full report minus the timestamp.
  std::string payload_string() const {
    nlohmann::json j = to_json();
    j.erase("timestamp");
    return j.dump(2);
  }
};

// BLEU pivot (rows = language, columns = k). Cells of ks a report does not
// cover stay "-"; merging several reports fills a sweep table.
inline std::string report_pivot_tsv(const std::vector<nlohmann::json>& reports) {
  std::map<std::string, std::map<int, double>> cells;
  std::map<int, bool> ks;
  for (const auto& rep : reports) {
    for (const auto& [lang, summary] : rep.at("languages").items()) {
      const int k = summary.at("k").get<int>();
      cells[lang][k] = summary.at("bleu").get<double>();
      ks[k] = true;
    }
  }
  std::string out = "language";
  for (const auto& [k, unused] : ks) out += "\tk=" + std::to_string(k);
  out += '\n';
  char buf[32];
  for (const auto& [lang, row] : cells) {
    out += lang;
    for (const auto& [k, unused] : ks) {
      auto it = row.find(k);
      if (it == row.end()) {
        out += "\t-";
      } else {
        std::snprintf(buf, sizeof(buf), "%.2f", it->second);
        out += '\t';
        out += buf;
      }
    }
    out += '\n';
  }
  return out;
}

namespace detail {

struct UtteranceOutcome {
  std::string id;
  SessionTrace trace;
  std::map<std::string, std::string> ref_text;   // joined references
};

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

inline std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// Per-session agent construction. Remote agents get one connection per
// session, so concurrent workers never share a socket.
inline std::unique_ptr<Agent> make_session_agent(
    const AgentSpec& spec, const Utterance& utt,
    const std::shared_ptr<const ModelSet>& models) {
  switch (spec.kind) {
    case AgentSpec::Kind::kOracle:
      return oracle_agent(utt);
    case AgentSpec::Kind::kUniform:
      return std::make_unique<UniformAgent>(utt.references, utt.id, spec.seed);
    case AgentSpec::Kind::kModel:
      return model_agent(models);
    case AgentSpec::Kind::kRemote:
      return remote_agent(spec.endpoint);
  }
  throw ConfigError("unhandled agent kind");
}

}  // namespace detail

inline Schedule make_schedule(ScheduleMode mode,
                              const std::map<std::string, int>& k_per_lang) {
  if (mode == ScheduleMode::kSync) {
    Schedule s;
    s.mode = ScheduleMode::kSync;
    s.k_per_lang = k_per_lang;
    s.sync_k();
    return s;
  }
  return Schedule::async(k_per_lang);
}

// Runs every manifest row through the scheduler, computes per-language
// corpus BLEU and latency means, and assembles the report. Utterance-level
// parallelism; aggregation happens in id-sorted order regardless of worker
// count.
inline Report run_eval(const RunConfig& cfg) {
  const AgentSpec spec = AgentSpec::parse(cfg.agent);
  Manifest manifest = load_manifest(cfg.manifest, cfg.languages);
  std::vector<std::string> langs =
      cfg.languages.empty() ? manifest.languages : cfg.languages;
  std::sort(langs.begin(), langs.end());

  // A "" key fans one k out to every language.
  std::map<std::string, int> k_map = cfg.k_per_lang;
  if (k_map.count("")) {
    const int k = k_map.at("");
    k_map.erase("");
    for (const auto& lang : langs) k_map.emplace(lang, k);
  }
  for (const auto& lang : langs) {
    if (!k_map.count(lang))
      throw ConfigError("no k configured for language " + lang);
  }
  if (k_map.size() != langs.size())
    throw ConfigError("k configured for languages outside the run");
  const Schedule schedule = make_schedule(cfg.mode, k_map);

  std::shared_ptr<const ModelSet> models;
  if (spec.kind == AgentSpec::Kind::kModel)
    models = std::make_shared<ModelSet>(load_model(spec.model_path));
  if (spec.kind == AgentSpec::Kind::kRemote) {
    const Endpoint ep = parse_endpoint(spec.endpoint);
    if (ep.kind == Endpoint::Kind::kTcp)
      ::close(detail::connect_tcp(ep.host, ep.port));  // startup probe
  }

  const int workers = std::max(1, cfg.workers);
  const size_t n = manifest.records.size();
  std::vector<detail::UtteranceOutcome> outcomes(n);
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  auto work = [&] {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= n) return;
      const ManifestRecord& rec = manifest.records[i];
      detail::UtteranceOutcome& out = outcomes[i];
      out.id = rec.id;
      try {
        const Utterance utt = load_utterance(manifest, rec, langs, cfg.q);
        for (const auto& lang : langs)
          out.ref_text[lang] = detail::join_tokens(utt.reference(lang));
        AgentSpec session_spec = spec;
        if (session_spec.kind == AgentSpec::Kind::kUniform)
          session_spec.seed ^= cfg.seed;
        auto agent = detail::make_session_agent(session_spec, utt, models);
        out.trace = run_session(utt, schedule, *agent, cfg.q);
      } catch (const std::exception& e) {
        out.trace.utterance_id = rec.id;
        out.trace.failed = true;
        out.trace.failure_reason = e.what();
      }
    }
  };
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();

  std::sort(outcomes.begin(), outcomes.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });

  Report report;
  report.config = nlohmann::json{
      {"manifest", cfg.manifest.string()},
      {"languages", langs},
      {"mode", cfg.mode == ScheduleMode::kSync ? "sync" : "async"},
      {"k", k_map},
      {"agent", cfg.agent},
      {"workers", cfg.workers},
      {"seed", cfg.seed},
      {"q", cfg.q}};
  report.utterance_count = static_cast<int>(n);
  report.timestamp = detail::iso_timestamp();

  std::map<std::string, std::vector<std::string>> refs, hyps;
  std::map<std::string, std::vector<double>> als, aps, dals;

  for (const auto& out : outcomes) {
    nlohmann::json diag{{"id", out.id}, {"failed", out.trace.failed}};
    if (out.trace.failed) {
      ++report.failed_count;
      diag["reason"] = out.trace.failure_reason;
      report.failures.push_back(nlohmann::json{
          {"id", out.id}, {"reason", out.trace.failure_reason}});
      report.utterances.push_back(std::move(diag));
      continue;
    }
    nlohmann::json lang_diag = nlohmann::json::object();
    for (const auto& lang : langs) {
      const LanguageState& ls = out.trace.languages.at(lang);
      LanguageSummary& summary = report.languages[lang];
      summary.k = k_map.at(lang);
      ++summary.sentences;
      if (ls.truncated) ++summary.truncated;

      const std::string hyp_text = detail::join_tokens(ls.emitted);
      refs[lang].push_back(out.ref_text.at(lang));
      hyps[lang].push_back(hyp_text);

      nlohmann::json entry{{"hyp_len", ls.emitted.size()},
                           {"truncated", ls.truncated},
                           {"sentence_bleu_add_eps",
                            sentence_bleu_add_eps(
                                bleu_tokenize(out.ref_text.at(lang)),
                                bleu_tokenize(hyp_text))}};
      if (!ls.g_record.empty()) {
        const LatencyInput inp = out.trace.latency_input(lang);
        bool warned = false;
        const double al = average_lagging(inp, &warned);
        entry["al"] = al;
        entry["ap"] = average_proportion(inp);
        entry["dal"] = differentiable_average_lagging(inp);
        entry["latency_warning"] = warned;
        als[lang].push_back(al);
        aps[lang].push_back(average_proportion(inp));
        dals[lang].push_back(differentiable_average_lagging(inp));
        ++summary.latency_defined;
        if (warned) ++summary.latency_warnings;
      } else {
        entry["al"] = nullptr;
        entry["ap"] = nullptr;
        entry["dal"] = nullptr;
      }
      lang_diag[lang] = std::move(entry);
    }
    diag["languages"] = std::move(lang_diag);
    report.utterances.push_back(std::move(diag));
  }

  for (const auto& lang : langs) {
    LanguageSummary& summary = report.languages[lang];
    summary.k = k_map.at(lang);
    if (!refs[lang].empty())
      summary.bleu = corpus_bleu_detok(refs[lang], hyps[lang]);
    auto mean = [](const std::vector<double>& v) {
      if (v.empty()) return 0.0;
      double sum = 0.0;
      for (double x : v) sum += x;
      return sum / static_cast<double>(v.size());
    };
    summary.al = mean(als[lang]);
    summary.ap = mean(aps[lang]);
    summary.dal = mean(dals[lang]);
  }

  if (!cfg.out.empty()) {
    std::ofstream out_json(cfg.out, std::ios::binary);
    if (!out_json) throw DataError("cannot write report: " + cfg.out.string());
    out_json << report.to_json().dump(2) << '\n';
    std::filesystem::path tsv_path = cfg.out;
    tsv_path.replace_extension(".tsv");
    std::ofstream out_tsv(tsv_path, std::ios::binary);
    out_tsv << report_pivot_tsv({report.to_json()});
  }
  return report;
}

}  // namespace simulstream
