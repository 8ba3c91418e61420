// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one pass/fail line per criterion. Exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "simulstream/agent.hpp"
#include "simulstream/bleu.hpp"
#include "simulstream/latency.hpp"
#include "simulstream/manifest.hpp"
#include "simulstream/policy.hpp"
#include "simulstream/prefix_model.hpp"
#include "simulstream/protocol.hpp"
#include "simulstream/report.hpp"
#include "simulstream/session.hpp"
#include "simulstream/synthetic.hpp"

namespace ss = simulstream;

namespace {

struct CheckFailure {
  std::string message;
};

void check(bool ok, const std::string& message) {
  if (!ok) throw CheckFailure{message};
}

void check_near(double actual, double expected, double tol,
                const std::string& what) {
  if (!(std::fabs(actual - expected) <= tol))
    throw CheckFailure{what + ": got " + std::to_string(actual) +
                       ", expected " + std::to_string(expected) +
                       " (tol " + std::to_string(tol) + ")"};
}

class Runner {
 public:
  void criterion(int number, const std::string& name,
                 const std::function<void()>& body) {
    const auto start = std::chrono::steady_clock::now();
    std::string failure;
    try {
      body();
    } catch (const CheckFailure& f) {
      failure = f.message;
    } catch (const std::exception& e) {
      failure = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (failure.empty()) {
      std::printf("[PASS] criterion %2d: %s (%.2fs)\n", number, name.c_str(),
                  secs);
    } else {
      ++failures_;
      std::printf("[FAIL] criterion %2d: %s (%.2fs)\n       %s\n", number,
                  name.c_str(), secs, failure.c_str());
    }
    std::fflush(stdout);
  }

  int exit_code() const { return failures_ == 0 ? 0 : 1; }

 private:
  int failures_ = 0;
};

// Endless token supply, never EOS; used to probe the schedule itself.
class EndlessAgent : public ss::Agent {
 public:
  bool supports(const std::string&) const override { return true; }
  void begin_session(const ss::SessionInfo&) override {}
  void on_source(const ss::Packet&) override {}
  std::optional<std::string> write(const std::string&, int slot) override {
    return "w" + std::to_string(slot);
  }
  void end_session() override {}
};

ss::Utterance make_utterance(const std::string& id, int packets,
                             const std::map<std::string, int>& ref_lens) {
  ss::Utterance utt;
  utt.id = id;
  std::vector<ss::FrameVector> frames(packets, ss::FrameVector(1, 1.0f));
  utt.stream = ss::make_stream(frames, 1);
  for (const auto& [lang, len] : ref_lens) {
    for (int i = 1; i <= len; ++i)
      utt.references[lang].push_back(lang + std::to_string(i));
  }
  return utt;
}

// Replays a trace and verifies the wait-k token-count law at every READ.
void verify_token_count_law(const ss::SessionTrace& trace,
                            const std::map<std::string, int>& k_map) {
  std::map<std::string, int> written;
  std::map<std::string, bool> finished;
  int reads = 0;
  for (const auto& ev : trace.events) {
    if (ev.action.kind == ss::ActionKind::kRead) {
      for (const auto& [lang, k] : k_map) {
        if (finished[lang]) continue;
        const int expect = std::max(0, reads - k + 1);
        check(written[lang] == expect,
              "law violated at m=" + std::to_string(reads) + " lang=" + lang +
                  ": " + std::to_string(written[lang]) + " tokens, expected " +
                  std::to_string(expect));
      }
      ++reads;
    } else if (ev.action.kind == ss::ActionKind::kWrite) {
      ++written[ev.action.lang];
    } else {
      finished[ev.action.lang] = true;
    }
  }
}

// Brute-force latency formulas, independent of the library implementations.
double brute_al(const std::vector<int>& g, int src, bool* warned = nullptr) {
  const int tgt = static_cast<int>(g.size());
  const double lambda = static_cast<double>(tgt) / src;
  int tau = -1;
  for (int t = 1; t <= tgt; ++t) {
    if (g[t - 1] == src) {
      tau = t;
      break;
    }
  }
  if (warned != nullptr) *warned = tau < 0;
  if (tau < 0) tau = tgt;
  double acc = 0.0;
  for (int t = 1; t <= tau; ++t) acc += g[t - 1] - (t - 1) / lambda;
  return acc / tau;
}

double brute_ap(const std::vector<int>& g, int src) {
  double acc = 0.0;
  for (int v : g) acc += v;
  return acc / (static_cast<double>(src) * static_cast<double>(g.size()));
}

double brute_dal(const std::vector<int>& g, int src) {
  const int tgt = static_cast<int>(g.size());
  const double lambda = static_cast<double>(tgt) / src;
  double prev = 0.0, acc = 0.0;
  for (int t = 1; t <= tgt; ++t) {
    const double corrected =
        t == 1 ? g[0]
               : std::max(static_cast<double>(g[t - 1]), prev + 1.0 / lambda);
    acc += corrected - (t - 1) / lambda;
    prev = corrected;
  }
  return acc / tgt;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("simulstream_acc_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// The shared acceptance corpus: 200 train / 64 test sentences, two target
// languages with shifts 1 (es) and 3 (fr), one packet per source token.
struct AcceptanceCorpus {
  std::filesystem::path dir;
  ss::SyntheticCorpus corpus;
  int q = 7;

  static AcceptanceCorpus make() {
    AcceptanceCorpus out;
    out.dir = fresh_dir("corpus");
    ss::SyntheticConfig cfg;
    cfg.vocab_size = 64;
    cfg.train_count = 200;
    cfg.dev_count = 0;
    cfg.test_count = 64;
    cfg.min_len = 8;
    cfg.max_len = 14;
    cfg.frames_per_token = 7;
    cfg.frame_dim = 8;
    cfg.seed = 2024;
    cfg.languages["es"] = {1, 11};
    cfg.languages["fr"] = {3, 22};
    out.corpus = ss::generate_synthetic(cfg, out.dir);
    return out;
  }

  std::vector<ss::Utterance> load(const ss::Manifest& m) const {
    std::vector<ss::Utterance> utts;
    for (const auto& rec : m.records)
      utts.push_back(ss::load_utterance(m, rec, {"es", "fr"}, q));
    return utts;
  }
};

}  // namespace

int main() {
  Runner runner;

  runner.criterion(1, "sync schedule obeys the token-count law", [] {
    std::mt19937 rng(101);
    for (int trial = 0; trial < 1000; ++trial) {
      const int packets = 5 + static_cast<int>(rng() % 46);
      const int k = 1 + static_cast<int>(rng() % 8);
      const auto utt = make_utterance("c1", packets, {});
      EndlessAgent agent;
      const auto trace =
          ss::run_session(utt, ss::Schedule::sync({"es", "fr"}, k), agent, 1);
      check(!trace.failed, "session failed: " + trace.failure_reason);
      verify_token_count_law(trace, {{"es", k}, {"fr", k}});
    }
  });

  runner.criterion(2, "async (4,6) staggers first writes at 4 and 6", [] {
    const auto utt = make_utterance("c2", 10, {{"es", 12}, {"fr", 12}});
    auto agent = ss::oracle_agent(utt);
    const auto trace = ss::run_session(
        utt, ss::Schedule::async({{"es", 4}, {"fr", 6}}), *agent, 1);
    check(!trace.failed, "session failed");
    std::map<std::string, int> first_write_at;
    int reads = 0;
    for (const auto& ev : trace.events) {
      if (ev.action.kind == ss::ActionKind::kRead) ++reads;
      if (ev.action.kind == ss::ActionKind::kWrite &&
          !first_write_at.count(ev.action.lang))
        first_write_at[ev.action.lang] = reads;
    }
    check(first_write_at.at("es") == 4,
          "first es write at |x|=" + std::to_string(first_write_at.at("es")));
    check(first_write_at.at("fr") == 6,
          "first fr write at |x|=" + std::to_string(first_write_at.at("fr")));
    check(trace.languages.at("es").g_record.front() == 4, "es g(1) != 4");
    check(trace.languages.at("fr").g_record.front() == 6, "fr g(1) != 6");
  });

  runner.criterion(3, "async(k,k) and sync(k) traces identical", [] {
    std::mt19937 rng(103);
    for (int trial = 0; trial < 500; ++trial) {
      const int packets = 1 + static_cast<int>(rng() % 40);
      const int k = 1 + static_cast<int>(rng() % 8);
      const auto utt = make_utterance(
          "c3", packets,
          {{"es", 1 + static_cast<int>(rng() % 50)},
           {"fr", 1 + static_cast<int>(rng() % 50)}});
      auto a1 = ss::oracle_agent(utt);
      auto a2 = ss::oracle_agent(utt);
      const auto sync_trace =
          ss::run_session(utt, ss::Schedule::sync({"es", "fr"}, k), *a1, 1);
      const auto async_trace = ss::run_session(
          utt, ss::Schedule::async({{"es", k}, {"fr", k}}), *a2, 1);
      check(sync_trace == async_trace,
            "trace mismatch at packets=" + std::to_string(packets) +
                " k=" + std::to_string(k));
    }
  });

  runner.criterion(4, "AL/AP/DAL formulas and wait-k identity", [] {
    for (int k = 1; k <= 6; ++k) {
      ss::LatencyInput inp;
      inp.src_len = 20;
      for (int t = 1; t <= 20; ++t)
        inp.g.push_back(std::min(k + t - 1, 20));
      check_near(ss::average_lagging(inp), k, 1e-9,
                 "AL != k for k=" + std::to_string(k));
    }
    std::mt19937 rng(104);
    for (int trial = 0; trial < 1000; ++trial) {
      ss::LatencyInput inp;
      inp.src_len = 1 + static_cast<int>(rng() % 30);
      const int tgt = 1 + static_cast<int>(rng() % 30);
      std::vector<int> g(tgt);
      for (int& v : g) v = 1 + static_cast<int>(rng() % inp.src_len);
      std::sort(g.begin(), g.end());
      inp.g = g;
      check_near(ss::average_lagging(inp), brute_al(g, inp.src_len), 1e-9,
                 "AL vs brute force");
      check_near(ss::average_proportion(inp), brute_ap(g, inp.src_len), 1e-9,
                 "AP vs brute force");
      check_near(ss::differentiable_average_lagging(inp),
                 brute_dal(g, inp.src_len), 1e-9, "DAL vs brute force");
      // corrected delay dominates g pointwise
      const double lambda = static_cast<double>(tgt) / inp.src_len;
      double gp = 0.0;
      for (int t = 1; t <= tgt; ++t) {
        gp = t == 1 ? g[0]
                    : std::max(static_cast<double>(g[t - 1]), gp + 1.0 / lambda);
        check(gp >= g[t - 1], "g' < g");
      }
    }
  });

  runner.criterion(5, "BLEU identities and frozen reference fixtures", [] {
    const std::vector<ss::TokenList> corpus = {
        {"the", "quick", "brown", "fox", "jumps", "over", "the", "lazy",
         "dog"},
        {"time", "flies", "like", "an", "arrow", "."}};
    check_near(ss::corpus_bleu(corpus, corpus), 100.0, 1e-9,
               "perfect match != 100");
    // single-sentence fixture: no 4-gram candidates -> unsmoothed 0
    check_near(ss::corpus_bleu({{"the", "cat", "sat", "on"}},
                               {{"the", "cat", "sat"}}),
               0.0, 1e-4, "single-sentence fixture");
    // pre-computed multi-sentence reference value
    const std::vector<ss::TokenList> refs = {
        {"the", "cat", "sat", "on", "the", "mat", "."},
        {"dogs", "bark", "at", "the", "moon", "every", "night", "."},
        {"a", "stitch", "in", "time", "saves", "nine", "."}};
    const std::vector<ss::TokenList> hyps = {
        {"the", "cat", "sat", "on", "a", "mat", "."},
        {"dogs", "bark", "at", "the", "moon", "all", "night", "."},
        {"a", "stitch", "in", "time", "saves", "lives", "."}};
    check_near(ss::corpus_bleu(refs, hyps), 58.060307545828685, 1e-4,
               "three-sentence fixture");
  });

  runner.criterion(6, "loss identities, uniform NLL, prefix causality", [] {
    const auto acc = AcceptanceCorpus::make();
    auto corpus = acc.load(acc.corpus.train);
    corpus.resize(60);
    const std::map<std::string, int> k_map{{"es", 3}, {"fr", 3}};
    const ss::ModelSet set = ss::train_count_model(
        corpus, ss::Conditioning::kSeparate, k_map, 1e-3);

    for (size_t i : {size_t{0}, size_t{17}, size_t{42}}) {
      const auto& utt = corpus[i];
      const std::map<std::string, std::vector<std::string>> y_map{
          {"es", utt.reference("es")}, {"fr", utt.reference("fr")}};
      const double joint = ss::joint_sync_loss(set, utt.stream, y_map, 3);
      const double total =
          ss::prefix_nll(set.model_for("es"), utt.stream, utt.reference("es"),
                         3, "es") +
          ss::prefix_nll(set.model_for("fr"), utt.stream, utt.reference("fr"),
                         3, "fr");
      check(joint == total, "joint_sync_loss != exact sum");
      const double async_loss =
          ss::joint_async_loss(set, utt.stream, y_map, k_map);
      check(async_loss == joint, "joint_async(k,k) != joint_sync(k)");
    }

    // uniform-model loss: |y| * ln V
    auto vocab = set.vocabulary;
    ss::UniformModel uniform(vocab);
    const auto& utt = corpus[5];
    const double expect =
        static_cast<double>(utt.reference("es").size()) *
        std::log(static_cast<double>(vocab->size()));
    check_near(
        ss::prefix_nll(uniform, utt.stream, utt.reference("es"), 3, "es"),
        expect, 1e-9, "uniform NLL");

    // prefix causality: mutating packets beyond g(t) never changes p
    std::mt19937 rng(106);
    int done = 0;
    while (done < 200) {
      const auto& u = corpus[rng() % corpus.size()];
      const auto y = vocab->ids(u.reference("es"));
      const int t = 1 + static_cast<int>(rng() % y.size());
      const int g = ss::g_of_t(3, t, u.stream.size());
      if (g >= u.stream.size()) continue;
      std::vector<int> prev(y.begin(), y.begin() + (t - 1));
      ss::PrefixContext ctx;
      ctx.stream = &u.stream;
      ctx.visible_packets = g;
      ctx.prev_ids = &prev;
      ctx.lang_id = vocab->lang_token_id("es");
      ctx.slot = t;
      const auto before = set.model_for("es").distribution(ctx);
      ss::Utterance mutated = u;
      for (int p = g + 1; p <= mutated.stream.size(); ++p)
        for (auto& frame : mutated.stream.packets[p - 1].frames)
          for (auto& v : frame) v = static_cast<float>(rng() % 5000);
      ctx.stream = &mutated.stream;
      check(before == set.model_for("es").distribution(ctx),
            "mutation beyond g(t) changed the distribution");
      ++done;
    }
  });

  runner.criterion(
      7, "oracle reaches BLEU 100 in-process and over the wire", [] {
        const auto acc = AcceptanceCorpus::make();
        const auto utts = acc.load(acc.corpus.train);

        std::map<std::string, const ss::Utterance*> by_id;
        for (const auto& utt : utts) by_id[utt.id] = &utt;
        ss::AgentFactory factory =
            [&by_id](const ss::SessionInfo& info) -> std::unique_ptr<ss::Agent> {
          auto it = by_id.find(info.utterance_id);
          if (it == by_id.end())
            throw ss::ProtocolError("unknown id " + info.utterance_id);
          return ss::oracle_agent(*it->second);
        };
        ss::AgentServer server(factory, "127.0.0.1", 0);
        server.start();
        const std::string endpoint =
            "tcp://127.0.0.1:" + std::to_string(server.port());

        std::vector<ss::Schedule> schedules;
        for (int k : {3, 4, 5, 6})
          schedules.push_back(ss::Schedule::sync({"es", "fr"}, k));
        schedules.push_back(ss::Schedule::async({{"es", 4}, {"fr", 6}}));
        schedules.push_back(ss::Schedule::async({{"es", 6}, {"fr", 4}}));

        for (const auto& schedule : schedules) {
          ss::RunConfig cfg;
          cfg.manifest = acc.dir / "manifest_train.tsv";
          cfg.mode = schedule.mode;
          cfg.k_per_lang = schedule.k_per_lang;
          cfg.agent = "oracle";
          cfg.workers = 4;
          cfg.q = acc.q;
          const ss::Report local = ss::run_eval(cfg);
          check(local.failed_count == 0, "in-process failures");
          for (const auto& [lang, summary] : local.languages)
            check_near(summary.bleu, 100.0, 1e-9,
                       "in-process BLEU for " + lang);

          cfg.agent = endpoint;
          const ss::Report remote = ss::run_eval(cfg);
          check(remote.failed_count == 0, "wire failures");
          for (const auto& [lang, summary] : remote.languages)
            check_near(summary.bleu, 100.0, 1e-9, "wire BLEU for " + lang);

          for (const auto& utt : utts) {
            auto local_agent = ss::oracle_agent(utt);
            const auto local_trace =
                ss::run_session(utt, schedule, *local_agent, acc.q);
            ss::RemoteAgent remote_agent(
                ss::parse_endpoint(endpoint));
            const auto remote_trace =
                ss::run_session(utt, schedule, remote_agent, acc.q);
            check(local_trace == remote_trace,
                  "trace mismatch for " + utt.id);
          }
        }
        server.stop();
      });

  runner.criterion(
      8, "trained model reproduces the quality-latency trend", [] {
        const auto acc = AcceptanceCorpus::make();
        const auto train = acc.load(acc.corpus.train);
        std::map<std::string, std::map<int, double>> bleu;
        for (int k = 1; k <= 6; ++k) {
          const ss::ModelSet set = ss::train_count_model(
              train, ss::Conditioning::kUnified, {{"es", k}, {"fr", k}}, 1e-3);
          const auto model_path =
              acc.dir / ("model_k" + std::to_string(k) + ".txt");
          ss::save_model(set, model_path);
          ss::RunConfig cfg;
          cfg.manifest = acc.dir / "manifest_test.tsv";
          cfg.mode = ss::ScheduleMode::kSync;
          cfg.k_per_lang = {{"es", k}, {"fr", k}};
          cfg.agent = "model:" + model_path.string();
          cfg.workers = 4;
          cfg.q = acc.q;
          const ss::Report report = ss::run_eval(cfg);
          check(report.failed_count == 0, "failures at k=" + std::to_string(k));
          for (const auto& [lang, summary] : report.languages)
            bleu[lang][k] = summary.bleu;
        }
        const std::map<std::string, int> threshold{{"es", 2}, {"fr", 4}};
        for (const auto& [lang, series] : bleu) {
          double prev = -1.0;
          for (int k = 1; k <= 6; ++k) {
            const double v = series.at(k);
            check(v >= prev - 1e-9,
                  lang + " BLEU decreased at k=" + std::to_string(k));
            prev = v;
            if (k >= threshold.at(lang))
              check_near(v, 100.0, 1e-9,
                         lang + " BLEU at k=" + std::to_string(k));
            else
              check(v < 5.0, lang + " BLEU " + std::to_string(v) +
                                 " not < 5 below threshold at k=" +
                                 std::to_string(k));
          }
        }
      });

  runner.criterion(
      9, "unified and separate variants agree on disjoint vocabularies", [] {
        const auto dir = fresh_dir("parity");
        ss::SyntheticConfig cfg;
        cfg.vocab_size = 48;
        cfg.train_count = 120;
        cfg.dev_count = 0;
        cfg.test_count = 40;
        cfg.min_len = 6;
        cfg.max_len = 11;
        cfg.frames_per_token = 7;
        cfg.frame_dim = 8;
        cfg.seed = 4096;
        cfg.languages["es"] = {0, 5};
        cfg.languages["fr"] = {2, 6};
        const auto corpus = ss::generate_synthetic(cfg, dir);
        std::vector<ss::Utterance> train;
        for (const auto& rec : corpus.train.records)
          train.push_back(
              ss::load_utterance(corpus.train, rec, {"es", "fr"}, 7));
        const std::map<std::string, int> k_map{{"es", 2}, {"fr", 4}};
        const ss::ModelSet sep = ss::train_count_model(
            train, ss::Conditioning::kSeparate, k_map, 1e-3);
        const ss::ModelSet uni = ss::train_count_model(
            train, ss::Conditioning::kUnified, k_map, 1e-3);
        ss::save_model(sep, dir / "sep.txt");
        ss::save_model(uni, dir / "uni.txt");

        std::map<std::string, double> bleu_sep, bleu_uni;
        for (const auto& [name, path] :
             std::map<std::string, std::filesystem::path>{
                 {"sep", dir / "sep.txt"}, {"uni", dir / "uni.txt"}}) {
          ss::RunConfig rc;
          rc.manifest = dir / "manifest_test.tsv";
          rc.mode = ss::ScheduleMode::kAsync;
          rc.k_per_lang = k_map;
          rc.agent = "model:" + path.string();
          rc.workers = 2;
          rc.q = 7;
          const ss::Report report = ss::run_eval(rc);
          check(report.failed_count == 0, name + " failures");
          for (const auto& [lang, summary] : report.languages)
            (name == "sep" ? bleu_sep : bleu_uni)[lang] = summary.bleu;
        }
        for (const auto& [lang, v] : bleu_sep)
          check(v == bleu_uni.at(lang),
                "BLEU differs for " + lang + ": " + std::to_string(v) +
                    " vs " + std::to_string(bleu_uni.at(lang)));
      });

  runner.criterion(10, "eval reports are deterministic across runs and workers",
                   [] {
                     const auto acc = AcceptanceCorpus::make();
                     ss::RunConfig cfg;
                     cfg.manifest = acc.dir / "manifest_test.tsv";
                     cfg.mode = ss::ScheduleMode::kSync;
                     cfg.k_per_lang = {{"es", 3}, {"fr", 3}};
                     cfg.agent = "uniform:77";
                     cfg.seed = 5;
                     cfg.workers = 1;
                     cfg.q = acc.q;
                     const std::string a = ss::run_eval(cfg).payload_string();
                     const std::string b = ss::run_eval(cfg).payload_string();
                     check(a == b, "repeat run differs");
                     cfg.workers = 4;
                     const std::string c = ss::run_eval(cfg).payload_string();
                     check(a == c, "workers=4 differs from workers=1");
                   });

  return runner.exit_code();
}
