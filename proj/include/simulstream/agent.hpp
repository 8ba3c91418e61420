#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "simulstream/error.hpp"
#include "simulstream/policy.hpp"
#include "simulstream/prefix_model.hpp"
#include "simulstream/stream.hpp"

namespace simulstream {

struct SessionInfo {
  std::string utterance_id;
  Schedule schedule;
  int q = kDefaultPacketFrames;
};

// A translation agent: a pure token generator. The scheduler owns all
// READ/WRITE decisions; the agent only ever sees packets that were already
// read and answers one write grant with one token (or EOS).
class Agent {
 public:
  virtual ~Agent() = default;
  virtual bool supports(const std::string& lang) const = 0;
  virtual void begin_session(const SessionInfo& info) = 0;
  virtual void on_source(const Packet& packet) = 0;
  // Returns the token for (lang, slot), or nullopt for EOS.
  virtual std::optional<std::string> write(const std::string& lang,
                                           int slot) = 0;
  virtual void end_session() = 0;
};

// Emits the reference translation token by token, then EOS. Upper bound and
// test fixture: BLEU 100 by construction under any schedule.
class OracleAgent : public Agent {
 public:
  explicit OracleAgent(
      std::map<std::string, std::vector<std::string>> references)
      : references_(std::move(references)) {}

  bool supports(const std::string& lang) const override {
    return references_.count(lang) > 0;
  }
  void begin_session(const SessionInfo&) override {}
  void on_source(const Packet&) override {}
  std::optional<std::string> write(const std::string& lang,
                                   int slot) override {
    const auto& ref = references_.at(lang);
    if (slot > static_cast<int>(ref.size())) return std::nullopt;
    return ref[slot - 1];
  }
  void end_session() override {}

 private:
  std::map<std::string, std::vector<std::string>> references_;
};

inline std::unique_ptr<Agent> oracle_agent(const Utterance& utt) {
  return std::make_unique<OracleAgent>(utt.references);
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Degenerate baseline: draws uniformly from the utterance's distinct
// reference tokens for the language, then EOS once the reference length is
// reached. The per-language RNG is derived from (seed, utterance id, lang),
// so results do not depend on scheduling or worker interleaving.
class UniformAgent : public Agent {
 public:
  UniformAgent(std::map<std::string, std::vector<std::string>> references,
               std::string utterance_id, std::uint64_t seed)
      : utterance_id_(std::move(utterance_id)), seed_(seed) {
    for (auto& [lang, ref] : references) {
      Lane lane;
      lane.ref_len = static_cast<int>(ref.size());
      std::set<std::string> distinct(ref.begin(), ref.end());
      lane.choices.assign(distinct.begin(), distinct.end());
      lanes_[lang] = std::move(lane);
    }
  }

  bool supports(const std::string& lang) const override {
    return lanes_.count(lang) > 0;
  }
  void begin_session(const SessionInfo&) override {
    for (auto& [lang, lane] : lanes_) {
      lane.state = detail::splitmix64(seed_ ^ detail::fnv1a(utterance_id_) ^
                                      detail::fnv1a(lang));
    }
  }
  void on_source(const Packet&) override {}
  std::optional<std::string> write(const std::string& lang,
                                   int slot) override {
    Lane& lane = lanes_.at(lang);
    if (slot > lane.ref_len) return std::nullopt;
    lane.state = detail::splitmix64(lane.state);
    return lane.choices[lane.state % lane.choices.size()];
  }
  void end_session() override {}

 private:
  struct Lane {
    std::vector<std::string> choices;
    int ref_len = 0;
    std::uint64_t state = 0;
  };
  std::map<std::string, Lane> lanes_;
  std::string utterance_id_;
  std::uint64_t seed_;
};

// Wraps greedy decoding over the trained model(s). Conditions only on the
// packets the scheduler has delivered so far.
class ModelAgent : public Agent {
 public:
  explicit ModelAgent(std::shared_ptr<const ModelSet> models)
      : models_(std::move(models)) {}

  bool supports(const std::string& lang) const override {
    return models_->k_per_lang.count(lang) > 0;
  }

  void begin_session(const SessionInfo& info) override {
    delivered_ = SourceStream{};
    prefixes_.clear();
    for (const auto& [lang, k] : info.schedule.k_per_lang) prefixes_[lang] = {};
  }

  void on_source(const Packet& packet) override {
    delivered_.packets.push_back(packet);
  }

  std::optional<std::string> write(const std::string& lang,
                                   int slot) override {
    const PrefixModel& model = models_->model_for(lang);
    std::vector<int>& prev = prefixes_.at(lang);
    if (slot != static_cast<int>(prev.size()) + 1)
      throw ProtocolError("model agent: unexpected slot " +
                          std::to_string(slot) + " for " + lang);
    PrefixContext ctx;
    ctx.stream = &delivered_;
    ctx.visible_packets = delivered_.size();
    ctx.prev_ids = &prev;
    ctx.lang_id = model.vocab().lang_token_id(lang);
    ctx.slot = slot;
    const int next = greedy_decode_next(model, ctx);
    if (next == kEosId) return std::nullopt;
    prev.push_back(next);
    return model.vocab().token(next);
  }

  void end_session() override {}

 private:
  std::shared_ptr<const ModelSet> models_;
  SourceStream delivered_;
  std::map<std::string, std::vector<int>> prefixes_;
};

inline std::unique_ptr<Agent> model_agent(std::shared_ptr<const ModelSet> models) {
  return std::make_unique<ModelAgent>(std::move(models));
}

}  // namespace simulstream
