#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "simulstream/error.hpp"

namespace simulstream {

enum class ScheduleMode { kSync, kAsync };

// Read/write policy: sync shares one k across languages, async holds one k
// per language.
struct Schedule {
  ScheduleMode mode = ScheduleMode::kSync;
  std::map<std::string, int> k_per_lang;  // tag -> k, ascending tag order

  static Schedule sync(const std::vector<std::string>& langs, int k) {
    if (k < 1) throw ConfigError("wait-k requires k >= 1, got " + std::to_string(k));
    Schedule s;
    s.mode = ScheduleMode::kSync;
    for (const auto& lang : langs) s.k_per_lang[lang] = k;
    return s;
  }

  static Schedule async(const std::map<std::string, int>& k_map) {
    Schedule s;
    s.mode = ScheduleMode::kAsync;
    s.k_per_lang = k_map;
    for (const auto& [lang, k] : k_map) {
      if (k < 1)
        throw ConfigError("wait-k requires k >= 1, got " + std::to_string(k) +
                          " for " + lang);
    }
    return s;
  }

  int sync_k() const {
    if (k_per_lang.empty()) throw ConfigError("schedule has no languages");
    int k = k_per_lang.begin()->second;
    for (const auto& [lang, kj] : k_per_lang) {
      if (kj != k)
        throw ConfigError("sync schedule requires equal k for all languages");
    }
    return k;
  }

  std::vector<std::string> languages() const {
    std::vector<std::string> out;
    for (const auto& [lang, k] : k_per_lang) out.push_back(lang);
    return out;
  }
};

// Packets read before the t-th write under wait-k: min(k + t - 1, src_len).
inline int g_of_t(int k, int t, int src_len) {
  return std::min(k + t - 1, src_len);
}

enum class ActionKind { kRead, kWrite, kFinish };

struct Action {
  ActionKind kind = ActionKind::kRead;
  std::string lang;  // WRITE/FINISH only
  int slot = 0;      // WRITE only, 1-based target position

  static Action read() { return {ActionKind::kRead, "", 0}; }
  static Action write(std::string lang, int slot) {
    return {ActionKind::kWrite, std::move(lang), slot};
  }
  static Action finish(std::string lang) {
    return {ActionKind::kFinish, std::move(lang), 0};
  }

  bool operator==(const Action&) const = default;
};

// Per-language progress within one session.
struct LanguageState {
  std::vector<std::string> emitted;  // target prefix, EOS excluded
  std::vector<int> g_record;         // packets read before each write
  bool finished = false;
  bool truncated = false;            // FINISH forced by the length cap
};

// Single-owner state machine for one utterance. Distinct sessions share
// nothing and may run concurrently.
class SessionState {
 public:
  SessionState(int total_packets, const std::vector<std::string>& langs)
      : total_packets_(total_packets), exhausted_(total_packets == 0) {
    if (total_packets < 0) throw ConfigError("negative packet count");
    for (const auto& lang : langs) langs_[lang] = LanguageState{};
    // Termination guard for degenerate agents that never emit EOS.
    max_target_len_ = 2 * total_packets + 10;
  }

  int packets_read() const { return packets_read_; }
  int total_packets() const { return total_packets_; }
  bool source_exhausted() const { return exhausted_; }
  int max_target_len() const { return max_target_len_; }

  const LanguageState& lang(const std::string& tag) const {
    auto it = langs_.find(tag);
    if (it == langs_.end()) throw ConfigError("unknown language: " + tag);
    return it->second;
  }
  const std::map<std::string, LanguageState>& languages() const { return langs_; }

  bool all_finished() const {
    return std::all_of(langs_.begin(), langs_.end(),
                       [](const auto& kv) { return kv.second.finished; });
  }

  // Applies one action. WRITE carries the emitted token; FINISH marks the
  // language done (agent EOS or length cap).
  void advance(const Action& action, const std::string& token = "") {
    switch (action.kind) {
      case ActionKind::kRead: {
        if (exhausted_)
          throw ProtocolError("READ after source exhausted");
        ++packets_read_;
        if (packets_read_ == total_packets_) exhausted_ = true;
        return;
      }
      case ActionKind::kWrite: {
        LanguageState& ls = mutable_lang(action.lang);
        if (ls.finished)
          throw ProtocolError("WRITE to finished language " + action.lang);
        const int expected_slot = static_cast<int>(ls.emitted.size()) + 1;
        if (action.slot != expected_slot)
          throw ProtocolError("WRITE slot " + std::to_string(action.slot) +
                              " for " + action.lang + ", expected " +
                              std::to_string(expected_slot));
        ls.emitted.push_back(token);
        ls.g_record.push_back(packets_read_);
        return;
      }
      case ActionKind::kFinish: {
        LanguageState& ls = mutable_lang(action.lang);
        if (ls.finished)
          throw ProtocolError("FINISH on finished language " + action.lang);
        ls.finished = true;
        return;
      }
    }
  }

  void mark_truncated(const std::string& tag) { mutable_lang(tag).truncated = true; }

 private:
  LanguageState& mutable_lang(const std::string& tag) {
    auto it = langs_.find(tag);
    if (it == langs_.end()) throw ProtocolError("unknown language: " + tag);
    return it->second;
  }

  int total_packets_;
  int packets_read_ = 0;
  bool exhausted_;
  int max_target_len_;
  std::map<std::string, LanguageState> langs_;
};

namespace detail {

// Wait-k write eligibility. Before exhaustion a language owes tokens up to
// max(0, m - k + 1); after exhaustion every unfinished language drains one
// token per step until EOS or the cap.
inline std::vector<Action> next_actions_waitk(
    const SessionState& state, const std::map<std::string, int>& k_map) {
  if (state.all_finished()) return {};
  std::vector<Action> out;
  const int m = state.packets_read();
  for (const auto& [lang, k] : k_map) {  // ascending tag order
    const LanguageState& ls = state.lang(lang);
    if (ls.finished) continue;
    const int emitted = static_cast<int>(ls.emitted.size());
    if (emitted >= state.max_target_len()) {
      out.push_back(Action::finish(lang));
      continue;
    }
    const bool due = state.source_exhausted()
                         ? true
                         : (m >= k && emitted < m - k + 1);
    if (due) out.push_back(Action::write(lang, emitted + 1));
  }
  if (out.empty() && !state.source_exhausted()) out.push_back(Action::read());
  return out;
}

}  // namespace detail

// Synchronous scheduler (one shared k): read until k packets, then one write
// per unfinished language per accepted packet, then drain the tail.
inline std::vector<Action> next_actions_sync(const SessionState& state, int k) {
  if (k < 1) throw ConfigError("wait-k requires k >= 1");
  if (state.all_finished()) return {};
  std::vector<Action> out;
  const int m = state.packets_read();
  if (!state.source_exhausted() && m < k) return {Action::read()};
  for (const auto& [lang, ls] : state.languages()) {
    if (ls.finished) continue;
    const int emitted = static_cast<int>(ls.emitted.size());
    if (emitted >= state.max_target_len()) {
      out.push_back(Action::finish(lang));
      continue;
    }
    const bool due = state.source_exhausted() || emitted < m - k + 1;
    if (due) out.push_back(Action::write(lang, emitted + 1));
  }
  if (out.empty() && !state.source_exhausted()) out.push_back(Action::read());
  return out;
}

// Asynchronous scheduler: language j writes whenever |x| >= k_j and it still
// owes a token for the current packet count.
inline std::vector<Action> next_actions_async(
    const SessionState& state, const std::map<std::string, int>& k_map) {
  for (const auto& [lang, k] : k_map) {
    if (k < 1)
      throw ConfigError("wait-k requires k >= 1 for language " + lang);
  }
  return detail::next_actions_waitk(state, k_map);
}

inline std::vector<Action> next_actions(const SessionState& state,
                                        const Schedule& schedule) {
  if (schedule.mode == ScheduleMode::kSync)
    return next_actions_sync(state, schedule.sync_k());
  return next_actions_async(state, schedule.k_per_lang);
}

}  // namespace simulstream
