#pragma once

#include <map>
#include <string>
#include <vector>

#include "simulstream/agent.hpp"
#include "simulstream/error.hpp"
#include "simulstream/latency.hpp"
#include "simulstream/policy.hpp"
#include "simulstream/stream.hpp"

namespace simulstream {

struct TraceEvent {
  int step = 0;  // logical step: one scheduler decision batch per step
  Action action;
  std::string token;  // WRITE only

  bool operator==(const TraceEvent&) const = default;
};

// Interleaved action record of one utterance, plus the final per-language
// hypothesis and delay record.
struct SessionTrace {
  std::string utterance_id;
  int total_packets = 0;
  std::vector<TraceEvent> events;
  std::map<std::string, LanguageState> languages;
  bool failed = false;
  std::string failure_reason;

  bool operator==(const SessionTrace& other) const {
    auto lang_eq = [](const std::map<std::string, LanguageState>& a,
                      const std::map<std::string, LanguageState>& b) {
      if (a.size() != b.size()) return false;
      for (auto ita = a.begin(), itb = b.begin(); ita != a.end();
           ++ita, ++itb) {
        if (ita->first != itb->first) return false;
        const LanguageState& x = ita->second;
        const LanguageState& y = itb->second;
        if (x.emitted != y.emitted || x.g_record != y.g_record ||
            x.finished != y.finished || x.truncated != y.truncated)
          return false;
      }
      return true;
    };
    return utterance_id == other.utterance_id &&
           total_packets == other.total_packets && events == other.events &&
           failed == other.failed && failure_reason == other.failure_reason &&
           lang_eq(languages, other.languages);
  }

  LatencyInput latency_input(const std::string& lang) const {
    return LatencyInput{languages.at(lang).g_record, total_packets};
  }

  const std::vector<std::string>& hypothesis(const std::string& lang) const {
    return languages.at(lang).emitted;
  }
};

// Drives one utterance through the wait-k scheduler against an agent. Agent
// failures mark the trace failed instead of aborting the caller, so corpus
// runs continue past bad sessions.
inline SessionTrace run_session(const Utterance& utt, const Schedule& schedule,
                                Agent& agent, int q = kDefaultPacketFrames) {
  SessionTrace trace;
  trace.utterance_id = utt.id;
  trace.total_packets = utt.stream.size();

  const auto langs = schedule.languages();
  SessionState state(utt.stream.size(), langs);

  auto fail = [&](const std::string& reason) {
    trace.failed = true;
    trace.failure_reason = reason;
    for (const auto& [lang, ls] : state.languages())
      trace.languages[lang] = ls;
  };

  if (langs.empty()) {
    fail("schedule has no languages");
    return trace;
  }
  if (utt.stream.size() == 0) {
    fail("empty source stream");
    return trace;
  }
  for (const auto& lang : langs) {
    if (!agent.supports(lang)) {
      fail("agent does not support language " + lang);
      return trace;
    }
  }

  try {
    agent.begin_session(SessionInfo{utt.id, schedule, q});
    int step = 0;
    while (!state.all_finished()) {
      const auto actions = next_actions(state, schedule);
      if (actions.empty())
        throw ProtocolError("scheduler produced no actions before finish");
      for (const Action& action : actions) {
        switch (action.kind) {
          case ActionKind::kRead: {
            state.advance(action);
            trace.events.push_back({step, action, ""});
            agent.on_source(utt.stream.packet(state.packets_read()));
            break;
          }
          case ActionKind::kWrite: {
            const auto token = agent.write(action.lang, action.slot);
            if (token.has_value()) {
              if (token->empty() ||
                  token->find_first_of(" \t\n") != std::string::npos)
                throw ProtocolError("agent emitted invalid token for " +
                                    action.lang);
              state.advance(action, *token);
              trace.events.push_back({step, action, *token});
            } else {
              const Action finish = Action::finish(action.lang);
              state.advance(finish);
              trace.events.push_back({step, finish, ""});
            }
            break;
          }
          case ActionKind::kFinish: {  // length cap
            state.advance(action);
            state.mark_truncated(action.lang);
            trace.events.push_back({step, action, ""});
            break;
          }
        }
      }
      ++step;
    }
    agent.end_session();
  } catch (const ProtocolError& e) {
    fail(e.what());
    try {
      agent.end_session();
    } catch (...) {
    }
    return trace;
  }

  for (const auto& [lang, ls] : state.languages()) trace.languages[lang] = ls;
  return trace;
}

}  // namespace simulstream
