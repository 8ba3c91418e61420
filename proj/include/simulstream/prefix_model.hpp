#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "simulstream/error.hpp"
#include "simulstream/policy.hpp"
#include "simulstream/stream.hpp"
#include "simulstream/vocab.hpp"

namespace simulstream {

// How a model consumes the target-language identity.
enum class Conditioning {
  kAgnostic,  // ignores the language token (uniform/test models)
  kSeparate,  // per-language parameters, no language token in the context
  kUnified,   // shared parameters keyed by the prepended language token
};

inline std::string conditioning_name(Conditioning c) {
  switch (c) {
    case Conditioning::kAgnostic: return "agnostic";
    case Conditioning::kSeparate: return "separate";
    case Conditioning::kUnified: return "unified";
  }
  return "?";
}

// Everything a model may condition on when scoring target position `slot`:
// the emitted prefix and the first `visible_packets` packets, nothing else.
struct PrefixContext {
  const SourceStream* stream = nullptr;
  int visible_packets = 0;             // g(t)
  const std::vector<int>* prev_ids = nullptr;  // y_<t as vocab ids
  int lang_id = kPadId;                // language token id
  int slot = 1;                        // t, 1-based
};

class PrefixModel {
 public:
  virtual ~PrefixModel() = default;
  virtual const Vocabulary& vocab() const = 0;
  virtual Conditioning conditioning() const = 0;
  // p(. | context) over all vocabulary ids; sums to 1.
  virtual std::vector<double> distribution(const PrefixContext& ctx) const = 0;

  double token_prob(int token_id, const PrefixContext& ctx) const {
    const auto dist = distribution(ctx);
    if (token_id < 0 || token_id >= static_cast<int>(dist.size()))
      throw ConfigError("token id out of vocabulary range");
    return dist[token_id];
  }
};

class UniformModel : public PrefixModel {
 public:
  explicit UniformModel(std::shared_ptr<const Vocabulary> vocab)
      : vocab_(std::move(vocab)) {}

  const Vocabulary& vocab() const override { return *vocab_; }
  Conditioning conditioning() const override { return Conditioning::kAgnostic; }
  std::vector<double> distribution(const PrefixContext&) const override {
    return std::vector<double>(vocab_->size(), 1.0 / vocab_->size());
  }

 private:
  std::shared_ptr<const Vocabulary> vocab_;
};

namespace detail {

struct CountDist {
  std::map<int, std::int64_t> counts;
  std::int64_t total = 0;
  std::int64_t peak = 0;

  void add(int token_id) {
    std::int64_t& c = counts[token_id];
    ++c;
    ++total;
    peak = std::max(peak, c);
  }

  // A table entry is only predictive when one token holds a strict majority
  // of its observations; anything flatter backs off to uniform.
  bool trusted() const { return total > 0 && 2 * peak > total; }
};

// (language key, relative offset, packet signature). Language key is kPadId
// for separate/per-language models and the language token id for unified.
using OffsetKey = std::tuple<int, int, std::int64_t>;
// (language key, previous token id).
using PrevKey = std::pair<int, int>;

}  // namespace detail

// Count-based prefix model. For each target position t it keeps one table
// per relative source offset o (keyed by the signature of packet t+o, for
// t+o within the readable prefix) plus a previous-token table. Prediction
// picks the best-supported majority table for the current context and
// add-epsilon smooths it; contexts with no majority table back off to
// uniform over the vocabulary.
class CountPrefixModel : public PrefixModel {
 public:
  CountPrefixModel(std::shared_ptr<const Vocabulary> vocab,
                   Conditioning conditioning, double epsilon)
      : vocab_(std::move(vocab)), conditioning_(conditioning), eps_(epsilon) {
    if (conditioning_ == Conditioning::kAgnostic)
      throw ConfigError("count model must be separate or unified");
    if (eps_ < 0) throw ConfigError("smoothing epsilon must be >= 0");
  }

  const Vocabulary& vocab() const override { return *vocab_; }
  Conditioning conditioning() const override { return conditioning_; }
  double epsilon() const { return eps_; }

  // Training hook: one observed (context, next token) pair.
  void observe(int lang_id, const SourceStream& stream, int visible_packets,
               int prev_id, int slot, int target_id) {
    const int lang_key = table_lang_key(lang_id);
    for (int o = 0; slot + o <= visible_packets; ++o) {
      const std::int64_t sig = packet_signature(stream.packet(slot + o));
      offset_tables_[{lang_key, o, sig}].add(target_id);
    }
    prev_tables_[{lang_key, prev_id}].add(target_id);
  }

  std::vector<double> distribution(const PrefixContext& ctx) const override {
    const detail::CountDist* best = nullptr;
    const int lang_key = table_lang_key(ctx.lang_id);
    for (int o = 0; ctx.slot + o <= ctx.visible_packets; ++o) {
      const std::int64_t sig = packet_signature(ctx.stream->packet(ctx.slot + o));
      consider(find_offset(lang_key, o, sig), &best);
    }
    consider(find_prev(lang_key, prev_token_id(ctx)), &best);

    const size_t vsize = vocab_->size();
    if (best == nullptr)
      return std::vector<double>(vsize, 1.0 / vsize);
    std::vector<double> dist(vsize, 0.0);
    const double denom = static_cast<double>(best->total) + eps_ * vsize;
    for (size_t v = 0; v < vsize; ++v) {
      auto it = best->counts.find(static_cast<int>(v));
      const double c = it == best->counts.end()
                           ? 0.0
                           : static_cast<double>(it->second);
      dist[v] = (c + eps_) / denom;
    }
    return dist;
  }

  // The conditioning key for position 1: the language token for unified
  // models (the prepended token), PAD otherwise.
  int prev_token_id(const PrefixContext& ctx) const {
    if (ctx.slot == 1 || ctx.prev_ids == nullptr || ctx.prev_ids->empty())
      return conditioning_ == Conditioning::kUnified ? ctx.lang_id : kPadId;
    return ctx.prev_ids->back();
  }

  const std::map<detail::OffsetKey, detail::CountDist>& offset_tables() const {
    return offset_tables_;
  }
  const std::map<detail::PrevKey, detail::CountDist>& prev_tables() const {
    return prev_tables_;
  }

  void insert_offset_entry(int lang_key, int offset, std::int64_t sig,
                           detail::CountDist dist) {
    offset_tables_[{lang_key, offset, sig}] = std::move(dist);
  }
  void insert_prev_entry(int lang_key, int prev_id, detail::CountDist dist) {
    prev_tables_[{lang_key, prev_id}] = std::move(dist);
  }

  int table_lang_key(int lang_id) const {
    return conditioning_ == Conditioning::kUnified ? lang_id : kPadId;
  }

 private:
  const detail::CountDist* find_offset(int lang_key, int offset,
                                       std::int64_t sig) const {
    auto it = offset_tables_.find({lang_key, offset, sig});
    return it == offset_tables_.end() ? nullptr : &it->second;
  }
  const detail::CountDist* find_prev(int lang_key, int prev_id) const {
    auto it = prev_tables_.find({lang_key, prev_id});
    return it == prev_tables_.end() ? nullptr : &it->second;
  }

  // Keeps the majority table with the strongest evidence; earlier candidates
  // win ties, so offset order (then the prev table) is the tiebreak.
  static void consider(const detail::CountDist* candidate,
                       const detail::CountDist** best) {
    if (candidate == nullptr || !candidate->trusted()) return;
    if (*best == nullptr || candidate->peak > (*best)->peak ||
        (candidate->peak == (*best)->peak && candidate->total > (*best)->total))
      *best = candidate;
  }

  std::shared_ptr<const Vocabulary> vocab_;
  Conditioning conditioning_;
  double eps_;
  std::map<detail::OffsetKey, detail::CountDist> offset_tables_;
  std::map<detail::PrevKey, detail::CountDist> prev_tables_;
};

// A model bundle: either one decoder per language or a single unified
// decoder addressed by language token.
struct ModelSet {
  Conditioning variant = Conditioning::kSeparate;
  std::shared_ptr<const Vocabulary> vocabulary;
  std::map<std::string, int> k_per_lang;  // training-time k
  std::map<std::string, std::shared_ptr<PrefixModel>> separate;
  std::shared_ptr<PrefixModel> unified;

  const PrefixModel& model_for(const std::string& lang) const {
    if (variant == Conditioning::kUnified) {
      if (!unified) throw ConfigError("model set has no unified model");
      return *unified;
    }
    auto it = separate.find(lang);
    if (it == separate.end())
      throw ConfigError("model set has no decoder for language " + lang);
    return *it->second;
  }

  std::vector<std::string> languages() const {
    std::vector<std::string> out;
    for (const auto& [lang, k] : k_per_lang) out.push_back(lang);
    return out;
  }
};

namespace detail {

inline double nll_sum(const PrefixModel& model, const SourceStream& x,
                      const std::vector<std::string>& y, int k,
                      const std::string& lang) {
  if (y.empty()) throw ConfigError("prefix loss requires a nonempty target");
  if (k < 1) throw ConfigError("prefix loss requires k >= 1");
  const Vocabulary& vocab = model.vocab();
  const std::vector<int> y_ids = vocab.ids(y);
  const int lang_id = vocab.lang_token_id(lang);
  const int src_len = x.size();
  double nll = 0.0;
  std::vector<int> prev;
  prev.reserve(y_ids.size());
  for (int t = 1; t <= static_cast<int>(y_ids.size()); ++t) {
    PrefixContext ctx;
    ctx.stream = &x;
    ctx.visible_packets = g_of_t(k, t, src_len);
    ctx.prev_ids = &prev;
    ctx.lang_id = lang_id;
    ctx.slot = t;
    nll -= std::log(model.token_prob(y_ids[t - 1], ctx));
    prev.push_back(y_ids[t - 1]);
  }
  return nll;
}

}  // namespace detail

// Per-language prefix loss of the separate-decoder formulation:
// sum_t -log p(y_t | y_<t, x_1..g(t)).
inline double prefix_nll(const PrefixModel& model, const SourceStream& x,
                         const std::vector<std::string>& y, int k,
                         const std::string& lang) {
  if (model.conditioning() == Conditioning::kUnified)
    throw ConfigError("prefix_nll needs a separate-decoder model; use unified_nll");
  return detail::nll_sum(model, x, y, k, lang);
}

// Unified-model loss: the language token is prepended as conditioning; its
// own prediction is not part of the sum, so the term count stays |y|.
inline double unified_nll(const PrefixModel& model, const SourceStream& x,
                          const std::vector<std::string>& y, int k,
                          const std::string& lang) {
  if (model.conditioning() == Conditioning::kSeparate)
    throw ConfigError("unified_nll needs a unified model; use prefix_nll");
  return detail::nll_sum(model, x, y, k, lang);
}

namespace detail {

inline void check_language_sets(
    const ModelSet& models,
    const std::map<std::string, std::vector<std::string>>& y_map,
    const std::map<std::string, int>& k_map) {
  if (y_map.empty()) throw ConfigError("joint loss requires target languages");
  for (const auto& [lang, y] : y_map) {
    if (k_map.find(lang) == k_map.end())
      throw ConfigError("joint loss: no k for language " + lang);
    if (models.k_per_lang.find(lang) == models.k_per_lang.end())
      throw ConfigError("joint loss: model set lacks language " + lang);
  }
  if (k_map.size() != y_map.size())
    throw ConfigError("joint loss: language sets differ between y and k");
}

inline double per_language_loss(const ModelSet& models, const SourceStream& x,
                                const std::vector<std::string>& y, int k,
                                const std::string& lang) {
  if (models.variant == Conditioning::kUnified)
    return unified_nll(models.model_for(lang), x, y, k, lang);
  return prefix_nll(models.model_for(lang), x, y, k, lang);
}

}  // namespace detail

// Joint synchronous objective: the plain sum of per-language prefix losses
// under one shared k.
inline double joint_sync_loss(
    const ModelSet& models, const SourceStream& x,
    const std::map<std::string, std::vector<std::string>>& y_map, int k) {
  std::map<std::string, int> k_map;
  for (const auto& [lang, y] : y_map) k_map[lang] = k;
  detail::check_language_sets(models, y_map, k_map);
  double loss = 0.0;
  for (const auto& [lang, y] : y_map)
    loss += detail::per_language_loss(models, x, y, k, lang);
  return loss;
}

// Joint asynchronous objective: each language's conditioning follows its own
// k from k_map.
inline double joint_async_loss(
    const ModelSet& models, const SourceStream& x,
    const std::map<std::string, std::vector<std::string>>& y_map,
    const std::map<std::string, int>& k_map) {
  detail::check_language_sets(models, y_map, k_map);
  double loss = 0.0;
  for (const auto& [lang, y] : y_map)
    loss += detail::per_language_loss(models, x, y, k_map.at(lang), lang);
  return loss;
}

// Greedy next-token choice: argmax of the distribution, lowest id on ties.
inline int greedy_decode_next(const PrefixModel& model,
                              const PrefixContext& ctx) {
  const auto dist = model.distribution(ctx);
  int best = 0;
  for (int v = 1; v < static_cast<int>(dist.size()); ++v) {
    if (dist[v] > dist[best]) best = v;
  }
  return best;
}

// MLE training of the count model(s). Each language counts its reference
// positions (plus the terminal EOS slot used for decode termination) under
// its own wait-k conditioning.
inline ModelSet train_count_model(const std::vector<Utterance>& corpus,
                                  Conditioning variant,
                                  const std::map<std::string, int>& k_map,
                                  double epsilon, size_t vocab_cap = 8000) {
  if (corpus.empty()) throw DataError("train_count_model: empty corpus");
  if (variant == Conditioning::kAgnostic)
    throw ConfigError("train_count_model: variant must be separate or unified");
  for (const auto& [lang, k] : k_map) {
    if (k < 1) throw ConfigError("train_count_model: k must be >= 1 for " + lang);
  }

  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> tags;
  for (const auto& [lang, k] : k_map) tags.push_back(lang);
  for (const auto& utt : corpus)
    for (const auto& tag : tags) sentences.push_back(utt.reference(tag));
  auto vocab = std::make_shared<Vocabulary>(
      Vocabulary::build(sentences, tags, vocab_cap));

  ModelSet set;
  set.variant = variant;
  set.vocabulary = vocab;
  set.k_per_lang = k_map;
  std::map<std::string, std::shared_ptr<CountPrefixModel>> trained;
  if (variant == Conditioning::kUnified) {
    auto model = std::make_shared<CountPrefixModel>(vocab, variant, epsilon);
    set.unified = model;
    for (const auto& tag : tags) trained[tag] = model;
  } else {
    for (const auto& tag : tags) {
      auto model = std::make_shared<CountPrefixModel>(vocab, variant, epsilon);
      set.separate[tag] = model;
      trained[tag] = model;
    }
  }

  for (const auto& utt : corpus) {
    const int src_len = utt.stream.size();
    for (const auto& tag : tags) {
      CountPrefixModel& model = *trained.at(tag);
      const int lang_id = vocab->lang_token_id(tag);
      const std::vector<int> y_ids = vocab->ids(utt.reference(tag));
      const int k = k_map.at(tag);
      const int positions = static_cast<int>(y_ids.size()) + 1;  // + EOS
      for (int t = 1; t <= positions; ++t) {
        const int target = t <= static_cast<int>(y_ids.size())
                               ? y_ids[t - 1]
                               : kEosId;
        const int prev = t == 1 ? (variant == Conditioning::kUnified ? lang_id
                                                                     : kPadId)
                                : y_ids[t - 2];
        model.observe(lang_id, utt.stream, g_of_t(k, t, src_len), prev, t,
                      target);
      }
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Serialization: versioned text dump with deterministic key order.

inline void save_model(const ModelSet& set, std::ostream& out) {
  auto as_count = [](const PrefixModel* model) -> const CountPrefixModel& {
    const auto* count = dynamic_cast<const CountPrefixModel*>(model);
    if (count == nullptr)
      throw ConfigError("only count models can be serialized");
    return *count;
  };
  out << "simulstream-count-model 1\n";
  out << "variant " << conditioning_name(set.variant) << '\n';
  double eps = set.variant == Conditioning::kUnified
                   ? as_count(set.unified.get()).epsilon()
                   : as_count(set.separate.begin()->second.get()).epsilon();
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", eps);
  out << "epsilon " << buf << '\n';
  for (const auto& [lang, k] : set.k_per_lang)
    out << "k " << lang << ' ' << k << '\n';
  out << "vocab " << set.vocabulary->size() << '\n';
  for (const auto& tok : set.vocabulary->tokens()) out << tok << '\n';

  auto dump_model = [&out](const std::string& name,
                           const CountPrefixModel& model) {
    out << "decoder " << name << '\n';
    out << "offset_tables " << model.offset_tables().size() << '\n';
    for (const auto& [key, dist] : model.offset_tables()) {
      out << std::get<0>(key) << ' ' << std::get<1>(key) << ' '
          << std::get<2>(key) << ' ' << dist.counts.size();
      for (const auto& [tok, cnt] : dist.counts) out << ' ' << tok << ' ' << cnt;
      out << '\n';
    }
    out << "prev_tables " << model.prev_tables().size() << '\n';
    for (const auto& [key, dist] : model.prev_tables()) {
      out << key.first << ' ' << key.second << ' ' << dist.counts.size();
      for (const auto& [tok, cnt] : dist.counts) out << ' ' << tok << ' ' << cnt;
      out << '\n';
    }
  };

  if (set.variant == Conditioning::kUnified) {
    dump_model("*", as_count(set.unified.get()));
  } else {
    for (const auto& [lang, model] : set.separate)
      dump_model(lang, as_count(model.get()));
  }
  out << "end\n";
}

inline void save_model(const ModelSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file: " + path.string());
  save_model(set, out);
}

inline ModelSet load_model(std::istream& in) {
  auto fail = [](const std::string& why) -> ModelSet {
    throw DataError("model file: " + why);
  };
  std::string line;
  if (!std::getline(in, line) || line != "simulstream-count-model 1")
    return fail("bad magic/version line");

  ModelSet set;
  double epsilon = 0.0;
  if (!std::getline(in, line) || line.rfind("variant ", 0) != 0)
    return fail("missing variant");
  const std::string variant = line.substr(8);
  if (variant == "separate")
    set.variant = Conditioning::kSeparate;
  else if (variant == "unified")
    set.variant = Conditioning::kUnified;
  else
    return fail("unknown variant '" + variant + "'");
  if (!std::getline(in, line) || line.rfind("epsilon ", 0) != 0)
    return fail("missing epsilon");
  epsilon = std::stod(line.substr(8));

  while (std::getline(in, line) && line.rfind("k ", 0) == 0) {
    std::istringstream ls(line.substr(2));
    std::string lang;
    int k = 0;
    if (!(ls >> lang >> k)) return fail("bad k line");
    set.k_per_lang[lang] = k;
  }
  if (line.rfind("vocab ", 0) != 0) return fail("missing vocab");
  const size_t vocab_size = std::stoull(line.substr(6));
  std::vector<std::string> tokens;
  tokens.reserve(vocab_size);
  for (size_t i = 0; i < vocab_size; ++i) {
    if (!std::getline(in, line)) return fail("truncated vocab");
    tokens.push_back(line);
  }
  auto vocab =
      std::make_shared<Vocabulary>(Vocabulary::from_tokens(tokens));
  set.vocabulary = vocab;

  auto read_dist = [&fail](std::istringstream& ls) {
    detail::CountDist dist;
    size_t pairs = 0;
    if (!(ls >> pairs)) fail("bad table entry");
    for (size_t i = 0; i < pairs; ++i) {
      int tok = 0;
      std::int64_t cnt = 0;
      if (!(ls >> tok >> cnt)) fail("bad table entry");
      dist.counts[tok] = cnt;
      dist.total += cnt;
      dist.peak = std::max(dist.peak, cnt);
    }
    return dist;
  };

  if (!std::getline(in, line)) return fail("missing decoder section");
  while (line.rfind("decoder ", 0) == 0) {
    const std::string name = line.substr(8);
    auto model =
        std::make_shared<CountPrefixModel>(vocab, set.variant, epsilon);
    if (!std::getline(in, line) || line.rfind("offset_tables ", 0) != 0)
      return fail("missing offset_tables");
    size_t n = std::stoull(line.substr(14));
    for (size_t i = 0; i < n; ++i) {
      if (!std::getline(in, line)) return fail("truncated offset table");
      std::istringstream ls(line);
      int lang_key = 0, offset = 0;
      std::int64_t sig = 0;
      if (!(ls >> lang_key >> offset >> sig)) return fail("bad offset key");
      model->insert_offset_entry(lang_key, offset, sig, read_dist(ls));
    }
    if (!std::getline(in, line) || line.rfind("prev_tables ", 0) != 0)
      return fail("missing prev_tables");
    n = std::stoull(line.substr(12));
    for (size_t i = 0; i < n; ++i) {
      if (!std::getline(in, line)) return fail("truncated prev table");
      std::istringstream ls(line);
      int lang_key = 0, prev_id = 0;
      if (!(ls >> lang_key >> prev_id)) return fail("bad prev key");
      model->insert_prev_entry(lang_key, prev_id, read_dist(ls));
    }
    if (set.variant == Conditioning::kUnified)
      set.unified = model;
    else
      set.separate[name] = model;
    if (!std::getline(in, line)) return fail("missing end marker");
  }
  if (line != "end") return fail("missing end marker");
  if (set.variant == Conditioning::kUnified && !set.unified)
    return fail("unified model missing decoder");
  if (set.variant == Conditioning::kSeparate &&
      set.separate.size() != set.k_per_lang.size())
    return fail("separate model decoder count mismatch");
  return set;
}

inline ModelSet load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path.string());
  return load_model(in);
}

}  // namespace simulstream
