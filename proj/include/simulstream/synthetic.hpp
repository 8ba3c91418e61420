#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "simulstream/error.hpp"
#include "simulstream/manifest.hpp"
#include "simulstream/stream.hpp"

namespace simulstream {

// Multi-way aligned toy corpus. Every sentence is a sequence of source
// symbols; each symbol is rendered as frames_per_token frames whose values
// all equal the symbol's numeric code, so a packet's signature recovers the
// symbol when frames_per_token matches the packet size.
//
// Language j with shift s translates source position t+s into target
// position t through a seeded bijective dictionary. The source is padded
// with max(shift)+1 distinct end markers: the markers give every target
// position (and the end-of-sentence decision) an unambiguous source anchor.
struct SyntheticLanguage {
  int shift = 0;
  std::uint64_t dict_seed = 0;
};

struct SyntheticConfig {
  int vocab_size = 64;  // source dictionary size, excluding end markers
  int train_count = 200;
  int dev_count = 20;
  int test_count = 64;
  int min_len = 8;   // real source tokens per sentence
  int max_len = 14;
  std::map<std::string, SyntheticLanguage> languages;
  int frames_per_token = kDefaultPacketFrames;
  int frame_dim = kDefaultFrameDim;
  std::uint64_t seed = 1;

  void validate() const {
    if (vocab_size < 2)
      throw ConfigError("synthetic vocabulary too small for dictionaries");
    if (languages.empty())
      throw ConfigError("synthetic corpus needs at least one language");
    for (const auto& [lang, spec] : languages) {
      if (spec.shift < 0)
        throw ConfigError("negative shift for language " + lang);
    }
    if (min_len < 1 || max_len < min_len)
      throw ConfigError("bad sentence length range");
    if (frames_per_token < 1 || frame_dim < 1)
      throw ConfigError("frames_per_token and frame_dim must be >= 1");
    if (train_count < 0 || dev_count < 0 || test_count < 0)
      throw ConfigError("negative sentence count");
  }

  int max_shift() const {
    int s = 0;
    for (const auto& [lang, spec] : languages) s = std::max(s, spec.shift);
    return s;
  }
};

struct SyntheticCorpus {
  Manifest train;
  Manifest dev;
  Manifest test;

  const Manifest& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "dev") return dev;
    if (name == "test") return test;
    throw ConfigError("unknown split " + name);
  }
};

namespace detail {

// Source symbol table: real symbols first, then end markers.
struct SymbolTable {
  std::vector<std::string> names;  // index -> source token string
  int real_count = 0;

  static SymbolTable make(int vocab_size, int marker_count) {
    SymbolTable t;
    t.real_count = vocab_size;
    for (int i = 0; i < vocab_size; ++i)
      t.names.push_back("s" + std::to_string(i));
    for (int i = 0; i < marker_count; ++i)
      t.names.push_back("sEND" + std::to_string(i + 1));
    return t;
  }

  // Numeric code written into the frames; 0 stays reserved.
  int code(int index) const { return index + 1; }
};

inline std::vector<std::string> make_dictionary(const SymbolTable& symbols,
                                                const std::string& tag,
                                                std::uint64_t seed) {
  std::vector<int> perm(symbols.names.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  std::mt19937_64 rng(seed);
  for (size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[rng() % i]);
  std::vector<std::string> dict(perm.size());
  for (size_t i = 0; i < perm.size(); ++i)
    dict[i] = tag + std::to_string(perm[i]);
  return dict;
}

}  // namespace detail

// Writes feature files and one manifest per split under out_dir. Everything
// is a pure function of the config, so equal configs give byte-identical
// corpora.
inline SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg,
                                          const std::filesystem::path& out_dir) {
  cfg.validate();
  const int markers = cfg.max_shift() + 1;
  const auto symbols = detail::SymbolTable::make(cfg.vocab_size, markers);

  std::map<std::string, std::vector<std::string>> dictionaries;
  for (const auto& [tag, spec] : cfg.languages)
    dictionaries[tag] =
        detail::make_dictionary(symbols, tag, cfg.seed ^ spec.dict_seed);

  std::filesystem::create_directories(out_dir / "features");

  std::mt19937_64 rng(cfg.seed);
  SyntheticCorpus corpus;
  const std::vector<std::pair<std::string, int>> splits = {
      {"train", cfg.train_count}, {"dev", cfg.dev_count},
      {"test", cfg.test_count}};

  for (const auto& [split_name, count] : splits) {
    Manifest m;
    m.split = split_name;
    m.base_dir = out_dir;
    for (const auto& [tag, spec] : cfg.languages) m.languages.push_back(tag);

    for (int idx = 0; idx < count; ++idx) {
      const int len =
          cfg.min_len + static_cast<int>(rng() % (cfg.max_len - cfg.min_len + 1));
      std::vector<int> sentence;  // symbol indices, markers appended
      sentence.reserve(len + markers);
      for (int t = 0; t < len; ++t)
        sentence.push_back(static_cast<int>(rng() % cfg.vocab_size));
      for (int i = 0; i < markers; ++i)
        sentence.push_back(cfg.vocab_size + i);

      char id_buf[32];
      std::snprintf(id_buf, sizeof(id_buf), "%s-%05d", split_name.c_str(), idx);
      ManifestRecord rec;
      rec.id = id_buf;
      rec.features = "features/" + rec.id + ".f32";
      rec.n_frames =
          static_cast<std::int64_t>(sentence.size()) * cfg.frames_per_token;

      std::vector<FrameVector> frames;
      frames.reserve(sentence.size() * cfg.frames_per_token);
      std::string transcript;
      for (size_t pos = 0; pos < sentence.size(); ++pos) {
        const float value = static_cast<float>(symbols.code(sentence[pos]));
        for (int f = 0; f < cfg.frames_per_token; ++f)
          frames.emplace_back(cfg.frame_dim, value);
        if (pos > 0) transcript += ' ';
        transcript += symbols.names[sentence[pos]];
      }
      rec.transcript = std::move(transcript);
      write_features(out_dir / rec.features, frames);

      for (const auto& [tag, spec] : cfg.languages) {
        const auto& dict = dictionaries.at(tag);
        std::string ref;
        for (int t = 1; t <= len; ++t) {
          if (t > 1) ref += ' ';
          ref += dict[sentence[t + spec.shift - 1]];
        }
        rec.refs.push_back(std::move(ref));
      }
      m.records.push_back(std::move(rec));
    }
    write_manifest(m, out_dir / ("manifest_" + split_name + ".tsv"));
    if (split_name == "train")
      corpus.train = std::move(m);
    else if (split_name == "dev")
      corpus.dev = std::move(m);
    else
      corpus.test = std::move(m);
  }
  return corpus;
}

}  // namespace simulstream
