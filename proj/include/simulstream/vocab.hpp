#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "simulstream/error.hpp"

namespace simulstream {

constexpr int kPadId = 0;
constexpr int kEosId = 1;
constexpr int kUnkId = 2;

// Token table shared by all languages. Ids 0..2 are PAD/EOS/UNK, followed by
// one language token per target language, then corpus tokens by descending
// frequency (ties lexicographic) up to the size cap.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary build(
      const std::vector<std::vector<std::string>>& sentences,
      const std::vector<std::string>& lang_tags, size_t max_size = 8000) {
    Vocabulary v;
    v.add_reserved(lang_tags);
    std::map<std::string, std::int64_t> freq;
    for (const auto& sentence : sentences) {
      for (const auto& tok : sentence) {
        if (tok.empty()) throw DataError("vocabulary: empty token");
        if (v.token_to_id_.count(tok))
          throw DataError("vocabulary: reserved token '" + tok +
                          "' appears in corpus text");
        ++freq[tok];
      }
    }
    std::vector<std::pair<std::string, std::int64_t>> order(freq.begin(),
                                                            freq.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    for (const auto& [tok, count] : order) {
      if (v.size() >= max_size) break;
      v.add(tok);
    }
    return v;
  }

  // For deserialization: tokens listed in id order, reserved ones included.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const auto& tok : tokens) v.add(tok);
    if (v.size() < 3 || v.id_to_token_[kPadId] != "<pad>" ||
        v.id_to_token_[kEosId] != "</s>" || v.id_to_token_[kUnkId] != "<unk>")
      throw DataError("vocabulary: reserved tokens missing or misplaced");
    return v;
  }

  size_t size() const { return id_to_token_.size(); }

  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= static_cast<int>(id_to_token_.size()))
      throw DataError("vocabulary: id out of range: " + std::to_string(id));
    return id_to_token_[id];
  }

  int lang_token_id(const std::string& tag) const {
    auto it = token_to_id_.find("<2" + tag + ">");
    if (it == token_to_id_.end())
      throw ConfigError("vocabulary has no language token for " + tag);
    return it->second;
  }

  std::vector<int> ids(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& tok : tokens) out.push_back(id(tok));
    return out;
  }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  void add_reserved(const std::vector<std::string>& lang_tags) {
    add("<pad>");
    add("</s>");
    add("<unk>");
    std::vector<std::string> tags = lang_tags;
    std::sort(tags.begin(), tags.end());
    for (const auto& tag : tags) add("<2" + tag + ">");
  }

  void add(const std::string& token) {
    if (token_to_id_.count(token))
      throw DataError("vocabulary: duplicate token '" + token + "'");
    token_to_id_[token] = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(token);
  }

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

}  // namespace simulstream
