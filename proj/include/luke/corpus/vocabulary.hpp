// Word and entity vocabularies ranked by corpus frequency.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "luke/corpus/document.hpp"
#include "luke/corpus/tokenizer.hpp"

namespace luke::corpus {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnkWord = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMaskWord = 4;
  static constexpr int kNumWordSpecials = 5;

  static constexpr int kUnkEntity = 0;
  static constexpr int kMaskEntity = 1;
  static constexpr int kNumEntitySpecials = 2;

  static const std::vector<std::string>& word_specials() {
    static const std::vector<std::string> s = {"[PAD]", "[UNK_WORD]", "[CLS]", "[SEP]",
                                               "[MASK_WORD]"};
    return s;
  }
  static const std::vector<std::string>& entity_specials() {
    static const std::vector<std::string> s = {"[UNK]", "[MASK]"};
    return s;
  }

  Vocabulary() {
    for (const auto& w : word_specials()) push_word(w, 0);
    for (const auto& e : entity_specials()) push_entity(e, 0);
  }

  std::size_t word_size() const { return words_.size(); }
  std::size_t entity_size() const { return entities_.size(); }

  const std::string& word(int id) const { return words_.at(id); }
  const std::string& entity(int id) const { return entities_.at(id); }
  std::uint64_t word_count(int id) const { return word_counts_.at(id); }
  std::uint64_t entity_count(int id) const { return entity_counts_.at(id); }

  // Lookup normalizes the word; unknown words map to [UNK_WORD].
  int word_id(std::string_view w) const {
    if (auto it = word_index_.find(std::string(w)); it != word_index_.end()) return it->second;
    auto it = word_index_.find(normalize_word(w));
    return it == word_index_.end() ? kUnkWord : it->second;
  }

  // Out-of-vocabulary titles map to [UNK].
  int entity_id(const std::string& title) const {
    auto it = entity_index_.find(title);
    return it == entity_index_.end() ? kUnkEntity : it->second;
  }

  bool has_entity(const std::string& title) const { return entity_index_.count(title) != 0; }

  // Appends an entity (e.g. a task-specific special) and returns its id.
  int add_entity(const std::string& title, std::uint64_t count = 0) {
    if (auto it = entity_index_.find(title); it != entity_index_.end()) return it->second;
    push_entity(title, count);
    return static_cast<int>(entities_.size()) - 1;
  }

  void push_word(const std::string& w, std::uint64_t count) {
    word_index_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
    word_counts_.push_back(count);
  }
  void push_entity(const std::string& e, std::uint64_t count) {
    entity_index_.emplace(e, static_cast<int>(entities_.size()));
    entities_.push_back(e);
    entity_counts_.push_back(count);
  }

  nlohmann::json to_json() const {
    nlohmann::json words = nlohmann::json::array(), entities = nlohmann::json::array();
    for (std::size_t i = 0; i < words_.size(); ++i) words.push_back({words_[i], word_counts_[i]});
    for (std::size_t i = 0; i < entities_.size(); ++i) {
      entities.push_back({entities_[i], entity_counts_[i]});
    }
    return {{"words", words}, {"entities", entities}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    v.words_.clear(); v.word_counts_.clear(); v.word_index_.clear();
    v.entities_.clear(); v.entity_counts_.clear(); v.entity_index_.clear();
    for (const auto& w : j.at("words")) v.push_word(w.at(0).get<std::string>(), w.at(1).get<std::uint64_t>());
    for (const auto& e : j.at("entities")) {
      v.push_entity(e.at(0).get<std::string>(), e.at(1).get<std::uint64_t>());
    }
    const auto& ws = word_specials();
    const auto& es = entity_specials();
    for (std::size_t i = 0; i < ws.size(); ++i) {
      if (i >= v.words_.size() || v.words_[i] != ws[i]) {
        throw ValidationError("vocabulary: word specials missing or out of order");
      }
    }
    for (std::size_t i = 0; i < es.size(); ++i) {
      if (i >= v.entities_.size() || v.entities_[i] != es[i]) {
        throw ValidationError("vocabulary: entity specials missing or out of order");
      }
    }
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_ && a.entities_ == b.entities_ &&
           a.word_counts_ == b.word_counts_ && a.entity_counts_ == b.entity_counts_;
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::uint64_t> word_counts_;
  std::unordered_map<std::string, int> word_index_;
  std::vector<std::string> entities_;
  std::vector<std::uint64_t> entity_counts_;
  std::unordered_map<std::string, int> entity_index_;
};

namespace detail {

// Top `limit` keys by count descending, ties broken lexicographically.
inline std::vector<std::pair<std::string, std::uint64_t>> top_by_count(
    const std::map<std::string, std::uint64_t>& counts, std::size_t limit) {
  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > limit) ranked.resize(limit);
  return ranked;
}

}  // namespace detail

struct VocabCounts {
  std::map<std::string, std::uint64_t> words;
  std::map<std::string, std::uint64_t> entities;

  void add(const AnnotatedDocument& doc) {
    for (const auto& w : doc.words) ++words[normalize_word(w)];
    for (const auto& a : doc.annotations) ++entities[a.title];
  }
};

// Keeps the word_limit - 5 most frequent words and entity_limit - 2 most
// frequent entities (ties lexicographic) after the fixed specials.
inline Vocabulary build_vocab(const VocabCounts& counts, std::size_t word_limit,
                              std::size_t entity_limit) {
  if (word_limit < static_cast<std::size_t>(Vocabulary::kNumWordSpecials)) {
    throw ValidationError("word vocabulary size must be at least 5");
  }
  if (entity_limit < static_cast<std::size_t>(Vocabulary::kNumEntitySpecials)) {
    throw ValidationError("entity vocabulary size must be at least 2");
  }
  Vocabulary vocab;
  auto specials = Vocabulary::word_specials();
  std::map<std::string, std::uint64_t> words = counts.words;
  for (const auto& s : specials) words.erase(s);
  for (const auto& [w, c] : detail::top_by_count(words, word_limit - Vocabulary::kNumWordSpecials)) {
    vocab.push_word(w, c);
  }
  std::map<std::string, std::uint64_t> entities = counts.entities;
  for (const auto& s : Vocabulary::entity_specials()) entities.erase(s);
  for (const auto& [e, c] :
       detail::top_by_count(entities, entity_limit - Vocabulary::kNumEntitySpecials)) {
    vocab.push_entity(e, c);
  }
  return vocab;
}

inline Vocabulary build_vocab(const std::vector<AnnotatedDocument>& docs, std::size_t word_limit,
                              std::size_t entity_limit) {
  VocabCounts counts;
  for (const auto& d : docs) counts.add(d);
  return build_vocab(counts, word_limit, entity_limit);
}

}  // namespace luke::corpus
