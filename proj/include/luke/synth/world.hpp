// A small closed world of entities with deterministic surface forms, used to
// generate memorizable pretraining corpora and rule-governed task datasets.
//
// Every entity e has 1-2 unique name words, two unique attribute words and a
// bucket in [0, 4). A sentence about (head, tail) reads
//   name(h) attrs(h) connector(b(h), b(t)) name(t) attrs(t) marker(b(h)) .
// so every word is a function of the entity pair.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "luke/corpus/document.hpp"

namespace luke::synth {

inline constexpr int kBuckets = 4;

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Hash of (entity, salt); different salts give independent-looking rules.
inline std::uint64_t entity_hash(int entity, std::uint64_t salt) {
  return mix(mix(static_cast<std::uint64_t>(entity)) ^ (salt * 0x2545f4914f6cdd1dULL));
}

struct Span {
  int start = 0;
  int end = 0;  // exclusive
};

struct Sentence {
  std::vector<std::string> words;
  std::vector<corpus::Annotation> annotations;
  // Entity index per annotation.
  std::vector<int> entities;
};

class World {
 public:
  explicit World(int num_entities = 48) : n_(num_entities) {
    for (int e = 0; e < n_; ++e) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "E%02d", e);
      titles_.push_back(buf);
      std::vector<std::string> name = {"n" + std::to_string(e)};
      if (e % 2 == 1) name.push_back("m" + std::to_string(e));
      names_.push_back(name);
      attributes_.push_back({"a" + std::to_string(e), "b" + std::to_string(e)});
    }
  }

  int size() const { return n_; }
  const std::string& title(int e) const { return titles_.at(e); }
  const std::vector<std::string>& name(int e) const { return names_.at(e); }
  const std::array<std::string, 2>& attributes(int e) const { return attributes_.at(e); }

  static int bucket(int e) { return static_cast<int>(entity_hash(e, 1) % kBuckets); }
  static std::string connector(int b_head, int b_tail) {
    return "c" + std::to_string(b_head) + std::to_string(b_tail);
  }
  static std::string marker(int b) { return "k" + std::to_string(b); }

  int entity_of(const std::string& title) const {
    for (int e = 0; e < n_; ++e) {
      if (titles_[e] == title) return e;
    }
    return -1;
  }

  // Appends name(e) and attrs(e) to `s`, annotating the name span.
  void mention(Sentence& s, int e) const {
    const int start = static_cast<int>(s.words.size());
    for (const auto& w : names_[e]) s.words.push_back(w);
    s.annotations.push_back({titles_[e], start, static_cast<int>(s.words.size())});
    s.entities.push_back(e);
    for (const auto& w : attributes_[e]) s.words.push_back(w);
  }

  Sentence sentence(int head, int tail) const {
    Sentence s;
    mention(s, head);
    s.words.push_back(connector(bucket(head), bucket(tail)));
    mention(s, tail);
    s.words.push_back(marker(bucket(head)));
    s.words.push_back(".");
    return s;
  }

  // Two distinct entities drawn uniformly.
  std::pair<int, int> draw_pair(std::mt19937_64& rng) const {
    std::uniform_int_distribution<int> pick(0, n_ - 1);
    const int h = pick(rng);
    int t = pick(rng);
    while (t == h) t = pick(rng);
    return {h, t};
  }

 private:
  int n_;
  std::vector<std::string> titles_;
  std::vector<std::vector<std::string>> names_;
  std::vector<std::array<std::string, 2>> attributes_;
};

// One-sentence documents. Every entity appears at least once when
// num_sentences >= world size / 2.
inline std::vector<corpus::AnnotatedDocument> make_corpus(const World& world,
                                                          std::size_t num_sentences,
                                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> order(world.size());
  for (int e = 0; e < world.size(); ++e) order[e] = e;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<corpus::AnnotatedDocument> docs;
  for (std::size_t i = 0; i < num_sentences; ++i) {
    auto [h, t] = world.draw_pair(rng);
    // The first pass over `order` guarantees coverage of every entity.
    const std::size_t cover = 2 * i;
    if (cover + 1 < order.size()) h = order[cover], t = order[cover + 1];
    Sentence s = world.sentence(h, t);
    docs.push_back({"s" + std::to_string(i), std::move(s.words), std::move(s.annotations)});
  }
  return docs;
}

}  // namespace luke::synth
