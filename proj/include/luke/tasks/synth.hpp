// Rule-governed task datasets over the synthetic world. Every label is a
// fixed function of entity identities, so the generating rule itself is a
// perfect classifier (see rule_predict).
//
//   typing      types(e) = set bits of hash(e, 2) in [0, 4), never empty
//   relation    b(h) + 2 b(t) with b(e) = hash(e, 3) % 2; 0 is no_relation
//   ner         type(e) = hash(e, 4) % 3 for every mention
//   cloze       the passage candidate preceded by a marker word
//   extractive  the name span of the passage mention preceded by a marker
#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "luke/synth/world.hpp"
#include "luke/tasks/example.hpp"

namespace luke::tasks {

inline constexpr std::size_t kSynthTypes = 4;
inline constexpr std::size_t kSynthRelations = 4;
inline constexpr std::size_t kSynthNerTypes = 3;
inline constexpr int kSynthCandidates = 3;
inline const std::string kPlaceholder = "@placeholder";

inline std::vector<int> synth_types(int e) {
  const std::uint64_t h = synth::entity_hash(e, 2);
  std::vector<int> out;
  for (int k = 0; k < static_cast<int>(kSynthTypes); ++k) {
    if ((h >> k) & 1U) out.push_back(k);
  }
  if (out.empty()) out.push_back(static_cast<int>((h >> 8) % kSynthTypes));
  return out;
}

inline int synth_relation(int head, int tail) {
  const auto b = [](int e) { return static_cast<int>(synth::entity_hash(e, 3) % 2); };
  return b(head) + 2 * b(tail);
}

inline int synth_ner_type(int e) { return static_cast<int>(synth::entity_hash(e, 4) % kSynthNerTypes); }

inline TaskSpec synth_spec(Variant v) {
  TaskSpec s;
  s.variant = v;
  switch (v) {
    case Variant::kTyping: s.num_labels = kSynthTypes; break;
    case Variant::kRelation: s.num_labels = kSynthRelations; break;
    case Variant::kNer: s.num_labels = kSynthNerTypes; break;
    default: s.num_labels = 1; break;
  }
  return s;
}

namespace detail {

inline std::mt19937_64 example_rng(std::uint64_t seed, Variant v, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(v), 0x7461736bU};
  return std::mt19937_64(seq);
}

inline Span span_of(const corpus::Annotation& a) { return {a.start, a.end}; }

// Passage of distinct candidates "name attrs ." with the marker of the
// answer's bucket placed right before the answer's name.
struct Passage {
  std::vector<std::string> words;
  std::vector<TaskEntity> mentions;
  std::vector<int> entities;
  int answer = 0;
};

inline Passage make_passage(const synth::World& world, std::mt19937_64& rng) {
  Passage p;
  std::uniform_int_distribution<int> pick(0, world.size() - 1);
  while (static_cast<int>(p.entities.size()) < kSynthCandidates) {
    const int e = pick(rng);
    if (std::find(p.entities.begin(), p.entities.end(), e) == p.entities.end()) p.entities.push_back(e);
  }
  p.answer = std::uniform_int_distribution<int>(0, kSynthCandidates - 1)(rng);
  for (int i = 0; i < kSynthCandidates; ++i) {
    const int e = p.entities[i];
    if (i == p.answer) p.words.push_back(synth::World::marker(synth::World::bucket(e)));
    const int start = static_cast<int>(p.words.size());
    for (const auto& w : world.name(e)) p.words.push_back(w);
    p.mentions.push_back({world.title(e), Segment::kText, {start, static_cast<int>(p.words.size())}});
    for (const auto& w : world.attributes(e)) p.words.push_back(w);
    p.words.push_back(".");
  }
  return p;
}

}  // namespace detail

inline TaskExample synth_example(const synth::World& world, Variant v, std::uint64_t seed, std::size_t index) {
  auto rng = detail::example_rng(seed, v, index);
  TaskExample ex;
  ex.id = to_string(v) + "-" + std::to_string(seed) + "-" + std::to_string(index);
  ex.variant = v;
  ex.has_gold = true;
  if (v == Variant::kCloze || v == Variant::kExtractive) {
    detail::Passage p = detail::make_passage(world, rng);
    const std::string mark = synth::World::marker(synth::World::bucket(p.entities[p.answer]));
    ex.words = p.words;
    if (v == Variant::kCloze) {
      ex.question = {kPlaceholder, mark, "."};
      ex.placeholder = 0;
      ex.entities = p.mentions;
      ex.answers = {p.answer};
    } else {
      ex.question = {"which", mark, "?"};
      ex.entities = p.mentions;
      ex.answer = p.mentions[p.answer].span;
    }
    return ex;
  }
  auto [h, t] = world.draw_pair(rng);
  synth::Sentence s = world.sentence(h, t);
  ex.words = s.words;
  const Span hs = detail::span_of(s.annotations[0]), ts = detail::span_of(s.annotations[1]);
  switch (v) {
    case Variant::kTyping: {
      const bool tail = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
      const int e = tail ? t : h;
      ex.entities = {{world.title(e), Segment::kText, tail ? ts : hs}};
      ex.types = synth_types(e);
      break;
    }
    case Variant::kRelation:
      ex.entities = {{world.title(h), Segment::kText, hs}, {world.title(t), Segment::kText, ts}};
      ex.relation = synth_relation(h, t);
      break;
    case Variant::kNer:
      ex.spans = {{hs, synth_ner_type(h)}, {ts, synth_ner_type(t)}};
      break;
    default:
      break;
  }
  return ex;
}

inline std::vector<TaskExample> synth_generate(const synth::World& world, Variant v, std::uint64_t seed,
                                               std::size_t size) {
  std::vector<TaskExample> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) out.push_back(synth_example(world, v, seed, i));
  return out;
}

// Applies the generating rule to the example's words alone (gold fields are
// not read), recovering entities from their name words.
inline Prediction rule_predict(const synth::World& world, const TaskExample& ex) {
  std::map<std::string, int> first_name;
  for (int e = 0; e < world.size(); ++e) first_name[world.name(e)[0]] = e;
  auto entity_at = [&](const std::vector<std::string>& words, int i) {
    auto it = first_name.find(words.at(i));
    return it == first_name.end() ? -1 : it->second;
  };
  auto is_marker = [](const std::string& w) { return w.size() == 2 && w[0] == 'k'; };
  Prediction p;
  p.example_id = ex.id;
  switch (ex.variant) {
    case Variant::kTyping:
      p.labels = synth_types(entity_at(ex.words, ex.entities.at(0).span.start));
      break;
    case Variant::kRelation:
      p.labels = {synth_relation(entity_at(ex.words, ex.entities.at(0).span.start),
                                 entity_at(ex.words, ex.entities.at(1).span.start))};
      break;
    case Variant::kNer:
      for (int i = 0; i < static_cast<int>(ex.words.size()); ++i) {
        const int e = entity_at(ex.words, i);
        if (e < 0) continue;
        const int len = static_cast<int>(world.name(e).size());
        p.spans.push_back({{i, i + len}, synth_ner_type(e)});
        i += len - 1;
      }
      break;
    case Variant::kCloze:
      p.labels = {-1};
      for (std::size_t j = 0; j < ex.entities.size(); ++j) {
        const int s = ex.entities[j].span.start;
        if (s > 0 && is_marker(ex.words[s - 1])) p.labels = {static_cast<int>(j)};
      }
      break;
    case Variant::kExtractive:
      for (int i = 1; i < static_cast<int>(ex.words.size()); ++i) {
        if (!is_marker(ex.words[i - 1])) continue;
        const int e = entity_at(ex.words, i);
        if (e >= 0) p.answer = {i, i + static_cast<int>(world.name(e).size())};
      }
      break;
  }
  return p;
}

}  // namespace luke::tasks
