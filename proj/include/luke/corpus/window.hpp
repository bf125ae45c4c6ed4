// Splits documents into model-sized word windows with their entities.
#pragma once

#include <string>
#include <vector>

#include "luke/corpus/document.hpp"
#include "luke/corpus/vocabulary.hpp"

namespace luke::corpus {

struct TrainingSequence {
  std::string doc_id;
  std::size_t window = 0;
  // Includes [CLS] first and [SEP] last.
  std::vector<std::string> tokens;
  std::vector<int> word_ids;
  std::vector<std::string> entity_titles;
  std::vector<int> entity_ids;
  // Indices into word_ids (so [CLS] is position 0).
  std::vector<std::vector<int>> entity_positions;
};

// Cuts `doc` into consecutive windows of at most max_word_length - 2 words,
// each wrapped in [CLS] ... [SEP]. Annotations are kept only when the whole
// span falls inside one window.
inline std::vector<TrainingSequence> window(const AnnotatedDocument& doc, const Vocabulary& vocab,
                                            std::size_t max_word_length) {
  if (max_word_length < 16) throw ValidationError("max_word_length must be at least 16");
  const std::size_t body = max_word_length - 2;
  std::vector<TrainingSequence> out;
  const std::size_t n = doc.words.size();
  std::size_t ann = 0;
  for (std::size_t begin = 0, w = 0; begin < n; begin += body, ++w) {
    const std::size_t end = std::min(n, begin + body);
    TrainingSequence seq;
    seq.doc_id = doc.id;
    seq.window = w;
    seq.tokens.push_back(Vocabulary::word_specials()[Vocabulary::kCls]);
    seq.word_ids.push_back(Vocabulary::kCls);
    for (std::size_t i = begin; i < end; ++i) {
      seq.tokens.push_back(doc.words[i]);
      seq.word_ids.push_back(vocab.word_id(doc.words[i]));
    }
    seq.tokens.push_back(Vocabulary::word_specials()[Vocabulary::kSep]);
    seq.word_ids.push_back(Vocabulary::kSep);
    // Annotations are sorted and disjoint, so a single forward scan suffices.
    while (ann < doc.annotations.size() &&
           static_cast<std::size_t>(doc.annotations[ann].start) < end) {
      const auto& a = doc.annotations[ann];
      if (static_cast<std::size_t>(a.start) >= begin && static_cast<std::size_t>(a.end) <= end) {
        seq.entity_titles.push_back(a.title);
        seq.entity_ids.push_back(vocab.entity_id(a.title));
        std::vector<int> positions;
        for (int p = a.start; p < a.end; ++p) positions.push_back(p - static_cast<int>(begin) + 1);
        seq.entity_positions.push_back(std::move(positions));
      }
      ++ann;
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace luke::corpus
