#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "luke/corpus/dictionary.hpp"
#include "luke/corpus/document.hpp"
#include "luke/corpus/tokenizer.hpp"
#include "luke/corpus/vocabulary.hpp"
#include "luke/corpus/window.hpp"

namespace luke::corpus {
namespace {

namespace fs = std::filesystem;

fs::path write_temp(const std::string& name, const std::string& contents) {
  fs::path dir = fs::temp_directory_path() / "luke_corpus_test";
  fs::create_directories(dir);
  fs::path p = dir / name;
  std::ofstream(p) << contents;
  return p;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

TEST(Ingest, EmptyFileYieldsNoDocuments) {
  EXPECT_TRUE(ingest(write_temp("empty.jsonl", "").string()).empty());
}

TEST(Ingest, ThreeDocumentFixture) {
  auto path = write_temp("three.jsonl", R"({"id":"d1","words":["Paris","is","in","France"],"entities":[{"title":"France","start":3,"end":4},{"title":"Paris","start":0,"end":1}]}
{"id":"d2","words":["nothing","here"],"entities":[]}

{"id":"d3","words":["New","York","City"],"entities":[{"title":"New_York_City","start":0,"end":3}]}
)");
  auto docs = ingest(path.string());
  ASSERT_EQ(docs.size(), 3u);
  EXPECT_EQ(docs[0].annotations.size(), 2u);
  EXPECT_EQ(docs[1].annotations.size(), 0u);
  EXPECT_EQ(docs[2].annotations.size(), 1u);
  // Sorted by start on ingestion.
  EXPECT_EQ(docs[0].annotations[0].title, "Paris");
}

TEST(Ingest, SpanOutOfRangeNamesTheDocument) {
  auto path = write_temp("bad_span.jsonl",
                         R"({"id":"ok","words":["a"]}
{"id":"broken-doc","words":["a","b"],"entities":[{"title":"X","start":1,"end":3}]}
)");
  try {
    ingest(path.string());
    FAIL();
  } catch (const IngestError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("broken-doc"), std::string::npos) << e.what();
  }
}

TEST(Ingest, OverlappingAnnotationsRejected) {
  auto path = write_temp("overlap.jsonl",
                         R"({"id":"ov","words":["a","b","c"],"entities":[{"title":"X","start":0,"end":2},{"title":"Y","start":1,"end":3}]})");
  try {
    ingest(path.string());
    FAIL();
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("ov"), std::string::npos);
  }
}

TEST(Ingest, MalformedLineReportsLineNumber) {
  auto path = write_temp("malformed.jsonl", "{\"id\":\"a\",\"words\":[]}\n{not json\n");
  try {
    ingest(path.string());
    FAIL();
  } catch (const IngestError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Tokenizer, SplitsPunctuationAndLowercases) {
  EXPECT_EQ(tokenize("Hello, World! U.S."),
            (std::vector<std::string>{"hello", ",", "world", "!", "u", ".", "s", "."}));
}

AnnotatedDocument doc_with_entities(const std::string& id,
                                    const std::vector<std::pair<std::string, int>>& counts) {
  AnnotatedDocument d{id};
  for (const auto& [title, n] : counts) {
    for (int i = 0; i < n; ++i) {
      d.annotations.push_back({title, int(d.words.size()), int(d.words.size()) + 1});
      d.words.push_back("w");
    }
  }
  return d;
}

TEST(BuildVocab, EmptyCorpusHasOnlySpecials) {
  auto v = build_vocab(std::vector<AnnotatedDocument>{}, 100, 100);
  EXPECT_EQ(v.word_size(), 5u);
  EXPECT_EQ(v.entity_size(), 2u);
  EXPECT_EQ(v.word(Vocabulary::kCls), "[CLS]");
  EXPECT_EQ(v.entity(Vocabulary::kMaskEntity), "[MASK]");
  EXPECT_EQ(v.entity(Vocabulary::kUnkEntity), "[UNK]");
}

TEST(BuildVocab, EntityTieBreakIsLexicographic) {
  std::vector<AnnotatedDocument> docs = {doc_with_entities("a", {{"C", 3}, {"A", 5}}),
                                         doc_with_entities("b", {{"D", 1}, {"B", 3}})};
  auto v = build_vocab(docs, 10, 4);
  ASSERT_EQ(v.entity_size(), 4u);
  EXPECT_EQ(v.entity(2), "A");
  EXPECT_EQ(v.entity(3), "B");
  EXPECT_EQ(v.entity_id("C"), Vocabulary::kUnkEntity);
  EXPECT_EQ(v.entity_count(2), 5u);
}

TEST(BuildVocab, PaperScaleLimitsAccepted) {
  std::vector<AnnotatedDocument> docs = {doc_with_entities("a", {{"A", 2}})};
  auto v = build_vocab(docs, 50000, 500000);
  EXPECT_EQ(v.entity_size(), 3u);
  EXPECT_THROW(build_vocab(docs, 4, 2), ValidationError);
  EXPECT_THROW(build_vocab(docs, 5, 1), ValidationError);
}

std::vector<AnnotatedDocument> random_corpus(std::uint64_t seed, int docs) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> word(0, 30), len(1, 25), ent(0, 12);
  std::vector<AnnotatedDocument> out;
  for (int d = 0; d < docs; ++d) {
    AnnotatedDocument doc{"doc" + std::to_string(d)};
    int n = len(rng);
    for (int i = 0; i < n; ++i) doc.words.push_back("w" + std::to_string(word(rng)));
    for (int i = 0; i + 2 <= n; i += 3) {
      if (rng() % 2) doc.annotations.push_back({"E" + std::to_string(ent(rng)), i, i + 1 + int(rng() % 2)});
    }
    out.push_back(std::move(doc));
  }
  return out;
}

TEST(BuildVocab, PermutingDocumentsChangesNothing) {
  auto docs = random_corpus(5, 40);
  auto reference = build_vocab(docs, 20, 8);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(docs.begin(), docs.end(), rng);
    EXPECT_TRUE(build_vocab(docs, 20, 8) == reference);
  }
}

TEST(BuildVocab, IncludedEntitiesOutrankExcludedOnes) {
  auto docs = random_corpus(7, 60);
  VocabCounts counts;
  for (const auto& d : docs) counts.add(d);
  auto v = build_vocab(counts, 20, 6);
  std::uint64_t min_in = UINT64_MAX;
  for (std::size_t i = Vocabulary::kNumEntitySpecials; i < v.entity_size(); ++i) {
    min_in = std::min(min_in, v.entity_count(int(i)));
  }
  for (const auto& [title, c] : counts.entities) {
    if (!v.has_entity(title)) {
      EXPECT_LE(c, min_in) << title;
    }
  }
}

TEST(BuildVocab, JsonRoundTrip) {
  auto v = build_vocab(random_corpus(8, 10), 30, 10);
  EXPECT_TRUE(Vocabulary::from_json(v.to_json()) == v);
}

Vocabulary open_vocab(const std::vector<AnnotatedDocument>& docs) {
  return build_vocab(docs, 100000, 100000);
}

TEST(Window, ShortDocumentFitsOneWindow) {
  AnnotatedDocument doc{"short", split("a b c d e f g h i j"), {{"X", 2, 4}}};
  auto seqs = window(doc, open_vocab({doc}), 512);
  ASSERT_EQ(seqs.size(), 1u);
  EXPECT_EQ(seqs[0].word_ids.size(), 12u);
  EXPECT_EQ(seqs[0].word_ids.front(), Vocabulary::kCls);
  EXPECT_EQ(seqs[0].word_ids.back(), Vocabulary::kSep);
  ASSERT_EQ(seqs[0].entity_positions.size(), 1u);
  EXPECT_EQ(seqs[0].entity_positions[0], (std::vector<int>{3, 4}));
}

TEST(Window, AnnotationStraddlingBoundaryIsDropped) {
  AnnotatedDocument doc{"s"};
  for (int i = 0; i < 20; ++i) doc.words.push_back("w" + std::to_string(i));
  doc.annotations = {{"inside", 2, 4}, {"straddle", 13, 15}, {"second", 15, 17}};
  auto seqs = window(doc, open_vocab({doc}), 16);  // 14 words per window
  ASSERT_EQ(seqs.size(), 2u);
  EXPECT_EQ(seqs[0].entity_titles, std::vector<std::string>{"inside"});
  EXPECT_EQ(seqs[1].entity_titles, std::vector<std::string>{"second"});
  EXPECT_EQ(seqs[1].entity_positions[0], (std::vector<int>{2, 3}));
}

TEST(Window, LongDocumentRetentionMatchesBruteForce) {
  std::mt19937_64 rng(11);
  AnnotatedDocument doc{"long"};
  for (int i = 0; i < 1000; ++i) doc.words.push_back("t" + std::to_string(rng() % 50));
  for (int s = 0; s + 4 < 1000; s += 1 + int(rng() % 9)) {
    int len = 1 + int(rng() % 4);
    doc.annotations.push_back({"E" + std::to_string(rng() % 20), s, s + len});
    s += len;
  }
  validate_annotations(doc);
  auto vocab = open_vocab({doc});
  auto seqs = window(doc, vocab, 512);
  ASSERT_EQ(seqs.size(), 2u);
  EXPECT_EQ(seqs[0].word_ids.size(), 512u);
  EXPECT_EQ(seqs[1].word_ids.size(), 1000u - 510u + 2u);

  // Oracle: an annotation survives iff floor(start/510) == floor((end-1)/510).
  std::vector<std::pair<std::size_t, std::vector<int>>> expected;
  for (const auto& a : doc.annotations) {
    std::size_t w0 = a.start / 510, w1 = (a.end - 1) / 510;
    if (w0 != w1) continue;
    std::vector<int> pos;
    for (int p = a.start; p < a.end; ++p) pos.push_back(p - int(w0 * 510) + 1);
    expected.push_back({w0, pos});
  }
  std::vector<std::pair<std::size_t, std::vector<int>>> actual;
  for (const auto& s : seqs) {
    for (const auto& p : s.entity_positions) actual.push_back({s.window, p});
  }
  EXPECT_EQ(actual, expected);
}

TEST(Window, ConcatenatedWindowsReproduceTheDocument) {
  for (const auto& doc : random_corpus(13, 30)) {
    auto vocab = open_vocab({doc});
    std::vector<std::string> rebuilt;
    for (const auto& s : window(doc, vocab, 16)) {
      EXPECT_EQ(s.tokens.front(), "[CLS]");
      EXPECT_EQ(s.tokens.back(), "[SEP]");
      rebuilt.insert(rebuilt.end(), s.tokens.begin() + 1, s.tokens.end() - 1);
      for (std::size_t e = 0; e < s.entity_ids.size(); ++e) {
        EXPECT_GE(s.entity_ids[e], 0);
        EXPECT_LT(std::size_t(s.entity_ids[e]), vocab.entity_size());
        const auto& pos = s.entity_positions[e];
        for (std::size_t i = 0; i < pos.size(); ++i) {
          EXPECT_GE(pos[i], 1);
          EXPECT_LE(std::size_t(pos[i]), s.word_ids.size() - 2);
          if (i) {
            EXPECT_EQ(pos[i], pos[i - 1] + 1);
          }
        }
      }
    }
    EXPECT_EQ(rebuilt, doc.words);
  }
}

TEST(Window, OutOfVocabularyEntitiesBecomeUnk) {
  AnnotatedDocument doc{"d", split("a b c d"), {{"Rare", 0, 1}, {"Common", 2, 3}}};
  AnnotatedDocument other{"e", split("x"), {{"Common", 0, 1}}};
  auto vocab = build_vocab(std::vector<AnnotatedDocument>{doc, other}, 100, 3);
  auto seqs = window(doc, vocab, 16);
  EXPECT_EQ(seqs[0].entity_ids, (std::vector<int>{Vocabulary::kUnkEntity, 2}));
}

TEST(Dictionary, NameNeverSeenUnlinkedHasProbabilityOne) {
  std::vector<AnnotatedDocument> docs = {{"a", split("Tokyo is big"), {{"Tokyo", 0, 1}}}};
  auto dict = build_dictionary(docs);
  EXPECT_DOUBLE_EQ(dict.link_probability("tokyo"), 1.0);
}

TEST(Dictionary, OneLinkedNinetyNineUnlinked) {
  std::vector<AnnotatedDocument> docs = {{"a", split("the apple fell"), {{"Apple_Inc", 1, 2}}}};
  for (int i = 0; i < 99; ++i) docs.push_back({"u" + std::to_string(i), split("an apple a day"), {}});
  auto dict = build_dictionary(docs);
  EXPECT_DOUBLE_EQ(dict.link_probability("apple"), 0.01);
  const NameEntry* e = dict.find("apple");
  ASSERT_NE(e, nullptr);
  EXPECT_EQ(e->total_count, 100u);
  EXPECT_EQ(e->link_count(), 1u);
}

TEST(Dictionary, OccurrencesOfOneNameDoNotOverlap) {
  std::vector<AnnotatedDocument> docs = {{"a", split("la la la la la"), {{"Song", 1, 3}}}};
  auto dict = build_dictionary(docs);
  // linked [1,3), then unlinked [3,5); [0,2) overlaps the link.
  EXPECT_EQ(dict.find("la la")->total_count, 2u);
  EXPECT_LE(dict.link_probability("la la"), 1.0);
}

TEST(Dictionary, CountsMatchRecount) {
  auto docs = random_corpus(17, 40);
  auto dict = build_dictionary(docs);
  for (const auto& [name, entry] : dict.names()) {
    auto words = split(name);
    std::uint64_t links = 0;
    for (const auto& d : docs) {
      for (const auto& a : d.annotations) {
        if (join_words(d.words.begin() + a.start, d.words.begin() + a.end) == name) ++links;
      }
    }
    EXPECT_EQ(entry.link_count(), links) << name;
    EXPECT_GE(entry.total_count, entry.link_count());
    EXPECT_GE(entry.link_probability(), 0.0);
    EXPECT_LE(entry.link_probability(), 1.0);
  }
}

TEST(Dictionary, TsvRoundTrip) {
  auto dict = build_dictionary(random_corpus(19, 20));
  auto tsv = dict.to_tsv();
  EXPECT_EQ(EntityDictionary::from_tsv(tsv).to_tsv(), tsv);
  EXPECT_THROW(EntityDictionary::from_tsv("a\tb\t3\n"), IngestError);
  EXPECT_THROW(EntityDictionary::from_tsv("a\tb\t3\t2\n"), IngestError);
  EXPECT_THROW(EntityDictionary::from_tsv("a\tb\t-1\t2\n"), IngestError);
}

EntityDictionary always_linked(const std::vector<std::string>& names) {
  EntityDictionary d;
  for (const auto& n : names) {
    d.entry(n).links["x"] = 1;
    d.entry(n).total_count = 1;
  }
  return d;
}

TEST(Annotate, NameAbsentFromPageIsIgnored) {
  PageMapping page;
  add_page_link(page, {"Berlin"}, "Berlin");
  auto out = annotate(split("I like Paris"), page, always_linked({"berlin", "paris"}), 0.01);
  EXPECT_TRUE(out.empty());
}

TEST(Annotate, AmbiguousNameIsSkipped) {
  PageMapping page;
  add_page_link(page, {"Jordan"}, "Jordan_(country)");
  add_page_link(page, {"Jordan"}, "Michael_Jordan");
  add_page_link(page, {"Chicago"}, "Chicago");
  auto out = annotate(split("Jordan played in Chicago"), page,
                      always_linked({"jordan", "chicago"}), 0.01);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], (Annotation{"Chicago", 3, 4}));
}

TEST(Annotate, LongestMatchWins) {
  PageMapping page;
  add_page_link(page, split("New York"), "New_York");
  add_page_link(page, {"York"}, "York");
  auto out = annotate(split("she moved to New York and York"), page,
                      always_linked({"new york", "york"}), 0.01);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], (Annotation{"New_York", 3, 5}));
  EXPECT_EQ(out[1], (Annotation{"York", 6, 7}));
}

TEST(Annotate, ThresholdExcludesRarelyLinkedNames) {
  PageMapping page;
  add_page_link(page, {"the"}, "The_Band");
  add_page_link(page, {"beatles"}, "The_Beatles");
  EntityDictionary dict;
  dict.entry("the").links["The_Band"] = 1;
  dict.entry("the").total_count = 1000;
  dict.entry("beatles").links["The_Beatles"] = 5;
  dict.entry("beatles").total_count = 10;
  auto out = annotate(split("the beatles"), page, dict, 0.01);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].title, "The_Beatles");
  EXPECT_TRUE(annotate(split("the beatles"), page, dict, 1.0).empty());
  EXPECT_EQ(annotate(split("the beatles"), page, dict, 0.0).size(), 2u);
}

// Independent matcher: repeatedly take the longest, then leftmost, valid match
// that is disjoint from everything accepted so far.
std::vector<Annotation> exhaustive_annotate(const std::vector<std::string>& words,
                                            const PageMapping& page, const EntityDictionary& dict,
                                            double threshold) {
  std::vector<Annotation> accepted;
  std::vector<bool> used(words.size(), false);
  while (true) {
    std::optional<Annotation> best;
    for (int len = int(words.size()); len >= 1 && !best; --len) {
      for (int s = 0; s + len <= int(words.size()) && !best; ++s) {
        if (std::any_of(used.begin() + s, used.begin() + s + len, [](bool b) { return b; })) continue;
        std::string name;
        for (int i = s; i < s + len; ++i) name += (i > s ? " " : "") + normalize_word(words[i]);
        auto it = page.find(name);
        if (it == page.end() || it->second.size() != 1) continue;
        if (dict.link_probability(name) < threshold) continue;
        best = Annotation{*it->second.begin(), s, s + len};
      }
    }
    if (!best) break;
    std::fill(used.begin() + best->start, used.begin() + best->end, true);
    accepted.push_back(*best);
  }
  std::sort(accepted.begin(), accepted.end(),
            [](const Annotation& a, const Annotation& b) { return a.start < b.start; });
  return accepted;
}

TEST(Annotate, MatchesExhaustiveOracleOnRandomInstances) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    PageMapping page;
    EntityDictionary dict;
    for (int e = 0; e < 6; ++e) {
      std::vector<std::string> name;
      int len = 1 + int(rng() % 3);
      for (int i = 0; i < len; ++i) name.push_back("w" + std::to_string(rng() % 5));
      std::string title = "T" + std::to_string(rng() % 8);
      add_page_link(page, name, title);
      auto key = join_words(name.begin(), name.end());
      dict.entry(key).links[title] += 1;
      dict.entry(key).total_count += 1 + rng() % 150;
    }
    std::vector<std::string> words;
    for (int i = 0, n = 5 + int(rng() % 15); i < n; ++i) words.push_back("w" + std::to_string(rng() % 5));
    auto got = annotate(words, page, dict, 0.01);
    EXPECT_EQ(got, exhaustive_annotate(words, page, dict, 0.01)) << "trial " << trial;
    for (std::size_t i = 1; i < got.size(); ++i) EXPECT_LE(got[i - 1].end, got[i].start);
    for (const auto& a : got) {
      auto name = join_words(words.begin() + a.start, words.begin() + a.end);
      EXPECT_EQ(page.at(name).size(), 1u);
      EXPECT_GE(dict.link_probability(name), 0.01);
    }
  }
}

}  // namespace
}  // namespace luke::corpus
