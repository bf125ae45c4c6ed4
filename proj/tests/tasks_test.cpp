#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "luke/pretrain/objective.hpp"
#include "luke/tasks/finetune.hpp"
#include "luke/tasks/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace luke::tasks {
namespace {

using test::exhaustive_oracle;
using test::greedy_oracle;
using test::random_span_predictions;

struct Fixture {
  synth::World world{12};
  Vocabulary vocab;
  ModelConfig config;
  ParamStore<double> pretrained;

  explicit Fixture(AttentionMode mode = AttentionMode::kOriginal) {
    auto docs = synth::make_corpus(world, 12, 1);
    vocab = corpus::build_vocab(docs, 1000, 1000);
    config.hidden_size = 8;
    config.num_layers = 2;
    config.num_heads = 2;
    config.head_size = 4;
    config.entity_embedding_size = 4;
    config.word_vocab_size = vocab.word_size();
    config.entity_vocab_size = vocab.entity_size();
    config.max_positions = 40;
    config.ffn_multiplier = 2;
    config.init_std = 0.3;
    config.attention_mode = mode;
    pretrained = pretrain::init_pretrain_model<double>(config, 3);
  }

  TaskModel<double> model(Variant v, AttentionMode mode = AttentionMode::kOriginal, bool entities = true) const {
    return init_task_model<double>(pretrained, config, synth_spec(v), mode, entities, 5);
  }

  TaskExample example(Variant v, std::size_t i = 0) const { return synth_example(world, v, 9, i); }
};

double row_dot(std::span<const double> a, const Tensor<double>& w, std::size_t col, std::size_t offset = 0) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * w(offset + i, col);
  return s;
}

void zero(TaskModel<double>& m, const std::string& prefix) {
  for (auto& [name, t] : m.params) {
    if (name.rfind(prefix, 0) == 0) t.fill(0.0);
  }
}

double loss_of(const TaskModel<double>& m, const TaskExample& ex, const Vocabulary& vocab) {
  Tape<double> tape(false);
  return task_loss(task_forward(tape, m, ex, vocab), ex, m.spec).value().item();
}

Tensor<double> logits_of(const TaskModel<double>& m, const TaskExample& ex, const Vocabulary& vocab) {
  Tape<double> tape(false);
  return task_forward(tape, m, ex, vocab).logits.value();
}

// ---------------------------------------------------------------------------

TEST(Typing, ZeroHeadGivesHalfProbabilitiesAndLogTwoLoss) {
  Fixture f;
  auto m = f.model(Variant::kTyping);
  zero(m, heads::kTyping);
  auto ex = f.example(Variant::kTyping);
  const auto logits = logits_of(m, ex, f.vocab);
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(loss_of(m, ex, f.vocab), std::log(2.0), 1e-15);
}

TEST(Typing, TwoTypeHeadMatchesHandArithmetic) {
  Fixture f;
  TaskSpec spec = synth_spec(Variant::kTyping);
  spec.num_labels = 2;
  auto m = init_task_model<double>(f.pretrained, f.config, spec, AttentionMode::kOriginal, true, 1);
  auto ex = f.example(Variant::kTyping);
  ex.types = {1};
  auto& w = m.params.at(heads::kTyping + ".weight");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * double(i % 5) - 0.2;
  m.params.at(heads::kTyping + ".bias") = Tensor<double>::vector({0.3, -0.4});
  Tape<double> tape(false);
  auto enc = model::encode(tape, m.params, m.config, build_input(ex, f.vocab, m).input);
  auto h = enc.entities.value().row(0);
  const auto logits = logits_of(m, ex, f.vocab);
  double z[2];
  for (int k = 0; k < 2; ++k) {
    z[k] = row_dot(h, w, k) + (k == 0 ? 0.3 : -0.4);
    EXPECT_NEAR(logits(0, k), z[k], 1e-12);
  }
  auto bce = [](double x, double y) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * y; };
  EXPECT_NEAR(loss_of(m, ex, f.vocab), (bce(z[0], 0) + bce(z[1], 1)) / 2, 1e-12);
}

TEST(Typing, TargetEntityCountValidated) {
  Fixture f;
  auto m = f.model(Variant::kTyping);
  auto ex = f.example(Variant::kTyping);
  ex.entities.clear();
  EXPECT_THROW(loss_of(m, ex, f.vocab), ValidationError);
  ex = f.example(Variant::kTyping);
  ex.entities.push_back(ex.entities[0]);
  EXPECT_THROW(loss_of(m, ex, f.vocab), ValidationError);
}

TEST(Typing, PredictsTypesWithPositiveLogit) {
  Fixture f;
  auto m = f.model(Variant::kTyping);
  zero(m, heads::kTyping);
  m.params.at(heads::kTyping + ".bias") = Tensor<double>::vector({1.0, -1.0, 0.0, 2.0});
  auto p = predict(m, f.example(Variant::kTyping), f.vocab);
  EXPECT_EQ(p.labels, (std::vector<int>{0, 3}));
}

// ---------------------------------------------------------------------------

TEST(Relation, SpecialEntitiesStartAsCopiesOfMask) {
  Fixture f;
  auto m = f.model(Variant::kRelation);
  const auto& b = m.params.at(model::names::kEntity);
  EXPECT_EQ(b.dim(0), f.config.entity_vocab_size + 2);
  EXPECT_EQ(m.config.entity_vocab_size, f.config.entity_vocab_size + 2);
  const auto mask = b.row(Vocabulary::kMaskEntity);
  for (int id : {m.head_entity, m.tail_entity}) {
    auto r = b.row(id);
    EXPECT_TRUE(std::equal(r.begin(), r.end(), mask.begin()));
  }
}

TEST(Relation, HeadTailOrderMatters) {
  Fixture f;
  auto m = f.model(Variant::kRelation);
  m.params.at(model::names::kEntityType) = test::random_tensor<double>({f.config.hidden_size}, 2);
  auto ex = f.example(Variant::kRelation);
  auto swapped = ex;
  std::swap(swapped.entities[0], swapped.entities[1]);
  const auto a = logits_of(m, ex, f.vocab), b = logits_of(m, swapped, f.vocab);
  EXPECT_NE(a, b);
}

TEST(Relation, ZeroHeadGivesLogNumRelations) {
  Fixture f;
  auto m = f.model(Variant::kRelation);
  zero(m, heads::kRelation);
  EXPECT_NEAR(loss_of(m, f.example(Variant::kRelation), f.vocab), std::log(double(kSynthRelations)), 1e-15);
}

TEST(Relation, ConcatenatedHeadMatchesHandArithmetic) {
  Fixture f;
  auto m = f.model(Variant::kRelation);
  auto ex = f.example(Variant::kRelation);
  Tape<double> tape(false);
  auto enc = model::encode(tape, m.params, m.config, build_input(ex, f.vocab, m).input);
  const auto& w = m.params.at(heads::kRelation + ".weight");
  const auto& bias = m.params.at(heads::kRelation + ".bias");
  const auto logits = logits_of(m, ex, f.vocab);
  const std::size_t d = f.config.hidden_size;
  for (std::size_t r = 0; r < kSynthRelations; ++r) {
    const double z = row_dot(enc.entities.value().row(0), w, r) + row_dot(enc.entities.value().row(1), w, r, d) + bias[r];
    EXPECT_NEAR(logits(0, r), z, 1e-12);
  }
}

TEST(Relation, MissingTailRejected) {
  Fixture f;
  auto m = f.model(Variant::kRelation);
  auto ex = f.example(Variant::kRelation);
  ex.entities.pop_back();
  EXPECT_THROW(loss_of(m, ex, f.vocab), ValidationError);
}

// ---------------------------------------------------------------------------

std::size_t brute_force_span_count(std::size_t n, std::size_t max_len) {
  std::size_t count = 0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t e = s; e < n; ++e) count += (e - s + 1 <= max_len) ? 1 : 0;
  }
  return count;
}

TEST(NerEnumerate, CountsAndOrder) {
  EXPECT_EQ(ner_enumerate(1, 16).size(), 1u);
  EXPECT_EQ(ner_enumerate(5, 16).size(), 15u);
  EXPECT_EQ(ner_enumerate(20, 16).size(), brute_force_span_count(20, 16));
  EXPECT_EQ(brute_force_span_count(20, 16), 200u);
  EXPECT_TRUE(ner_enumerate(0, 16).empty());
  EXPECT_THROW(ner_enumerate(3, 0), ValidationError);
  const auto spans = ner_enumerate(7, 3);
  EXPECT_TRUE(std::is_sorted(spans.begin(), spans.end()));
  for (const auto& s : spans) EXPECT_LE(s.length(), 3);
}

TEST(NerEnumerate, CountMatchesFormulaForManyLengths) {
  for (std::size_t n = 0; n <= 40; ++n) {
    for (std::size_t max_len : {1, 2, 5, 16}) {
      std::size_t formula = 0;
      for (std::size_t l = 1; l <= std::min(n, max_len); ++l) formula += n - l + 1;
      EXPECT_EQ(ner_enumerate(n, max_len).size(), formula) << n << " " << max_len;
      EXPECT_EQ(brute_force_span_count(n, max_len), formula);
    }
  }
}

TEST(Ner, ZeroHeadGivesLogTypesPlusOne) {
  Fixture f;
  auto m = f.model(Variant::kNer);
  zero(m, heads::kNer);
  EXPECT_NEAR(loss_of(m, f.example(Variant::kNer), f.vocab), std::log(double(kSynthNerTypes + 1)), 1e-15);
}

TEST(Ner, ClassifierInputIsFirstLastAndEntity) {
  Fixture f;
  auto m = f.model(Variant::kNer);
  auto ex = f.example(Variant::kNer);
  const auto spans = ner_enumerate(ex.words.size(), 16);
  BuiltInput b = build_ner_chunk(ex, f.vocab, spans);
  Tape<double> tape(false);
  auto enc = model::encode(tape, m.params, m.config, b.input);
  const auto& w = m.params.at(heads::kNer + ".weight");
  const auto& bias = m.params.at(heads::kNer + ".bias");
  EXPECT_EQ(w.dim(0), 3 * f.config.hidden_size);
  m.spec.ner_chunk_size = spans.size();
  const auto logits = logits_of(m, ex, f.vocab);
  ASSERT_EQ(logits.rows(), spans.size());
  const std::size_t d = f.config.hidden_size;
  for (std::size_t k : {std::size_t{0}, spans.size() / 2, spans.size() - 1}) {
    for (std::size_t t = 0; t <= kSynthNerTypes; ++t) {
      const double z = row_dot(enc.words.value().row(spans[k].start + 1), w, t) +
                       row_dot(enc.words.value().row(spans[k].end), w, t, d) +
                       row_dot(enc.entities.value().row(k), w, t, 2 * d) + bias[t];
      EXPECT_NEAR(logits(k, t), z, 1e-12);
    }
  }
}

TEST(Ner, WithoutEntityInputsUsesTwoWordRows) {
  Fixture f;
  auto m = f.model(Variant::kNer, AttentionMode::kOriginal, false);
  EXPECT_EQ(m.params.at(heads::kNer + ".weight").dim(0), 2 * f.config.hidden_size);
  auto ex = f.example(Variant::kNer);
  EXPECT_EQ(logits_of(m, ex, f.vocab).rows(), ner_enumerate(ex.words.size(), 16).size());
}

TEST(Ner, ChunkingCoversEveryCandidateOnce) {
  Fixture f;
  auto m = f.model(Variant::kNer, AttentionMode::kEntityAware);
  auto ex = f.example(Variant::kNer);
  const std::size_t n = ner_enumerate(ex.words.size(), 16).size();
  m.spec.ner_chunk_size = 7;
  Tape<double> tape(false);
  auto fwd = task_forward(tape, m, ex, f.vocab);
  EXPECT_EQ(fwd.logits.value().rows(), n);
  EXPECT_EQ(fwd.spans, ner_enumerate(ex.words.size(), 16));
  const auto chunks = ner_chunks(fwd.spans, 7);
  EXPECT_EQ(chunks.size(), (n + 6) / 7);
  // A chunk's rows equal a pass over that chunk alone.
  BuiltInput b = build_ner_chunk(ex, f.vocab, chunks[1]);
  auto enc = model::encode(tape, m.params, m.config, b.input);
  const auto& w = m.params.at(heads::kNer + ".weight");
  const double z = row_dot(enc.entities.value().row(0), w, 1, 2 * f.config.hidden_size) +
                   row_dot(enc.words.value().row(chunks[1][0].start + 1), w, 1) +
                   row_dot(enc.words.value().row(chunks[1][0].end), w, 1, f.config.hidden_size) +
                   m.params.at(heads::kNer + ".bias")[1];
  EXPECT_NEAR(fwd.logits.value()(7, 1), z, 1e-12);
}

TEST(Ner, GoldSpanLongerThanLimitRejected) {
  Fixture f;
  auto m = f.model(Variant::kNer);
  m.spec.max_span_length = 1;
  auto ex = f.example(Variant::kNer);
  ex.spans.push_back({{0, 3}, 0});
  EXPECT_THROW(loss_of(m, ex, f.vocab), ValidationError);
}

// ---------------------------------------------------------------------------

TEST(NerDecode, AllNonEntityGivesNothing) {
  std::vector<SpanPrediction> preds = {{{0, 1}, -1, 5.0}, {{0, 2}, -1, 3.0}};
  EXPECT_TRUE(ner_decode(preds).empty());
}

TEST(NerDecode, OverlapKeepsHigherLogit) {
  std::vector<SpanPrediction> preds = {{{0, 2}, 1, 2.0}, {{1, 3}, 0, 3.0}};
  auto out = ner_decode(preds);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].span, (Span{1, 3}));
  EXPECT_EQ(out[0].type, 0);
}

TEST(NerDecode, TiesPreferEarlierStartThenShorterSpan) {
  auto out = ner_decode({{{2, 4}, 0, 1.0}, {{1, 3}, 0, 1.0}, {{1, 2}, 1, 1.0}});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].span, (Span{1, 2}));
  EXPECT_EQ(out[1].span, (Span{2, 4}));
}

TEST(NerDecode, MatchesIndependentGreedyOracleOnRandomInstances) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    auto preds = random_span_predictions(rng);
    auto got = ner_decode(preds), want = greedy_oracle(preds);
    ASSERT_EQ(got.size(), want.size()) << trial;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].span, want[i].span);
      EXPECT_EQ(got[i].type, want[i].type);
    }
  }
}

TEST(NerDecode, OutputIsDisjointAndEveryRejectionIsJustified) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    auto preds = random_span_predictions(rng);
    auto out = ner_decode(preds);
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (std::size_t j = i + 1; j < out.size(); ++j) EXPECT_FALSE(out[i].span.overlaps(out[j].span));
    }
    for (const auto& p : preds) {
      if (p.type < 0) continue;
      const bool kept = std::any_of(out.begin(), out.end(), [&](const auto& a) { return a.span == p.span; });
      if (kept) continue;
      EXPECT_TRUE(std::any_of(out.begin(), out.end(),
                              [&](const auto& a) { return a.span.overlaps(p.span) && a.logit >= p.logit; }));
    }
  }
}

// ---------------------------------------------------------------------------

TEST(Cloze, SingleCandidateAlwaysPredicted) {
  Fixture f;
  auto m = f.model(Variant::kCloze);
  auto ex = f.example(Variant::kCloze);
  ex.entities.resize(1);
  ex.answers = {0};
  EXPECT_EQ(predict(m, ex, f.vocab).labels, (std::vector<int>{0}));
}

TEST(Cloze, RepeatedAnswerSpansAreAllPositive) {
  Fixture f;
  auto m = f.model(Variant::kCloze);
  auto ex = f.example(Variant::kCloze);
  ex.answers = {0, 2};
  Tape<double> tape(false);
  auto fwd = task_forward(tape, m, ex, f.vocab);
  const auto& z = fwd.logits.value();
  auto bce = [](double x, double y) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * y; };
  const double expect = (bce(z(0, 0), 1) + bce(z(1, 0), 0) + bce(z(2, 0), 1)) / 3;
  EXPECT_NEAR(task_loss(fwd, ex, m.spec).value().item(), expect, 1e-14);
}

TEST(Cloze, ScoreIsLinearOverMissingAndCandidate) {
  Fixture f;
  auto m = f.model(Variant::kCloze, AttentionMode::kEntityAware);
  auto ex = f.example(Variant::kCloze);
  BuiltInput b = build_input(ex, f.vocab, m);
  EXPECT_EQ(b.input.entity_positions[0], (std::vector<int>{1}));  // the placeholder word
  Tape<double> tape(false);
  auto enc = model::encode(tape, m.params, m.config, b.input);
  const auto& w = m.params.at(heads::kCloze + ".weight");
  const double bias = m.params.at(heads::kCloze + ".bias")[0];
  const auto logits = logits_of(m, ex, f.vocab);
  for (std::size_t i = 0; i < ex.entities.size(); ++i) {
    const double z = row_dot(enc.entities.value().row(0), w, 0) +
                     row_dot(enc.entities.value().row(i + 1), w, 0, f.config.hidden_size) + bias;
    EXPECT_NEAR(logits(i, 0), z, 1e-12);
  }
}

TEST(Cloze, NoCandidatesRejected) {
  Fixture f;
  auto m = f.model(Variant::kCloze);
  auto ex = f.example(Variant::kCloze);
  ex.entities.clear();
  ex.answers.clear();
  EXPECT_THROW(loss_of(m, ex, f.vocab), ValidationError);
}

TEST(Cloze, LossInvariantToCandidateOrder) {
  Fixture f;
  auto m = f.model(Variant::kCloze, AttentionMode::kEntityAware);
  auto ex = f.example(Variant::kCloze);
  auto perm = ex;
  std::vector<int> order = {2, 0, 1};
  for (std::size_t i = 0; i < order.size(); ++i) perm.entities[i] = ex.entities[order[i]];
  const int answer = ex.answers[0];
  perm.answers = {int(std::find(order.begin(), order.end(), answer) - order.begin())};
  EXPECT_NEAR(loss_of(m, ex, f.vocab), loss_of(m, perm, f.vocab), 1e-12);
}

TEST(Cloze, ArgmaxTieGoesToLowestIndex) {
  Fixture f;
  auto m = f.model(Variant::kCloze);
  zero(m, heads::kCloze);
  EXPECT_EQ(predict(m, f.example(Variant::kCloze), f.vocab).labels, (std::vector<int>{0}));
}

// ---------------------------------------------------------------------------

TEST(Extractive, ZeroHeadGivesTwiceLogSequenceLength) {
  Fixture f;
  auto m = f.model(Variant::kExtractive);
  zero(m, "task.");
  auto ex = f.example(Variant::kExtractive);
  const double len = double(ex.question.size() + ex.words.size() + 4);
  EXPECT_NEAR(loss_of(m, ex, f.vocab), 2 * std::log(len), 1e-13);
}

TEST(Extractive, LargeGoldMarginDrivesLossToZero) {
  Fixture f;
  auto ex = f.example(Variant::kExtractive);
  TaskForward<double> fwd;
  Tape<double> tape(false);
  const std::size_t m = ex.question.size() + ex.words.size() + 4;
  Tensor<double> start({1, m}), end({1, m});
  fwd.passage_begin = ex.question.size() + 3;
  fwd.passage_end = fwd.passage_begin + ex.words.size();
  start[fwd.passage_begin + ex.answer.start] = 1e4;
  end[fwd.passage_begin + ex.answer.end - 1] = 1e4;
  fwd.logits = tape.constant(start);
  fwd.end_logits = tape.constant(end);
  EXPECT_EQ(task_loss(fwd, ex, synth_spec(Variant::kExtractive)).value().item(), 0.0);
  auto p = decode(fwd, ex, synth_spec(Variant::kExtractive));
  EXPECT_EQ(p.answer, ex.answer);
}

TEST(Extractive, GoldOutsidePassageRejected) {
  Fixture f;
  auto m = f.model(Variant::kExtractive);
  auto ex = f.example(Variant::kExtractive);
  ex.answer = {0, int(ex.words.size()) + 1};
  EXPECT_THROW(loss_of(m, ex, f.vocab), ValidationError);
}

TEST(Extractive, EntitiesUseRealIds) {
  Fixture f;
  auto m = f.model(Variant::kExtractive);
  auto ex = f.example(Variant::kExtractive);
  auto b = build_input(ex, f.vocab, m);
  ASSERT_EQ(b.input.entity_ids.size(), ex.entities.size());
  for (std::size_t j = 0; j < ex.entities.size(); ++j) {
    EXPECT_EQ(b.input.entity_ids[j], f.vocab.has_entity(ex.entities[j].title)
                                         ? f.vocab.entity_id(ex.entities[j].title)
                                         : Vocabulary::kUnkEntity);
  }
}

TEST(ExtractiveDecode, MatchesExhaustivePairOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    auto x = test::random_extractive_instance(rng, trial % 2 == 0);
    auto got = extractive_decode(x.start, x.end, x.lo, x.hi, x.max_len);
    auto want = exhaustive_oracle(x.start, x.end, x.lo, x.hi, x.max_len);
    EXPECT_EQ(got.span, want.span) << trial;
    EXPECT_EQ(got.score, want.score);
  }
}

TEST(ExtractiveDecode, RejectsBadRegions) {
  std::vector<double> v(4, 0.0);
  EXPECT_THROW(extractive_decode(v, v, 2, 2, 30), ValidationError);
  EXPECT_THROW(extractive_decode(v, v, 0, 5, 30), ValidationError);
  EXPECT_THROW(extractive_decode(v, {0.0}, 0, 1, 30), DimensionError);
}

// ---------------------------------------------------------------------------

TEST(Metrics, TypingPartialSet) {
  TaskExample g;
  g.id = "a";
  g.variant = Variant::kTyping;
  g.has_gold = true;
  g.types = {0, 1};
  Prediction p;
  p.example_id = "a";
  p.labels = {0};
  auto s = evaluate({g}, {p}, Variant::kTyping);
  EXPECT_DOUBLE_EQ(s.counts.precision(), 1.0);
  EXPECT_DOUBLE_EQ(s.counts.recall(), 0.5);
  EXPECT_DOUBLE_EQ(s.counts.f1(), 2.0 / 3.0);
}

TEST(Metrics, ExtractiveTokenF1) {
  TaskExample g;
  g.id = "q";
  g.variant = Variant::kExtractive;
  g.has_gold = true;
  g.words = {"in", "New", "York", "City", "today"};
  g.answer = {1, 4};
  Prediction p;
  p.example_id = "q";
  p.answer = {1, 3};
  auto s = evaluate({g}, {p}, Variant::kExtractive);
  EXPECT_DOUBLE_EQ(s.token_f1, 0.8);
  EXPECT_EQ(s.exact_match, 0.0);
  EXPECT_DOUBLE_EQ(token_f1({"new", "york"}, {"new", "york", "city"}), 2 * 1.0 * (2.0 / 3) / (1.0 + 2.0 / 3));
}

TEST(Metrics, RelationExcludesNoRelation) {
  std::vector<TaskExample> gold(3);
  std::vector<Prediction> pred(3);
  const int g[3] = {0, 2, 3}, p[3] = {1, 2, 0};
  for (int i = 0; i < 3; ++i) {
    gold[i].id = pred[i].example_id = std::to_string(i);
    gold[i].has_gold = true;
    gold[i].variant = Variant::kRelation;
    gold[i].relation = g[i];
    pred[i].labels = {p[i]};
  }
  auto s = evaluate(gold, pred, Variant::kRelation);
  EXPECT_DOUBLE_EQ(s.counts.precision(), 0.5);
  EXPECT_DOUBLE_EQ(s.counts.recall(), 0.5);
}

TEST(Metrics, MisalignedOrUnlabelledRejected) {
  TaskExample g;
  g.id = "a";
  g.has_gold = true;
  Prediction p;
  p.example_id = "b";
  EXPECT_THROW(evaluate({g}, {p}, Variant::kTyping), ValidationError);
  p.example_id = "a";
  g.has_gold = false;
  EXPECT_THROW(evaluate({g}, {p}, Variant::kTyping), ValidationError);
  EXPECT_THROW(evaluate({g}, {}, Variant::kTyping), ValidationError);
}

class PerVariant : public ::testing::TestWithParam<Variant> {};

TEST_P(PerVariant, GeneratingRuleScoresPerfectly) {
  synth::World world;
  auto data = synth_generate(world, GetParam(), 4, 200);
  std::vector<Prediction> preds;
  for (const auto& ex : data) preds.push_back(rule_predict(world, ex));
  auto s = evaluate(data, preds, GetParam());
  EXPECT_EQ(s.primary(), 1.0);
  if (has_question(GetParam())) {
    EXPECT_EQ(s.token_f1, 1.0);
  } else {
    EXPECT_EQ(s.counts.precision(), 1.0);
    EXPECT_EQ(s.counts.recall(), 1.0);
  }
}

TEST_P(PerVariant, MetricsArePermutationInvariant) {
  synth::World world;
  auto data = synth_generate(world, GetParam(), 5, 60);
  std::vector<Prediction> preds;
  std::mt19937_64 rng(1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    // Rule answers for two thirds, another example's answer for the rest.
    preds.push_back(rule_predict(world, data[i % 3 == 0 ? (i + 1) % data.size() : i]));
    preds.back().example_id = data[i].id;
  }
  auto base = evaluate(data, preds, GetParam()).to_json();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<TaskExample> d2;
  std::vector<Prediction> p2;
  for (auto i : order) d2.push_back(data[i]), p2.push_back(preds[i]);
  auto shuffled = evaluate(d2, p2, GetParam()).to_json();
  for (const auto& [k, v] : base.items()) {
    if (v.is_number_float()) {
      EXPECT_NEAR(v.get<double>(), shuffled[k].get<double>(), 1e-12) << k;
    }
  }
}

TEST_P(PerVariant, SynthIsValidAndReproducible) {
  synth::World world;
  EXPECT_TRUE(synth_generate(world, GetParam(), 1, 0).empty());
  auto data = synth_generate(world, GetParam(), 6, 50);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_TRUE(example_problems(data[i], synth_spec(GetParam())).empty()) << data[i].id;
    EXPECT_EQ(to_json(synth_example(world, GetParam(), 6, i)), to_json(data[i]));
  }
  EXPECT_NE(to_json(synth_generate(world, GetParam(), 7, 1)[0])["words"],
            to_json(synth_generate(world, GetParam(), 6, 3)[2])["words"]);
}

TEST_P(PerVariant, JsonRoundTrip) {
  synth::World world;
  for (const auto& ex : synth_generate(world, GetParam(), 8, 10)) {
    const auto j = to_json(ex);
    EXPECT_EQ(to_json(parse_example(j)), j);
    const auto p = rule_predict(world, ex);
    EXPECT_EQ(to_json(parse_prediction(to_json(p, GetParam()), GetParam()), GetParam()), to_json(p, GetParam()));
  }
}

TEST_P(PerVariant, EntityAwareInitGivesBitwiseEqualLogits) {
  Fixture f;
  auto a = f.model(GetParam(), AttentionMode::kOriginal);
  auto b = f.model(GetParam(), AttentionMode::kEntityAware);
  for (std::size_t i = 0; i < 3; ++i) {
    auto ex = f.example(GetParam(), i);
    Tape<double> ta(false), tb(false);
    auto fa = task_forward(ta, a, ex, f.vocab), fb = task_forward(tb, b, ex, f.vocab);
    EXPECT_EQ(fa.logits.value(), fb.logits.value());
    if (GetParam() == Variant::kExtractive) {
      EXPECT_EQ(fa.end_logits.value(), fb.end_logits.value());
    }
  }
}

TEST_P(PerVariant, HeadGradientCheck) {
  Fixture f;
  auto m = f.model(GetParam(), AttentionMode::kEntityAware);
  std::vector<TaskExample> exs = {f.example(GetParam(), 0), f.example(GetParam(), 1)};
  GradCheckOptions opts;
  opts.include = [](const std::string& n) { return n.rfind("task.", 0) == 0 || n == model::names::kEntity; };
  opts.max_samples_per_param = 40;
  // Outlives each tape built by the check, which binds to its tensors.
  TaskModel<double> view = m;
  auto report = grad_check(
      [&](Tape<double>& tape, const ParamStore<double>& ps) {
        view.params = ps;
        Var<double> total = task_loss(task_forward(tape, view, exs[0], f.vocab), exs[0], m.spec);
        return add(total, task_loss(task_forward(tape, view, exs[1], f.vocab), exs[1], m.spec));
      },
      m.params, opts);
  EXPECT_TRUE(report.passed) << report.summary();
}

INSTANTIATE_TEST_SUITE_P(Tasks, PerVariant, ::testing::ValuesIn(all_variants()),
                         [](const auto& info) { return to_string(info.param); });

// ---------------------------------------------------------------------------

TEST(Finetune, LearnsAndRestoresBestParameters) {
  Fixture f;
  auto m = f.model(Variant::kRelation);
  auto train = synth_generate(f.world, Variant::kRelation, 1, 24);
  auto dev = synth_generate(f.world, Variant::kRelation, 2, 8);
  FinetuneOptions o;
  o.steps = 40;
  o.batch_size = 4;
  o.eval_interval = 10;
  o.peak_lr = 1e-2;
  std::vector<FinetuneRecord> log;
  auto r = finetune(m, train, dev, f.vocab, o, [&](const FinetuneRecord& rec) { log.push_back(rec); });
  ASSERT_FALSE(log.empty());
  EXPECT_LT(log.back().loss, log.front().loss);
  EXPECT_GE(r.best_metric, 0.0);
  EXPECT_EQ(evaluate_model(m, dev, f.vocab).primary(), r.best_metric);
}

TEST(Finetune, StopsAfterPatienceEvaluationsWithoutImprovement) {
  Fixture f;
  auto m = f.model(Variant::kTyping);
  auto train = synth_generate(f.world, Variant::kTyping, 1, 8);
  FinetuneOptions o;
  o.steps = 100;
  o.batch_size = 2;
  o.eval_interval = 1;
  o.patience = 2;
  o.peak_lr = 0.0;  // nothing changes, so only the first evaluation improves
  o.warmup_fraction = 0.0;
  auto r = finetune(m, train, train, f.vocab, o);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.steps_run, 3u);
  EXPECT_EQ(r.best_step, 1u);
}

TEST(Finetune, EpochsOverrideSteps) {
  FinetuneOptions o;
  o.epochs = 2.5;
  o.batch_size = 16;
  EXPECT_EQ(o.total_steps(100), 16u);
  o.epochs = -1;
  EXPECT_FALSE(o.problems().empty());
}

TEST(Finetune, EmptyDatasetsRejected) {
  Fixture f;
  auto m = f.model(Variant::kTyping);
  EXPECT_THROW(finetune(m, {}, {f.example(Variant::kTyping)}, f.vocab, {}), ValidationError);
  EXPECT_THROW(evaluate_model(m, {}, f.vocab), ValidationError);
}

TEST(Finetune, TaskCheckpointRoundTripsByteIdentically) {
  Fixture f;
  auto m = f.model(Variant::kRelation, AttentionMode::kEntityAware);
  const std::string bytes = serialize(to_checkpoint(m));
  auto back = task_model_from_checkpoint<double>(deserialize(bytes));
  EXPECT_EQ(serialize(to_checkpoint(back)), bytes);
  EXPECT_EQ(back.head_entity, m.head_entity);
  EXPECT_EQ(back.config.attention_mode, AttentionMode::kEntityAware);
  auto ex = f.example(Variant::kRelation);
  EXPECT_EQ(logits_of(back, ex, f.vocab), logits_of(m, ex, f.vocab));
}

}  // namespace
}  // namespace luke::tasks
