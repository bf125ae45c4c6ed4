// Masked word and masked entity prediction.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "luke/corpus/vocabulary.hpp"
#include "luke/model/model.hpp"

namespace luke::pretrain {

using corpus::Vocabulary;
using model::EncoderInput;

// MLM head: dense + gelu + layer norm, output tied to the word embedding A.
// Entity head: W_h, b_h, layer norm, then T [D, H] and output tied to B.
template <typename T>
void add_heads(ParamStore<T>& p, const ModelConfig& c, std::uint64_t seed) {
  const double sd = c.init_std;
  model::add_linear(p, "mlm.dense", c.hidden_size, c.hidden_size, sd, seed);
  model::add_layer_norm(p, "mlm.ln", c.hidden_size);
  p.add("mlm.bias", Tensor<T>(Shape{c.word_vocab_size}));
  model::add_linear(p, "entity_head.dense", c.hidden_size, c.hidden_size, sd, seed);
  model::add_layer_norm(p, "entity_head.ln", c.hidden_size);
  p.add("entity_head.transform", model::normal_init<T>({c.hidden_size, c.entity_embedding_size},
                                                       sd, seed, "entity_head.transform"));
  p.add("entity_head.bias", Tensor<T>(Shape{c.entity_vocab_size}));
}

// Encoder plus both heads.
template <typename T>
ParamStore<T> init_pretrain_model(const ModelConfig& c, std::uint64_t seed) {
  ParamStore<T> p = model::init_encoder<T>(c, seed);
  add_heads(p, c, seed);
  return p;
}

// Rows of h [r, D] to word logits [r, V_w].
template <typename T>
Var<T> mlm_logits(Tape<T>& tape, const ParamStore<T>& p, Var<T> h) {
  Var<T> t = model::apply_layer_norm(tape, p, "mlm.ln", gelu(model::apply_linear(tape, p, "mlm.dense", h)));
  return add_bias(matmul_bt(t, p.bind(tape, model::names::kWord)), p.bind(tape, "mlm.bias"));
}

// Rows of h_e [r, D] to entity logits [r, V_e]: B (T m) + b_o with
// m = layer_norm(gelu(W_h h + b_h)).
template <typename T>
Var<T> entity_logits(Tape<T>& tape, const ParamStore<T>& p, Var<T> h) {
  Var<T> m = model::apply_layer_norm(tape, p, "entity_head.ln",
                                     gelu(model::apply_linear(tape, p, "entity_head.dense", h)));
  Var<T> projected = matmul(m, p.bind(tape, "entity_head.transform"));
  return add_bias(matmul_bt(projected, p.bind(tape, model::names::kEntity)),
                  p.bind(tape, "entity_head.bias"));
}

enum class WordAction : std::uint8_t { kMask, kRandom, kKeep };

struct MaskedWord {
  int position = 0;
  int gold = 0;
  WordAction action = WordAction::kMask;
  int replacement = 0;  // input id after masking
};

struct MaskedEntity {
  int index = 0;
  int gold = 0;
};

struct MaskingPlan {
  std::vector<MaskedWord> words;
  std::vector<MaskedEntity> entities;

  bool empty() const { return words.empty() && entities.empty(); }
};

struct MaskingOptions {
  double word_probability = 0.15;
  double entity_probability = 0.15;
  // 80% [MASK_WORD], 10% random word, 10% unchanged; otherwise always [MASK_WORD].
  bool word_split = true;
};

inline bool maskable_word(int id) {
  return id != Vocabulary::kPad && id != Vocabulary::kCls && id != Vocabulary::kSep &&
         id != Vocabulary::kMaskWord;
}

// Stream for one sequence in one epoch, so plans are reproducible from
// (seed, sequence id, epoch) regardless of visiting order.
inline std::mt19937_64 masking_rng(std::uint64_t seed, std::uint64_t sequence_id,
                                   std::uint64_t epoch = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(sequence_id),
                    static_cast<std::uint32_t>(sequence_id >> 32),
                    static_cast<std::uint32_t>(epoch), 0x6d61736bU};
  return std::mt19937_64(seq);
}

// Draw order is fixed: all words left to right, then all entities.
inline MaskingPlan make_masking_plan(const EncoderInput& in, std::mt19937_64& rng,
                                     const MaskingOptions& opt, std::size_t word_vocab_size) {
  MaskingPlan plan;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int first_real = Vocabulary::kNumWordSpecials;
  for (std::size_t i = 0; i < in.word_ids.size(); ++i) {
    const int id = in.word_ids[i];
    if (!maskable_word(id) || (!in.word_mask.empty() && !in.word_mask[i])) continue;
    if (!(u(rng) < opt.word_probability)) continue;
    MaskedWord w{static_cast<int>(i), id, WordAction::kMask, Vocabulary::kMaskWord};
    if (opt.word_split) {
      const double r = u(rng);
      if (r >= 0.9) {
        w.action = WordAction::kKeep;
        w.replacement = id;
      } else if (r >= 0.8 && static_cast<int>(word_vocab_size) > first_real) {
        w.action = WordAction::kRandom;
        std::uniform_int_distribution<int> pick(first_real, static_cast<int>(word_vocab_size) - 1);
        w.replacement = pick(rng);
      }
    }
    plan.words.push_back(w);
  }
  for (std::size_t j = 0; j < in.entity_ids.size(); ++j) {
    if (!in.entity_mask.empty() && !in.entity_mask[j]) continue;
    if (u(rng) < opt.entity_probability) plan.entities.push_back({static_cast<int>(j), in.entity_ids[j]});
  }
  return plan;
}

inline EncoderInput apply_plan(EncoderInput in, const MaskingPlan& plan) {
  for (const auto& w : plan.words) in.word_ids[w.position] = w.replacement;
  for (const auto& e : plan.entities) in.entity_ids[e.index] = Vocabulary::kMaskEntity;
  return in;
}

struct LossOptions {
  bool entity_loss = true;
};

template <typename T>
struct PretrainLoss {
  Var<T> total;
  double mlm = 0.0;
  double entity = 0.0;
  std::size_t mlm_count = 0;
  std::size_t entity_count = 0;
  std::size_t mlm_correct = 0;
  std::size_t entity_correct = 0;
  // No masked token contributed; total is the constant 0.
  bool degenerate = true;

  double mlm_accuracy() const { return mlm_count ? double(mlm_correct) / double(mlm_count) : 0.0; }
  double entity_accuracy() const {
    return entity_count ? double(entity_correct) / double(entity_count) : 0.0;
  }
};

namespace detail {

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, const std::vector<int>& gold) {
  std::size_t correct = 0;
  for (std::size_t r = 0; r < gold.size(); ++r) {
    auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    if (static_cast<int>(best) == gold[r]) ++correct;
  }
  return correct;
}

inline void check_gold(const std::vector<int>& gold, std::size_t vocab, const char* what) {
  for (int g : gold) {
    if (g < 0 || static_cast<std::size_t>(g) >= vocab) {
      throw ValidationError(std::string(what) + " gold id " + std::to_string(g) +
                            " outside the vocabulary");
    }
  }
}

}  // namespace detail

// Mean cross-entropy over the batch's masked words plus mean cross-entropy over
// its masked entities. Labels exist only at masked positions, so unmasked
// tokens never influence the loss. `inputs` are the unmasked sequences.
template <typename T>
PretrainLoss<T> pretrain_loss(Tape<T>& tape, const ParamStore<T>& p, const ModelConfig& c,
                              const std::vector<EncoderInput>& inputs,
                              const std::vector<MaskingPlan>& plans, const LossOptions& opt = {},
                              std::optional<std::uint64_t> dropout_seed = {}) {
  if (inputs.size() != plans.size()) throw ValidationError("one masking plan per sequence needed");
  const bool entity_term = opt.entity_loss && c.use_entity_inputs;
  PretrainLoss<T> out;
  std::vector<Var<T>> word_rows, entity_rows;
  std::vector<int> word_gold, entity_gold;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const MaskingPlan& plan = plans[s];
    const bool any_entity = entity_term && !plan.entities.empty();
    if (plan.words.empty() && !any_entity) continue;
    std::optional<std::uint64_t> seed;
    if (dropout_seed) seed = *dropout_seed + s;
    auto enc = model::encode(tape, p, c, apply_plan(inputs[s], plan), seed);
    if (!plan.words.empty()) {
      std::vector<int> pos;
      for (const auto& w : plan.words) {
        pos.push_back(w.position);
        word_gold.push_back(w.gold);
      }
      word_rows.push_back(gather_rows(enc.words, pos));
    }
    if (any_entity) {
      std::vector<int> idx;
      for (const auto& e : plan.entities) {
        idx.push_back(e.index);
        entity_gold.push_back(e.gold);
      }
      entity_rows.push_back(gather_rows(enc.entities, idx));
    }
  }
  detail::check_gold(word_gold, c.word_vocab_size, "masked word");
  detail::check_gold(entity_gold, c.entity_vocab_size, "masked entity");
  std::vector<Var<T>> terms;
  if (!word_gold.empty()) {
    Var<T> logits = mlm_logits(tape, p, concat_rows(word_rows));
    Var<T> term = scale(cross_entropy_sum(logits, word_gold), T(1) / T(word_gold.size()));
    out.mlm = double(term.value().item());
    out.mlm_count = word_gold.size();
    out.mlm_correct = detail::count_correct(logits.value(), word_gold);
    terms.push_back(term);
  }
  if (!entity_gold.empty()) {
    Var<T> logits = entity_logits(tape, p, concat_rows(entity_rows));
    Var<T> term = scale(cross_entropy_sum(logits, entity_gold), T(1) / T(entity_gold.size()));
    out.entity = double(term.value().item());
    out.entity_count = entity_gold.size();
    out.entity_correct = detail::count_correct(logits.value(), entity_gold);
    terms.push_back(term);
  }
  if (terms.empty()) {
    out.total = tape.constant(Tensor<T>::scalar(T{0}));
    return out;
  }
  out.degenerate = false;
  out.total = terms.size() == 1 ? terms[0] : add(terms[0], terms[1]);
  return out;
}

}  // namespace luke::pretrain
