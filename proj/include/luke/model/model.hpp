// Encoder over a joint word + entity token sequence.
//
// Weight matrices are stored [in, out] and applied as x * W. Per-head query,
// key and value maps are the column blocks of the [D, D] projections.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "luke/model/config.hpp"
#include "luke/numerics/ops.hpp"
#include "luke/numerics/params.hpp"

namespace luke::model {

namespace names {
inline const std::string kWord = "embeddings.word";                  // A
inline const std::string kEntity = "embeddings.entity";              // B
inline const std::string kEntityProj = "embeddings.entity_proj";     // U
inline const std::string kWordPosition = "embeddings.word_position";  // C
inline const std::string kEntityPosition = "embeddings.entity_position";
inline const std::string kEntityType = "embeddings.entity_type";
inline const std::string kEmbeddingLn = "embeddings.ln";

inline std::string layer(std::size_t i) { return "layers." + std::to_string(i) + "."; }

// Query projections in typed_scores slot order.
inline const std::array<std::string, 4> kQueries = {"attn.query", "attn.query_w2e",
                                                    "attn.query_e2w", "attn.query_e2e"};
}  // namespace names

// Parameter group used in gradient reports; one of A, B, U, C, Dpos, e_type,
// Q, Q_w2e, Q_e2w, Q_e2e, K, V, attn_out, FFN, layer_norm, or the head prefix.
inline std::string param_group(const std::string& name) {
  if (name == names::kWord) return "A";
  if (name == names::kEntity) return "B";
  if (name == names::kEntityProj) return "U";
  if (name == names::kWordPosition) return "C";
  if (name == names::kEntityPosition) return "Dpos";
  if (name == names::kEntityType) return "e_type";
  if (name.rfind("layers.", 0) == 0) {
    const std::string rest = name.substr(name.find('.', 7) + 1);
    if (rest == "attn.query") return "Q";
    if (rest == "attn.query_w2e") return "Q_w2e";
    if (rest == "attn.query_e2w") return "Q_e2w";
    if (rest == "attn.query_e2e") return "Q_e2e";
    if (rest == "attn.key") return "K";
    if (rest == "attn.value") return "V";
    if (rest.rfind("attn.out", 0) == 0) return "attn_out";
    if (rest.rfind("ffn.", 0) == 0) return "FFN";
    return "layer_norm";
  }
  if (name.rfind("embeddings.ln", 0) == 0) return "layer_norm";
  return name.substr(0, name.find('.'));
}

inline bool is_bias_or_norm(const std::string& name) {
  auto ends_with = [&name](const std::string& s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".bias") || ends_with(".gain");
}

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

// Draws of a parameter depend only on (seed, name), so adding or removing
// other parameters never shifts them.
template <typename T>
Tensor<T> normal_init(const Shape& shape, double std_dev, std::uint64_t seed,
                      const std::string& name) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(detail::fnv1a(name)),
                    static_cast<std::uint32_t>(detail::fnv1a(name) >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> dist(0.0, std_dev);
  Tensor<T> t(shape);
  for (auto& v : t.storage()) v = T(dist(rng));
  return t;
}

template <typename T>
void add_linear(ParamStore<T>& p, const std::string& prefix, std::size_t in, std::size_t out,
                double std_dev, std::uint64_t seed, bool bias = true) {
  p.add(prefix + ".weight", normal_init<T>({in, out}, std_dev, seed, prefix + ".weight"));
  if (bias) p.add(prefix + ".bias", Tensor<T>(Shape{out}));
}

template <typename T>
void add_layer_norm(ParamStore<T>& p, const std::string& prefix, std::size_t width) {
  Tensor<T> gain = Tensor<T>(Shape{width});
  gain.fill(T{1});
  p.add(prefix + ".gain", std::move(gain));
  p.add(prefix + ".bias", Tensor<T>(Shape{width}));
}

// Copies Q into the three type-pair query matrices of every layer.
template <typename T>
void copy_query_to_typed(ParamStore<T>& p, const ModelConfig& c) {
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string pre = names::layer(l);
    for (std::size_t s = 1; s < 4; ++s) p.set(pre + names::kQueries[s], p.at(pre + names::kQueries[0]));
  }
}

template <typename T>
ParamStore<T> init_encoder(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  const double sd = c.init_std;
  const std::size_t d = c.hidden_size;
  ParamStore<T> p;
  p.add(names::kWord, normal_init<T>({c.word_vocab_size, d}, sd, seed, names::kWord));
  p.add(names::kEntity,
        normal_init<T>({c.entity_vocab_size, c.entity_embedding_size}, sd, seed, names::kEntity));
  p.add(names::kEntityProj,
        normal_init<T>({c.entity_embedding_size, d}, sd, seed, names::kEntityProj));
  p.add(names::kWordPosition, normal_init<T>({c.max_positions, d}, sd, seed, names::kWordPosition));
  p.add(names::kEntityPosition,
        normal_init<T>({c.max_positions, d}, sd, seed, names::kEntityPosition));
  p.add(names::kEntityType, normal_init<T>({d}, sd, seed, names::kEntityType));
  add_layer_norm(p, names::kEmbeddingLn, d);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string pre = names::layer(l);
    for (const char* m : {"attn.query", "attn.key", "attn.value"}) {
      p.add(pre + m, normal_init<T>({d, d}, sd, seed, pre + m));
    }
    add_linear(p, pre + "attn.out", d, d, sd, seed);
    add_layer_norm(p, pre + "ln1", d);
    add_linear(p, pre + "ffn.in", d, c.ffn_size(), sd, seed);
    add_linear(p, pre + "ffn.out", c.ffn_size(), d, sd, seed);
    add_layer_norm(p, pre + "ln2", d);
  }
  if (c.attention_mode == AttentionMode::kEntityAware) copy_query_to_typed(p, c);
  return p;
}

// Switches to entity-aware attention; the new query matrices start equal to Q.
template <typename T>
void enable_entity_aware(ParamStore<T>& p, ModelConfig& c) {
  if (c.attention_mode == AttentionMode::kEntityAware) return;
  c.attention_mode = AttentionMode::kEntityAware;
  copy_query_to_typed(p, c);
}

// One encoder input. Empty masks mean every token is real (1 = real, 0 = pad).
struct EncoderInput {
  std::vector<int> word_ids;
  std::vector<int> entity_ids;
  std::vector<std::vector<int>> entity_positions;
  std::vector<std::uint8_t> word_mask;
  std::vector<std::uint8_t> entity_mask;

  std::size_t num_words() const { return word_ids.size(); }
  std::size_t num_entities() const { return entity_ids.size(); }
};

inline void validate_input(const EncoderInput& in, const ModelConfig& c) {
  const std::size_t m = in.num_words();
  if (m == 0) throw ValidationError("encoder input has no words");
  if (m > c.max_positions) {
    throw ValidationError("sequence of " + std::to_string(m) + " words exceeds max positions " +
                          std::to_string(c.max_positions));
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (in.word_ids[i] < 0 || static_cast<std::size_t>(in.word_ids[i]) >= c.word_vocab_size) {
      throw ValidationError("word id " + std::to_string(in.word_ids[i]) + " at position " +
                            std::to_string(i) + " out of range");
    }
  }
  if (in.entity_positions.size() != in.num_entities()) {
    throw ValidationError("entity ids and position lists differ in length");
  }
  if (!in.word_mask.empty() && in.word_mask.size() != m) {
    throw ValidationError("word mask length mismatch");
  }
  if (!in.entity_mask.empty() && in.entity_mask.size() != in.num_entities()) {
    throw ValidationError("entity mask length mismatch");
  }
  for (std::size_t j = 0; j < in.num_entities(); ++j) {
    const int id = in.entity_ids[j];
    if (id < 0 || static_cast<std::size_t>(id) >= c.entity_vocab_size) {
      throw ValidationError("entity id " + std::to_string(id) + " at index " + std::to_string(j) +
                            " out of range");
    }
    if (in.entity_positions[j].empty()) {
      throw ValidationError("entity " + std::to_string(j) + " has an empty position list");
    }
    for (int p : in.entity_positions[j]) {
      if (p < 0 || static_cast<std::size_t>(p) >= m) {
        throw ValidationError("entity " + std::to_string(j) + " position " + std::to_string(p) +
                              " outside the word sequence");
      }
    }
  }
  bool any_real = in.word_mask.empty();
  for (auto v : in.word_mask) any_real = any_real || v != 0;
  if (!any_real) throw ValidationError("encoder input has only padding words");
}

inline std::vector<int> iota_ids(std::size_t n) {
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>(i);
  return out;
}

template <typename T>
struct Embedded {
  Var<T> words;     // m x D
  Var<T> entities;  // n x D, empty when entity inputs are off
};

inline bool uses_entities(const EncoderInput& in, const ModelConfig& c) {
  return c.use_entity_inputs && in.num_entities() > 0;
}

// Input vectors before the embedding layer norm.
template <typename T>
Embedded<T> embed_raw(Tape<T>& tape, const ParamStore<T>& p, const ModelConfig& c,
                      const EncoderInput& in) {
  validate_input(in, c);
  const std::size_t m = in.num_words();
  Var<T> words = add(gather_rows(p.bind(tape, names::kWord), in.word_ids),
                     gather_rows(p.bind(tape, names::kWordPosition), iota_ids(m)));
  Var<T> entities = tape.constant(Tensor<T>(Shape{0, c.hidden_size}));
  if (uses_entities(in, c)) {
    Var<T> token = matmul(gather_rows(p.bind(tape, names::kEntity), in.entity_ids),
                          p.bind(tape, names::kEntityProj));
    Var<T> pos = mean_rows(p.bind(tape, names::kEntityPosition), in.entity_positions);
    entities = add_bias(add(token, pos), p.bind(tape, names::kEntityType));
  }
  return {words, entities};
}

template <typename T>
Var<T> apply_layer_norm(Tape<T>& tape, const ParamStore<T>& p, const std::string& prefix, Var<T> x) {
  return layer_norm(x, p.bind(tape, prefix + ".gain"), p.bind(tape, prefix + ".bias"));
}

template <typename T>
Var<T> apply_linear(Tape<T>& tape, const ParamStore<T>& p, const std::string& prefix, Var<T> x) {
  return add_bias(matmul(x, p.bind(tape, prefix + ".weight")), p.bind(tape, prefix + ".bias"));
}

template <typename T>
Embedded<T> embed(Tape<T>& tape, const ParamStore<T>& p, const ModelConfig& c,
                  const EncoderInput& in) {
  Embedded<T> raw = embed_raw(tape, p, c, in);
  if (!uses_entities(in, c)) {
    return {apply_layer_norm(tape, p, names::kEmbeddingLn, raw.words), raw.entities};
  }
  return {apply_layer_norm(tape, p, names::kEmbeddingLn, raw.words),
          apply_layer_norm(tape, p, names::kEmbeddingLn, raw.entities)};
}

// Per-token types and key mask for the concatenated [words; entities] sequence.
struct SequenceLayout {
  std::vector<TokenType> types;
  std::vector<std::uint8_t> key_mask;
};

inline SequenceLayout layout(const EncoderInput& in, std::size_t n) {
  const std::size_t m = in.num_words();
  SequenceLayout out;
  out.types.assign(m, TokenType::kWord);
  out.types.resize(m + n, TokenType::kEntity);
  out.key_mask.assign(m + n, 1);
  for (std::size_t i = 0; i < in.word_mask.size(); ++i) {
    if (!in.word_mask[i]) {
      out.key_mask[i] = 0;
      out.types[i] = TokenType::kWord;
    }
  }
  for (std::size_t j = 0; j < std::min(n, in.entity_mask.size()); ++j) {
    if (!in.entity_mask[j]) {
      out.key_mask[m + j] = 0;
      out.types[m + j] = TokenType::kWord;
    }
  }
  return out;
}

// Pre-softmax scores [heads * k, k] for one layer. In original mode all four
// slots share the Q projection.
template <typename T>
Var<T> attention_scores(Tape<T>& tape, const ParamStore<T>& p, const ModelConfig& c,
                        std::size_t layer, Var<T> x, const std::vector<TokenType>& types) {
  const std::string pre = names::layer(layer);
  Var<T> q = matmul(x, p.bind(tape, pre + names::kQueries[0]));
  std::array<Var<T>, 4> queries = {q, q, q, q};
  if (c.attention_mode == AttentionMode::kEntityAware) {
    for (std::size_t s = 1; s < 4; ++s) queries[s] = matmul(x, p.bind(tape, pre + names::kQueries[s]));
  }
  Var<T> keys = matmul(x, p.bind(tape, pre + "attn.key"));
  return typed_scores(queries, keys, types, c.num_heads,
                      T(1) / std::sqrt(T(c.head_size)));
}

// Self-attention sublayer output before the residual connection.
template <typename T>
Var<T> attend(Tape<T>& tape, const ParamStore<T>& p, const ModelConfig& c, std::size_t layer,
              Var<T> x, const SequenceLayout& lay) {
  const std::string pre = names::layer(layer);
  Var<T> probs = softmax(attention_scores(tape, p, c, layer, x, lay.types), lay.key_mask);
  Var<T> values = matmul(x, p.bind(tape, pre + "attn.value"));
  return apply_linear(tape, p, pre + "attn.out", attend_values(probs, values, c.num_heads));
}

template <typename T>
struct Encoded {
  Var<T> words;     // h_w, m x D
  Var<T> entities;  // h_e, n x D
};

// Seeds for dropout draws; absent means dropout is disabled for this pass.
class DropoutStream {
 public:
  DropoutStream(double rate, std::optional<std::uint64_t> seed) : rate_(rate), seed_(seed) {}

  template <typename T>
  Var<T> apply(Var<T> x) {
    if (!seed_ || rate_ <= 0.0) return x;
    std::uint64_t z = *seed_ + 0x9e3779b97f4a7c15ULL * ++counter_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return dropout(x, rate_, z ^ (z >> 31));
  }

 private:
  double rate_;
  std::optional<std::uint64_t> seed_;
  std::uint64_t counter_ = 0;
};

template <typename T>
Encoded<T> encode(Tape<T>& tape, const ParamStore<T>& p, const ModelConfig& c,
                  const EncoderInput& in, std::optional<std::uint64_t> dropout_seed = {}) {
  DropoutStream drop(c.dropout, dropout_seed);
  Embedded<T> e = embed(tape, p, c, in);
  const std::size_t m = in.num_words();
  const std::size_t n = uses_entities(in, c) ? in.num_entities() : 0;
  Var<T> x = n ? concat_rows<T>({e.words, e.entities}) : e.words;
  x = drop.apply(x);
  const SequenceLayout lay = layout(in, n);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string pre = names::layer(l);
    Var<T> a = drop.apply(attend(tape, p, c, l, x, lay));
    x = apply_layer_norm(tape, p, pre + "ln1", add(x, a));
    Var<T> f = apply_linear(tape, p, pre + "ffn.out", gelu(apply_linear(tape, p, pre + "ffn.in", x)));
    x = apply_layer_norm(tape, p, pre + "ln2", add(x, drop.apply(f)));
  }
  if (!n) return {x, e.entities};
  std::vector<int> ent_rows(n);
  for (std::size_t j = 0; j < n; ++j) ent_rows[j] = static_cast<int>(m + j);
  return {gather_rows(x, iota_ids(m)), gather_rows(x, ent_rows)};
}

}  // namespace luke::model
