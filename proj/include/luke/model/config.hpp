#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "luke/json_util.hpp"
#include "luke/numerics/tensor.hpp"

namespace luke {

enum class AttentionMode { kOriginal, kEntityAware };

inline std::string to_string(AttentionMode m) {
  return m == AttentionMode::kOriginal ? "original" : "entity_aware";
}

inline AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "original") return AttentionMode::kOriginal;
  if (s == "entity_aware") return AttentionMode::kEntityAware;
  throw ValidationError("attention mode must be 'original' or 'entity_aware', got '" + s + "'");
}

struct ModelConfig {
  std::size_t hidden_size = 64;            // D
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t head_size = 16;              // L, with D = num_heads * L
  std::size_t entity_embedding_size = 32;  // H
  std::size_t word_vocab_size = 200;       // V_w
  std::size_t entity_vocab_size = 50;      // V_e
  std::size_t max_positions = 128;
  std::size_t ffn_multiplier = 4;
  AttentionMode attention_mode = AttentionMode::kOriginal;
  bool use_entity_inputs = true;
  double dropout = 0.0;
  double init_std = 0.02;

  std::size_t ffn_size() const { return ffn_multiplier * hidden_size; }

  // All violations, one per entry.
  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (hidden_size == 0) out.push_back("hidden_size must be positive");
    if (num_heads == 0) out.push_back("num_heads must be positive");
    if (num_heads * head_size != hidden_size) {
      out.push_back("hidden_size (" + std::to_string(hidden_size) + ") must equal num_heads (" +
                    std::to_string(num_heads) + ") x head_size (" + std::to_string(head_size) + ")");
    }
    if (entity_embedding_size == 0 || entity_embedding_size > hidden_size) {
      out.push_back("entity_embedding_size must be in [1, hidden_size]");
    }
    if (word_vocab_size < 5) out.push_back("word_vocab_size must be at least 5");
    if (entity_vocab_size < 2) out.push_back("entity_vocab_size must be at least 2");
    if (max_positions == 0) out.push_back("max_positions must be positive");
    if (ffn_multiplier == 0) out.push_back("ffn_multiplier must be positive");
    if (dropout < 0.0 || dropout >= 1.0) out.push_back("dropout must be in [0, 1)");
    return out;
  }

  void validate() const {
    auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& s : p) msg += "\n  " + s;
    throw ValidationError(msg);
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"hidden_size", c.hidden_size},
       {"num_layers", c.num_layers},
       {"num_heads", c.num_heads},
       {"head_size", c.head_size},
       {"entity_embedding_size", c.entity_embedding_size},
       {"word_vocab_size", c.word_vocab_size},
       {"entity_vocab_size", c.entity_vocab_size},
       {"max_positions", c.max_positions},
       {"ffn_multiplier", c.ffn_multiplier},
       {"attention_mode", to_string(c.attention_mode)},
       {"use_entity_inputs", c.use_entity_inputs},
       {"dropout", c.dropout},
       {"init_std", c.init_std}};
}

// Missing keys keep their defaults; unknown keys and bad values are reported.
inline void read_model_config(StrictObject& o, ModelConfig& c) {
  o.get("hidden_size", c.hidden_size);
  o.get("num_layers", c.num_layers);
  o.get("num_heads", c.num_heads);
  o.get("head_size", c.head_size);
  o.get("entity_embedding_size", c.entity_embedding_size);
  o.get("word_vocab_size", c.word_vocab_size);
  o.get("entity_vocab_size", c.entity_vocab_size);
  o.get("max_positions", c.max_positions);
  o.get("ffn_multiplier", c.ffn_multiplier);
  std::string mode = to_string(c.attention_mode);
  o.get("attention_mode", mode);
  try {
    c.attention_mode = parse_attention_mode(mode);
  } catch (const ValidationError& e) {
    o.problems().push_back(e.what());
  }
  o.get("use_entity_inputs", c.use_entity_inputs);
  o.get("dropout", c.dropout);
  o.get("init_std", c.init_std);
  o.finish();
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  std::vector<std::string> problems;
  ModelConfig c;
  StrictObject o(j, "model", problems);
  read_model_config(o, c);
  for (const auto& p : c.problems()) problems.push_back(p);
  if (!problems.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  return c;
}

}  // namespace luke
