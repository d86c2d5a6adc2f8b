#pragma once

// Tiny pre-LayerNorm transformer with a bidirectional or causal attention mask.
// Both modes share the same parameter layout; only the mask differs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dibo/autograd.hpp"
#include "dibo/error.hpp"
#include "dibo/rng.hpp"
#include "dibo/vocab.hpp"

namespace dibo {

enum class AttentionMode { bidirectional, causal };
enum class Precision { fast, check };  // 32-bit / 64-bit scalars

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_len = 512;
  int vocab_size = 0;
  AttentionMode attention = AttentionMode::bidirectional;
  Precision precision = Precision::fast;
  double init_std = 0.02;

  void validate() const {
    require(d_model >= 1 && n_layers >= 0 && n_heads >= 1 && d_ff >= 1 && max_len >= 1, ErrorKind::config,
            "model dimensions must be positive");
    require(d_model % n_heads == 0, ErrorKind::config, "d_model must be divisible by n_heads");
    require(vocab_size >= 2, ErrorKind::config, "vocab_size must be set");
    require(init_std > 0.0, ErrorKind::config, "init_std must be positive");
  }
};

inline std::string to_string(AttentionMode m) { return m == AttentionMode::causal ? "causal" : "bidirectional"; }
inline std::string to_string(Precision p) { return p == Precision::check ? "check" : "fast"; }

inline AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "bidirectional") return AttentionMode::bidirectional;
  if (s == "causal") return AttentionMode::causal;
  fail(ErrorKind::config, "unknown attention mode '" + s + "'");
}

inline Precision parse_precision(const std::string& s) {
  if (s == "fast") return Precision::fast;
  if (s == "check") return Precision::check;
  fail(ErrorKind::config, "unknown precision '" + s + "'");
}

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},     {"n_layers", c.n_layers},   {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},           {"max_len", c.max_len},     {"vocab_size", c.vocab_size},
          {"attention", to_string(c.attention)}, {"precision", to_string(c.precision)},
          {"init_std", c.init_std}};
}

inline ModelConfig model_config_from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "d_model") c.d_model = value.get<int>();
    else if (key == "n_layers") c.n_layers = value.get<int>();
    else if (key == "n_heads") c.n_heads = value.get<int>();
    else if (key == "d_ff") c.d_ff = value.get<int>();
    else if (key == "max_len") c.max_len = value.get<int>();
    else if (key == "vocab_size") c.vocab_size = value.get<int>();
    else if (key == "attention") c.attention = parse_attention_mode(value.get<std::string>());
    else if (key == "precision") c.precision = parse_precision(value.get<std::string>());
    else if (key == "init_std") c.init_std = value.get<double>();
    else fail(ErrorKind::config, "unknown key model." + key);
  }
  return c;
}

/// Per-layer parameter slots, in manifest order.
enum LayerSlot : int {
  ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2, kLayerSlots
};

template <class T>
class Model {
 public:
  Model() = default;

  /// Random initialization: N(0, init_std) weights, zero biases, unit LN gains.
  Model(const ModelConfig& cfg, Rng& rng) : config_(cfg) {
    cfg.validate();
    layout();
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const std::string& n = names_[i];
      const bool gain = n.ends_with("_g");
      const bool bias = n.ends_with("_b") || n.ends_with(".bq") || n.ends_with(".bk") || n.ends_with(".bv") ||
                        n.ends_with(".bo") || n.ends_with(".b1") || n.ends_with(".b2") || n == "b_out";
      Mat<T>& p = params_[i];
      if (gain) p.setOnes();
      else if (bias) p.setZero();
      else
        for (Eigen::Index k = 0; k < p.size(); ++k) p.data()[k] = static_cast<T>(cfg.init_std * rng.normal());
    }
  }

  const ModelConfig& config() const { return config_; }
  ModelConfig& config() { return config_; }
  std::vector<Mat<T>>& params() { return params_; }
  const std::vector<Mat<T>>& params() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    fail(ErrorKind::shape, "no parameter named " + name);
  }
  Mat<T>& param(const std::string& name) { return params_[index_of(name)]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
    return n;
  }

  std::vector<Var> bind(Tape<T>& tape) const {
    std::vector<Var> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(tape.param(p));
    return out;
  }

  /// Logits (rows.size() x V) at positions `rows` of `ids`. Positions whose
  /// key_valid flag is zero are invisible to every query.
  Var forward(Tape<T>& tape, const std::vector<Var>& pv, const std::vector<int>& ids,
              const std::vector<unsigned char>& key_valid, const std::vector<std::size_t>& rows) const {
    const auto n = static_cast<Eigen::Index>(ids.size());
    require(n >= 1, ErrorKind::shape, "empty token sequence");
    require(n <= config_.max_len, ErrorKind::shape,
            "sequence length " + std::to_string(n) + " exceeds max_len " + std::to_string(config_.max_len));
    for (int id : ids)
      require(id >= 0 && id < config_.vocab_size, ErrorKind::shape, "token id out of vocabulary range");
    const bool causal = config_.attention == AttentionMode::causal;

    // Position ids are right-aligned to the window, so a fixed-length response
    // sees the same ids whatever the prompt length.
    Var h = tape.add(tape.embedding(pv[0], ids), tape.take_rows(pv[1], config_.max_len - n, n));
    for (int l = 0; l < config_.n_layers; ++l) {
      auto P = [&](int slot) { return pv[static_cast<std::size_t>(2 + l * kLayerSlots + slot)]; };
      Var x = tape.layer_norm(h, P(ln1_g), P(ln1_b));
      Var q = tape.add_bias(tape.matmul(x, P(wq)), P(bq));
      Var k = tape.add_bias(tape.matmul(x, P(wk)), P(bk));
      Var v = tape.add_bias(tape.matmul(x, P(wv)), P(bv));
      Var a = tape.attention(q, k, v, config_.n_heads, key_valid, causal);
      h = tape.add(h, tape.add_bias(tape.matmul(a, P(wo)), P(bo)));
      Var y = tape.layer_norm(h, P(ln2_g), P(ln2_b));
      y = tape.gelu(tape.add_bias(tape.matmul(y, P(w1)), P(b1)));
      h = tape.add(h, tape.add_bias(tape.matmul(y, P(w2)), P(b2)));
    }
    const std::size_t tail = 2 + static_cast<std::size_t>(config_.n_layers) * kLayerSlots;
    Var sel = tape.gather_rows(h, rows);
    sel = tape.layer_norm(sel, pv[tail], pv[tail + 1]);
    return tape.add_bias(tape.matmul(sel, pv[tail + 2]), pv[tail + 3]);
  }

  /// No-grad logits at every position of a token sequence.
  Mat<T> logits(const TokenSeq& seq) const {
    std::vector<std::size_t> rows(seq.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return logits(seq, rows);
  }

  Mat<T> logits(const TokenSeq& seq, const std::vector<std::size_t>& rows) const {
    Tape<T> tape(false);
    const auto pv = bind(tape);
    return tape.value(forward(tape, pv, seq.ids, key_mask(seq), rows));
  }

  static std::vector<unsigned char> key_mask(const TokenSeq& seq) {
    std::vector<unsigned char> m(seq.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = seq.roles[i] != Role::pad;
    return m;
  }

  // --------------------------------------------------------------------------
  // checkpoint: JSON header line, then little-endian f32 payload

  void save(std::ostream& out) const {
    nlohmann::ordered_json header;
    header["format"] = "dibo-checkpoint-v1";
    header["config"] = to_json(config_);
    auto& manifest = header["tensors"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < params_.size(); ++i)
      manifest.push_back({{"name", names_[i]}, {"shape", {params_[i].rows(), params_[i].cols()}}});
    out << header.dump() << '\n';
    for (const auto& p : params_) {
      for (Eigen::Index k = 0; k < p.size(); ++k) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(p.data()[k]));
        unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
      }
    }
    require(static_cast<bool>(out), ErrorKind::io, "checkpoint write failed");
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path + " for writing");
    save(out);
  }

  static Model load(std::istream& in) {
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::io, "checkpoint: missing header");
    nlohmann::ordered_json header;
    try {
      header = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::parse, std::string("checkpoint header: ") + e.what());
    }
    require(header.value("format", "") == "dibo-checkpoint-v1", ErrorKind::parse, "checkpoint: unknown format");
    Model m;
    m.config_ = model_config_from_json(header.at("config"));
    m.config_.validate();
    m.layout();
    const auto& manifest = header.at("tensors");
    require(manifest.size() == m.params_.size(), ErrorKind::shape, "checkpoint: tensor count mismatch");
    for (std::size_t i = 0; i < m.params_.size(); ++i) {
      const auto& e = manifest[i];
      Mat<T>& p = m.params_[i];
      require(e.at("name").get<std::string>() == m.names_[i] && e.at("shape")[0].get<Eigen::Index>() == p.rows() &&
                  e.at("shape")[1].get<Eigen::Index>() == p.cols(),
              ErrorKind::shape, "checkpoint: manifest mismatch at " + m.names_[i]);
      for (Eigen::Index k = 0; k < p.size(); ++k) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        require(static_cast<bool>(in), ErrorKind::io, "checkpoint: truncated payload");
        const std::uint32_t bits = std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 |
                                   std::uint32_t{b[3]} << 24;
        p.data()[k] = static_cast<T>(std::bit_cast<float>(bits));
      }
    }
    return m;
  }

  static Model load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open checkpoint " + path);
    return load(in);
  }

 private:
  void add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    names_.push_back(std::move(name));
    params_.push_back(Mat<T>::Zero(rows, cols));
  }

  void layout() {
    names_.clear();
    params_.clear();
    const int d = config_.d_model, f = config_.d_ff, V = config_.vocab_size;
    add("tok_emb", V, d);
    add("pos_emb", config_.max_len, d);
    for (int l = 0; l < config_.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      add(p + "ln1_g", 1, d);
      add(p + "ln1_b", 1, d);
      add(p + "wq", d, d);
      add(p + "bq", 1, d);
      add(p + "wk", d, d);
      add(p + "bk", 1, d);
      add(p + "wv", d, d);
      add(p + "bv", 1, d);
      add(p + "wo", d, d);
      add(p + "bo", 1, d);
      add(p + "ln2_g", 1, d);
      add(p + "ln2_b", 1, d);
      add(p + "w1", d, f);
      add(p + "b1", 1, f);
      add(p + "w2", f, d);
      add(p + "b2", 1, d);
    }
    add("lnf_g", 1, d);
    add("lnf_b", 1, d);
    add("w_out", d, V);
    add("b_out", 1, V);
  }

  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Mat<T>> params_;
};

}  // namespace dibo
