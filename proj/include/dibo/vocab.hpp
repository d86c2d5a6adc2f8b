#pragma once

// Word-level tokenizer built from the fixed prompt text plus per-character
// fallback units. Encoding is greedy longest-match; the four delimiter
// literals are single tokens.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dibo/error.hpp"
#include "dibo/oracle.hpp"
#include "dibo/text.hpp"

namespace dibo {

enum class Role : unsigned char { prompt, response, pad };

struct TokenSeq {
  std::vector<int> ids;
  std::vector<Role> roles;

  std::size_t size() const { return ids.size(); }

  std::vector<std::size_t> positions(Role role) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < roles.size(); ++i)
      if (roles[i] == role) out.push_back(i);
    return out;
  }
};

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kMaskToken = "[MASK]";

class Vocab {
 public:
  Vocab() = default;

  /// Builds a vocabulary from an ordered unit list; the first two units must
  /// be [PAD] and [MASK].
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    require(tokens_.size() >= 2 && tokens_[0] == kPadToken && tokens_[1] == kMaskToken, ErrorKind::encoding,
            "vocab must start with [PAD] and [MASK]");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      require(!tokens_[i].empty(), ErrorKind::encoding, "empty token string");
      const bool inserted = id_of_.emplace(tokens_[i], static_cast<int>(i)).second;
      require(inserted, ErrorKind::encoding, "duplicate token '" + tokens_[i] + "'");
      if (i >= 2) max_unit_len_ = std::max(max_unit_len_, tokens_[i].size());
    }
    const auto delims = Delimiters::for_mode(DelimiterMode::tokens);
    for (const auto* lit : {&delims.design_open, &delims.design_close, &delims.label_open, &delims.label_close}) {
      auto it = id_of_.find(*lit);
      delimiter_ids_.push_back(it == id_of_.end() ? -1 : it->second);
    }
  }

  std::size_t size() const { return tokens_.size(); }
  int pad_id() const { return 0; }
  int mask_id() const { return 1; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  /// Ids of |design-start|, |design-end|, |label-start|, |label-end|; -1 when
  /// the vocabulary was built for plain-text delimiters.
  const std::vector<int>& delimiter_ids() const { return delimiter_ids_; }
  bool has_delimiter_tokens() const { return delimiter_ids_[0] >= 0; }

  int id_of(std::string_view token) const {
    auto it = id_of_.find(std::string(token));
    return it == id_of_.end() ? -1 : it->second;
  }

  /// Greedy longest-match segmentation. [PAD]/[MASK] are never produced.
  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    std::size_t pos = 0;
    std::string probe;
    while (pos < text.size()) {
      int best = -1;
      std::size_t best_len = 0;
      const std::size_t max_len = std::min(max_unit_len_, text.size() - pos);
      for (std::size_t len = max_len; len >= 1; --len) {
        probe.assign(text.substr(pos, len));
        auto it = id_of_.find(probe);
        if (it != id_of_.end() && it->second >= 2) {
          best = it->second;
          best_len = len;
          break;
        }
      }
      require(best >= 0, ErrorKind::encoding,
              "no vocabulary unit covers text at offset " + std::to_string(pos) + ": '" +
                  std::string(text.substr(pos, 12)) + "'");
      ids.push_back(best);
      pos += best_len;
    }
    return ids;
  }

  /// Encodes text whose first `prompt_len_chars` bytes are prompt and the rest
  /// response. Both halves are segmented separately so the boundary is exact.
  TokenSeq encode(std::string_view text, std::size_t prompt_len_chars) const {
    require(prompt_len_chars <= text.size(), ErrorKind::encoding, "prompt length beyond text");
    TokenSeq seq;
    seq.ids = encode(text.substr(0, prompt_len_chars));
    seq.roles.assign(seq.ids.size(), Role::prompt);
    for (int id : encode(text.substr(prompt_len_chars))) {
      seq.ids.push_back(id);
      seq.roles.push_back(Role::response);
    }
    return seq;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id == pad_id()) continue;
      out += token(id);
    }
    return out;
  }

  std::string decode(const TokenSeq& seq) const {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i)
      if (seq.roles[i] != Role::pad) out += token(seq.ids[i]);
    return out;
  }

  // line format: id<TAB>escaped-token
  std::string serialize() const {
    std::string out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      out += std::to_string(i);
      out += '\t';
      for (char c : tokens_[i]) {
        switch (c) {
          case '\\': out += "\\\\"; break;
          case '\n': out += "\\n"; break;
          case '\t': out += "\\t"; break;
          case '\r': out += "\\r"; break;
          default: out += c;
        }
      }
      out += '\n';
    }
    return out;
  }

  static Vocab deserialize(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      require(tab != std::string::npos, ErrorKind::parse, "vocab line without tab");
      require(std::stoul(line.substr(0, tab)) == tokens.size(), ErrorKind::parse, "vocab ids must be dense");
      std::string tok;
      for (std::size_t i = tab + 1; i < line.size(); ++i) {
        if (line[i] == '\\' && i + 1 < line.size()) {
          const char e = line[++i];
          tok += e == 'n' ? '\n' : e == 't' ? '\t' : e == 'r' ? '\r' : e;
        } else {
          tok += line[i];
        }
      }
      tokens.push_back(std::move(tok));
    }
    return Vocab(std::move(tokens));
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> id_of_;
  std::vector<int> delimiter_ids_;
  std::size_t max_unit_len_ = 1;
};

/// Specials, delimiters (token mode only), whitespace, punctuation, digits,
/// design symbols, alphabetic words from the fixed prompt text, then single
/// letters. Digits stay single units so every label and value has a fixed
/// token length.
/// Ids follow first-occurrence order.
inline Vocab build_vocab(const TaskSpec& task, const TemplateSet& templates,
                         DelimiterMode mode = DelimiterMode::tokens) {
  std::vector<std::string> units;
  std::unordered_map<std::string, bool> seen;
  auto add = [&](const std::string& u) {
    if (u.empty() || seen.count(u)) return;
    seen[u] = true;
    units.push_back(u);
  };
  add(std::string(kPadToken));
  add(std::string(kMaskToken));
  if (mode == DelimiterMode::tokens) {
    const auto d = Delimiters::for_mode(DelimiterMode::tokens);
    add(d.design_open);
    add(d.design_close);
    add(d.label_open);
    add(d.label_close);
  }
  add(" ");
  add("\n");
  add("\t");
  for (char c = '!'; c <= '~'; ++c)
    if (std::ispunct(static_cast<unsigned char>(c))) add(std::string(1, c));
  for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
  for (const auto& sym : task.alphabet) add("'" + sym + "'");
  for (const auto& sym : task.alphabet) add(sym);

  for (std::string text : fixed_texts(task, templates)) {
    for (auto slot : {kSlotTask, kSlotExamples, kSlotAsk})
      for (auto pos = text.find(slot); pos != std::string::npos; pos = text.find(slot))
        text.replace(pos, slot.size(), " ");
    std::string word;
    for (char c : text) {
      if (std::isalpha(static_cast<unsigned char>(c))) {
        word += c;
      } else {
        if (word.size() >= 2) add(word);
        word.clear();
      }
    }
    if (word.size() >= 2) add(word);
  }
  for (char c = 'A'; c <= 'Z'; ++c) add(std::string(1, c));
  for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
  return Vocab(std::move(units));
}

/// Right-pads with [PAD] up to `length`.
inline TokenSeq pad_to(TokenSeq seq, std::size_t length, const Vocab& vocab) {
  require(seq.size() <= length, ErrorKind::shape, "sequence longer than pad length");
  while (seq.size() < length) {
    seq.ids.push_back(vocab.pad_id());
    seq.roles.push_back(Role::pad);
  }
  return seq;
}

}  // namespace dibo
