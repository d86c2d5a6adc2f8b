#pragma once

// Turns pair records into rendered and tokenized training sequences.

#include <string>
#include <vector>

#include "dibo/error.hpp"
#include "dibo/pool.hpp"
#include "dibo/text.hpp"
#include "dibo/train.hpp"
#include "dibo/vocab.hpp"

namespace dibo {

inline std::vector<LabeledDesign> context_entries(const OfflinePool& pool, const std::vector<std::size_t>& ids) {
  std::vector<LabeledDesign> out;
  out.reserve(ids.size());
  for (std::size_t i : ids) out.push_back({pool[i].design, pool[i].label});
  return out;
}

inline RenderedExample render_pair(const TaskSpec& task, const OfflinePool& pool, const PairSpec& pair,
                                   const TemplateSet& templates, const Delimiters& delims, PromptMode mode) {
  const auto& tmpl = templates.train.at(static_cast<std::size_t>(pair.template_id) % templates.train.size());
  return render_example(tmpl, task, TaskText::for_task(task), context_entries(pool, pair.context),
                        pool[pair.target].design, mode, delims);
}

inline TokenSeq encode_rendered(const Vocab& vocab, const RenderedExample& ex, std::size_t max_len) {
  TokenSeq seq = vocab.encode(ex.full_text(), ex.prompt_text.size());
  require(seq.size() <= max_len, ErrorKind::shape,
          "encoded example has " + std::to_string(seq.size()) + " tokens, max_len is " + std::to_string(max_len));
  return seq;
}

/// Tokenized corpus for a stage. RL pairs carry rewards and the dataset's
/// reward standard deviation.
inline StageData encode_corpus(const TaskSpec& task, const OfflinePool& pool, const std::vector<PairSpec>& pairs,
                               const TemplateSet& templates, const Vocab& vocab, const Delimiters& delims,
                               std::size_t max_len, PromptMode mode, double reward_std = 0.0) {
  StageData data;
  data.reward_std = reward_std;
  data.examples.reserve(pairs.size());
  for (const auto& p : pairs) {
    data.examples.push_back(encode_rendered(vocab, render_pair(task, pool, p, templates, delims, mode), max_len));
    if (p.reward) data.rewards.push_back(*p.reward);
  }
  return data;
}

}  // namespace dibo
