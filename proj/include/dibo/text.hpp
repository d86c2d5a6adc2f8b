#pragma once

// Prompt / response rendering and response parsing.
//
// A rendered training example looks like
//
//   <instruction wording with the task description>
//   |design-start|['A','C',...]|design-end|
//   |label-start|+000.018|label-end|
//   ... one design line and one label line per context entry ...
//   <ask block>
//   Response:
//   |design-start|['G','C',...]|design-end|      <- response
//
// Whitespace is fixed: one newline between blocks, no trailing spaces.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dibo/error.hpp"
#include "dibo/oracle.hpp"

namespace dibo {

enum class DelimiterMode { tokens, plain_text };

struct Delimiters {
  std::string design_open;
  std::string design_close;
  std::string label_open;
  std::string label_close;

  static Delimiters for_mode(DelimiterMode mode) {
    if (mode == DelimiterMode::tokens) return {"|design-start|", "|design-end|", "|label-start|", "|label-end|"};
    return {"Designs: ", "", "Labels: ", ""};
  }
};

inline constexpr std::string_view kResponseCue = "Response:";

// ---------------------------------------------------------------------------

/// Signed, three integer digits, three decimals: 0.018 -> "+000.018".
/// Rounds half away from zero; a value that rounds to zero prints as '+'.
inline std::string render_label(double y) {
  require(std::isfinite(y) && std::fabs(y) < 1000.0, ErrorKind::range, "label magnitude must be < 1000");
  const long long milli = std::llround(std::fabs(y) * 1000.0);
  require(milli < 1000000, ErrorKind::range, "label rounds to 1000 or more");
  const char sign = (y < 0.0 && milli != 0) ? '-' : '+';
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%03lld.%03lld", sign, milli / 1000, milli % 1000);
  return buf;
}

/// Discrete: ['A','C',...]; continuous: [+001.000, -001.500, ...].
inline std::string render_design(const TaskSpec& task, const Design& design) {
  check_design(task, design);
  std::string out = "[";
  if (task.kind == TaskKind::discrete) {
    for (std::size_t i = 0; i < design.symbols.size(); ++i) {
      if (i) out += ',';
      out += '\'';
      out += task.alphabet[static_cast<std::size_t>(design.symbols[i])];
      out += '\'';
    }
  } else {
    for (std::size_t i = 0; i < design.values.size(); ++i) {
      if (i) out += ", ";
      out += render_label(design.values[i]);
    }
  }
  out += ']';
  return out;
}

inline std::string render_response(const TaskSpec& task, const Design& design, const Delimiters& delims) {
  return delims.design_open + render_design(task, design) + delims.design_close;
}

// ---------------------------------------------------------------------------

struct ParsedDesign {
  Design design;
  bool clipped = false;  // a continuous value was pulled back into bounds
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

/// Extracts the first delimited design region and converts it back into a
/// design. Returns nullopt for anything malformed; a bad candidate is
/// rejected, never fatal.
inline std::optional<ParsedDesign> parse_design(const TaskSpec& task, std::string_view response,
                                                const Delimiters& delims = Delimiters::for_mode(DelimiterMode::tokens)) {
  const auto open = response.find(delims.design_open);
  if (open == std::string_view::npos) return std::nullopt;
  std::string_view body = response.substr(open + delims.design_open.size());
  if (!delims.design_close.empty()) {
    const auto close = body.find(delims.design_close);
    if (close == std::string_view::npos) return std::nullopt;
    body = body.substr(0, close);
  } else {
    const auto close = body.find(']');
    if (close == std::string_view::npos) return std::nullopt;
    body = body.substr(0, close + 1);
  }
  if (body.size() < 2 || body.front() != '[' || body.back() != ']') return std::nullopt;
  const auto items = detail::split(body.substr(1, body.size() - 2), ',');
  const auto L = static_cast<std::size_t>(task.length);
  if (items.size() != L) return std::nullopt;

  ParsedDesign out;
  if (task.kind == TaskKind::discrete) {
    for (auto raw : items) {
      auto item = detail::trim(raw);
      if (item.size() < 3 || item.front() != '\'' || item.back() != '\'') return std::nullopt;
      item = item.substr(1, item.size() - 2);
      const auto it = std::find(task.alphabet.begin(), task.alphabet.end(), item);
      if (it == task.alphabet.end()) return std::nullopt;
      out.design.symbols.push_back(static_cast<int>(it - task.alphabet.begin()));
    }
  } else {
    for (std::size_t i = 0; i < L; ++i) {
      const std::string item(detail::trim(items[i]));
      if (item.empty()) return std::nullopt;
      char* end = nullptr;
      const double v = std::strtod(item.c_str(), &end);
      if (end != item.c_str() + item.size() || !std::isfinite(v)) return std::nullopt;
      const auto& b = task.bounds[i];
      const double clipped = std::clamp(v, b.lower, b.upper);
      out.clipped = out.clipped || clipped != v;
      out.design.values.push_back(clipped);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Template {
  std::string name;
  std::string text;
};

inline constexpr std::string_view kSlotTask = "{task_description}";
inline constexpr std::string_view kSlotExamples = "{examples_block}";
inline constexpr std::string_view kSlotAsk = "{ask_block}";

inline void validate_template(const Template& t) {
  for (auto slot : {kSlotTask, kSlotExamples, kSlotAsk}) {
    const auto first = t.text.find(slot);
    require(first != std::string::npos, ErrorKind::template_slot,
            "template '" + t.name + "' is missing slot " + std::string(slot));
    require(t.text.find(slot, first + 1) == std::string::npos, ErrorKind::template_slot,
            "template '" + t.name + "' repeats slot " + std::string(slot));
  }
}

/// Instruction wordings. Every template carries the same three slots and
/// differs only in surface wording.
struct TemplateSet {
  std::vector<Template> train;
  std::vector<Template> val;

  void validate() const {
    require(!train.empty(), ErrorKind::template_slot, "template set has no training templates");
    for (const auto& t : train) validate_template(t);
    for (const auto& t : val) validate_template(t);
    for (const auto& a : train)
      for (const auto& b : val)
        require(a.text != b.text, ErrorKind::template_slot, "train and val templates overlap");
  }

  /// Four training paraphrases and one held-out one.
  static TemplateSet builtin() {
    TemplateSet s;
    s.train = {
        {"train_0",
         "You are a helpful optimization assistant.\n{task_description}\n"
         "You are given several existing designs along with their scores:\n{examples_block}\n{ask_block}"},
        {"train_1",
         "The goal is to find a design with the highest possible score.\n{task_description}\n"
         "Here are known designs and their measured scores:\n{examples_block}\n{ask_block}"},
        {"train_2",
         "Optimization task.\n{task_description}\n"
         "Training data of designs and scores is as follows:\n{examples_block}\n{ask_block}"},
        {"train_3",
         "Below is a reference dataset of designs ranked by score.\n{task_description}\n"
         "{examples_block}\n{ask_block}"},
    };
    s.val = {
        {"val_0",
         "You are assisting a scientist who wants to improve a design.\n{task_description}\n"
         "Existing designs and their scores:\n{examples_block}\n{ask_block}"},
    };
    return s;
  }

  /// Loads `train_*.txt` and `val_*.txt` from a directory, sorted by name.
  static TemplateSet load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    require(fs::is_directory(dir), ErrorKind::io, "template directory not found: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    TemplateSet s;
    for (const auto& path : files) {
      std::ifstream in(path);
      std::stringstream buf;
      buf << in.rdbuf();
      std::string text = buf.str();
      while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
      const std::string stem = path.stem().string();
      if (stem.rfind("train", 0) == 0) {
        s.train.push_back({stem, text});
      } else if (stem.rfind("val", 0) == 0) {
        s.val.push_back({stem, text});
      }
    }
    s.validate();
    return s;
  }
};

/// Task-specific wording that fills the {task_description} and {ask_block}
/// slots.
struct TaskText {
  std::string task_description;
  std::string ask_block;

  static TaskText for_task(const TaskSpec& task) {
    TaskText t;
    if (task.kind == TaskKind::discrete) {
      std::string symbols;
      for (std::size_t i = 0; i < task.alphabet.size(); ++i) {
        if (i) symbols += ", ";
        symbols += task.alphabet[i];
      }
      t.task_description = "Design a length-" + std::to_string(task.length) + " sequence over the symbols " +
                           symbols + " that maximizes the binding score.";
      t.ask_block =
          "Please propose a new sequence that is different from the existing sequences and has a higher score.";
    } else {
      t.task_description = "Design a vector of " + std::to_string(task.length) +
                           " continuous parameters that maximizes the performance score. "
                           "Each value is a signed float with three decimal places.";
      t.ask_block = "Please propose a new design that is different from the existing designs and has a higher score.";
    }
    return t;
  }
};

// ---------------------------------------------------------------------------

enum class SpanKind { design, label, response };

struct Span {
  SpanKind kind;
  std::size_t begin;  // byte offsets into prompt_text + response_text
  std::size_t end;
};

struct RenderedExample {
  std::string prompt_text;
  std::string response_text;
  std::vector<Span> spans;

  std::string full_text() const { return prompt_text + response_text; }
};

/// Which stage the prompt feeds. All three render the same text so that the
/// inference prompt distribution matches training.
enum class PromptMode { sft, rl, inference };

inline std::string replace_slot(std::string text, std::string_view slot, const std::string& value) {
  const auto pos = text.find(slot);
  require(pos != std::string::npos, ErrorKind::template_slot, "missing slot " + std::string(slot));
  text.replace(pos, slot.size(), value);
  return text;
}

/// Renders the prompt part. `context` is rendered in the order given.
inline RenderedExample render_prompt(const Template& tmpl, const TaskSpec& task, const TaskText& words,
                                     const std::vector<LabeledDesign>& context, PromptMode mode,
                                     const Delimiters& delims) {
  (void)mode;
  validate_template(tmpl);
  std::string examples;
  for (std::size_t i = 0; i < context.size(); ++i) {
    if (i) examples += '\n';
    examples += delims.design_open + render_design(task, context[i].design) + delims.design_close;
    examples += '\n';
    examples += delims.label_open + render_label(context[i].label) + delims.label_close;
  }
  // Substitute task and ask first so the examples block (which cannot contain
  // braces) is never scanned for slots.
  std::string text = replace_slot(tmpl.text, kSlotTask, words.task_description);
  text = replace_slot(text, kSlotAsk, words.ask_block);
  const auto examples_at = text.find(kSlotExamples);
  require(examples_at != std::string::npos, ErrorKind::template_slot, "missing examples slot");
  text.replace(examples_at, kSlotExamples.size(), examples);
  text += '\n';
  text += kResponseCue;
  text += '\n';

  RenderedExample out;
  out.prompt_text = std::move(text);
  // Spans: walk the examples block we just inserted.
  std::size_t cursor = examples_at;
  for (const auto& entry : context) {
    const std::string d = delims.design_open + render_design(task, entry.design) + delims.design_close;
    out.spans.push_back({SpanKind::design, cursor, cursor + d.size()});
    cursor += d.size() + 1;
    const std::string l = delims.label_open + render_label(entry.label) + delims.label_close;
    out.spans.push_back({SpanKind::label, cursor, cursor + l.size()});
    cursor += l.size() + 1;
  }
  return out;
}

/// Prompt + response for a training pair.
inline RenderedExample render_example(const Template& tmpl, const TaskSpec& task, const TaskText& words,
                                      const std::vector<LabeledDesign>& context, const Design& target,
                                      PromptMode mode, const Delimiters& delims) {
  RenderedExample ex = render_prompt(tmpl, task, words, context, mode, delims);
  ex.response_text = render_response(task, target, delims);
  const std::size_t begin = ex.prompt_text.size();
  ex.spans.push_back({SpanKind::response, begin, begin + ex.response_text.size()});
  return ex;
}

// ---------------------------------------------------------------------------
// ranking probe

inline std::string option_letter(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

/// Ranking prompt: options lettered A.., rendered designs only, no labels.
inline std::string render_probe_prompt(const TaskSpec& task, const std::vector<Design>& options,
                                       const Delimiters& delims) {
  std::string text = "You are given " + std::to_string(options.size()) + " candidate designs.\n";
  text += "Rank them from highest score to lowest score.\n";
  text += "Return only a ranking over the option letters and no other text.\n";
  for (std::size_t i = 0; i < options.size(); ++i)
    text += option_letter(i) + ": " + delims.design_open + render_design(task, options[i]) + delims.design_close + "\n";
  text += "Answer:\n";
  return text;
}

/// "B > A > C" for order {1, 0, 2}.
inline std::string render_ranking(const std::vector<std::size_t>& order) {
  std::string out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i) out += " > ";
    out += option_letter(order[i]);
  }
  return out;
}

/// All fixed strings a prompt can contain, used to build the vocabulary.
inline std::vector<std::string> fixed_texts(const TaskSpec& task, const TemplateSet& templates) {
  std::vector<std::string> out;
  for (const auto& t : templates.train) out.push_back(t.text);
  for (const auto& t : templates.val) out.push_back(t.text);
  const TaskText words = TaskText::for_task(task);
  out.push_back(words.task_description);
  out.push_back(words.ask_block);
  out.emplace_back(kResponseCue);
  out.push_back(render_probe_prompt(task, {}, Delimiters::for_mode(DelimiterMode::plain_text)));
  out.push_back(Delimiters::for_mode(DelimiterMode::plain_text).design_open);
  out.push_back(Delimiters::for_mode(DelimiterMode::plain_text).label_open);
  return out;
}

}  // namespace dibo
