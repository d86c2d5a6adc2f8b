#pragma once

// Desk-scale objective functions. Every oracle here has exactly known
// extrema, either by enumerating the whole design space or analytically,
// so normalized scores are exact.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dibo/error.hpp"
#include "dibo/rng.hpp"

namespace dibo {

enum class TaskKind { discrete, continuous };

struct Bounds {
  double lower = -1.0;
  double upper = 1.0;
};

struct TaskSpec {
  TaskKind kind = TaskKind::discrete;
  std::vector<std::string> alphabet;  // discrete only
  int length = 0;                     // sequence length or dimension
  std::vector<Bounds> bounds;         // continuous only, one per dimension
  std::string oracle_id;
  std::uint64_t seed = 0;

  std::size_t alphabet_size() const { return alphabet.size(); }

  void validate() const {
    require(length >= 1, ErrorKind::config, "task length must be >= 1");
    if (kind == TaskKind::discrete) {
      require(!alphabet.empty(), ErrorKind::config, "discrete task needs a non-empty alphabet");
      for (std::size_t i = 0; i < alphabet.size(); ++i) {
        require(!alphabet[i].empty(), ErrorKind::config, "alphabet symbols must be non-empty");
        for (std::size_t j = i + 1; j < alphabet.size(); ++j)
          require(alphabet[i] != alphabet[j], ErrorKind::config,
                  "alphabet contains duplicate symbol '" + alphabet[i] + "'");
      }
    } else {
      require(bounds.size() == static_cast<std::size_t>(length), ErrorKind::config,
              "continuous task needs one bound per dimension");
      for (const auto& b : bounds)
        require(b.lower < b.upper, ErrorKind::config, "bounds must satisfy lower < upper");
    }
  }

  /// |alphabet|^L, saturating at UINT64_MAX.
  std::uint64_t space_size() const {
    std::uint64_t n = 1;
    for (int i = 0; i < length; ++i) {
      if (n > UINT64_MAX / alphabet.size()) return UINT64_MAX;
      n *= alphabet.size();
    }
    return n;
  }
};

/// TF-Bind-8-like: {A,C,G,T}^8 scored by a seeded PWM + epistasis oracle.
inline TaskSpec tf8_like_task(std::uint64_t seed = 0) {
  TaskSpec t;
  t.kind = TaskKind::discrete;
  t.alphabet = {"A", "C", "G", "T"};
  t.length = 8;
  t.oracle_id = "pwm_epistasis";
  t.seed = seed;
  return t;
}

/// Morphology stand-in: -||x - c||^2 on [-1, 1]^D.
inline TaskSpec sphere_task(int dimension = 8, std::uint64_t seed = 0) {
  TaskSpec t;
  t.kind = TaskKind::continuous;
  t.length = dimension;
  t.bounds.assign(static_cast<std::size_t>(dimension), Bounds{-1.0, 1.0});
  t.oracle_id = "sphere";
  t.seed = seed;
  return t;
}

struct Design {
  std::vector<int> symbols;    // discrete
  std::vector<double> values;  // continuous

  auto operator<=>(const Design&) const = default;
  bool operator==(const Design&) const = default;
};

struct LabeledDesign {
  Design design;
  double label = 0.0;
};

class NormalizationSpec {
 public:
  NormalizationSpec() = default;
  NormalizationSpec(double y_min, double y_max) : y_min_(y_min), y_max_(y_max) {
    require(std::isfinite(y_min) && std::isfinite(y_max) && y_min < y_max,
            ErrorKind::degeneracy, "normalization requires y_min < y_max");
  }
  double y_min() const { return y_min_; }
  double y_max() const { return y_max_; }

 private:
  double y_min_ = 0.0;
  double y_max_ = 1.0;
};

/// (y - y_min) / (y_max - y_min). Deliberately not clamped.
inline double normalize(const NormalizationSpec& spec, double y) {
  return (y - spec.y_min()) / (spec.y_max() - spec.y_min());
}

inline constexpr std::uint64_t kDefaultEnumerationCap = std::uint64_t{1} << 20;

// ---------------------------------------------------------------------------
// design helpers

inline void check_design(const TaskSpec& task, const Design& d) {
  const auto L = static_cast<std::size_t>(task.length);
  if (task.kind == TaskKind::discrete) {
    require(d.symbols.size() == L && d.values.empty(), ErrorKind::shape,
            "design has " + std::to_string(d.symbols.size()) + " symbols, task expects " +
                std::to_string(L));
    const int A = static_cast<int>(task.alphabet.size());
    for (int s : d.symbols)
      require(s >= 0 && s < A, ErrorKind::shape, "symbol index outside alphabet");
  } else {
    require(d.values.size() == L && d.symbols.empty(), ErrorKind::shape,
            "design has " + std::to_string(d.values.size()) + " values, task expects " +
                std::to_string(L));
    for (double v : d.values) require(std::isfinite(v), ErrorKind::shape, "non-finite design value");
  }
}

/// Base-|alphabet| index with the first position most significant, so index
/// order is lexicographic order.
inline Design design_from_index(const TaskSpec& task, std::uint64_t index) {
  const auto A = static_cast<std::uint64_t>(task.alphabet.size());
  Design d;
  d.symbols.assign(static_cast<std::size_t>(task.length), 0);
  for (int i = task.length - 1; i >= 0; --i) {
    d.symbols[static_cast<std::size_t>(i)] = static_cast<int>(index % A);
    index /= A;
  }
  return d;
}

inline std::uint64_t design_index(const TaskSpec& task, const Design& d) {
  const auto A = static_cast<std::uint64_t>(task.alphabet.size());
  std::uint64_t index = 0;
  for (int s : d.symbols) index = index * A + static_cast<std::uint64_t>(s);
  return index;
}

/// Bare symbol string, e.g. "ACGTACGT".
inline std::string design_symbol_string(const TaskSpec& task, const Design& d) {
  std::string out;
  for (int s : d.symbols) out += task.alphabet[static_cast<std::size_t>(s)];
  return out;
}

inline Design design_from_symbol_string(const TaskSpec& task, std::string_view text) {
  Design d;
  std::size_t pos = 0;
  while (pos < text.size()) {
    int match = -1;
    std::size_t match_len = 0;
    for (std::size_t a = 0; a < task.alphabet.size(); ++a) {
      const auto& sym = task.alphabet[a];
      if (sym.size() > match_len && text.substr(pos, sym.size()) == sym) {
        match = static_cast<int>(a);
        match_len = sym.size();
      }
    }
    require(match >= 0, ErrorKind::parse, "unknown symbol in design string '" + std::string(text) + "'");
    d.symbols.push_back(match);
    pos += match_len;
  }
  require(d.symbols.size() == static_cast<std::size_t>(task.length), ErrorKind::shape,
          "design string '" + std::string(text) + "' has wrong length");
  return d;
}

// ---------------------------------------------------------------------------

/// Ground-truth objective. Immutable after construction; parameters are a
/// pure function of (oracle_id, seed).
class Oracle {
 public:
  /// Builds a parametric oracle ("pwm_epistasis" or "sphere") and computes
  /// its normalization.
  static Oracle make(const TaskSpec& task, std::uint64_t enumeration_cap = kDefaultEnumerationCap) {
    task.validate();
    Oracle o;
    o.task_ = task;
    Rng rng = make_rng(task.seed, fnv1a(task.oracle_id));
    const auto L = static_cast<std::size_t>(task.length);
    if (task.oracle_id == "pwm_epistasis") {
      require(task.kind == TaskKind::discrete, ErrorKind::config, "pwm_epistasis needs a discrete task");
      const std::size_t A = task.alphabet.size();
      o.pwm_.assign(L, std::vector<double>(A, 0.0));
      for (auto& row : o.pwm_)
        for (auto& w : row) w = rng.normal();
      o.epistasis_.assign(L, std::vector<double>(L, 0.0));
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = i + 1; j < L; ++j) o.epistasis_[i][j] = kEpistasisScale * rng.normal();
    } else if (task.oracle_id == "sphere") {
      require(task.kind == TaskKind::continuous, ErrorKind::config, "sphere needs a continuous task");
      o.center_.resize(L);
      for (std::size_t i = 0; i < L; ++i) {
        const auto& b = task.bounds[i];
        const double mid = 0.5 * (b.lower + b.upper);
        const double half = 0.5 * (b.upper - b.lower);
        o.center_[i] = mid + half * rng.uniform(-0.5, 0.5);
      }
    } else {
      fail(ErrorKind::config, "unknown oracle_id '" + task.oracle_id + "'");
    }
    o.normalization_ = o.enumerate_extrema(enumeration_cap);
    return o;
  }

  /// Discrete oracle with caller-supplied tables; used to pin hand-made
  /// instances in tests.
  static Oracle from_tables(const TaskSpec& task, std::vector<std::vector<double>> pwm,
                            std::vector<std::vector<double>> epistasis,
                            std::uint64_t enumeration_cap = kDefaultEnumerationCap) {
    task.validate();
    const auto L = static_cast<std::size_t>(task.length);
    require(task.kind == TaskKind::discrete, ErrorKind::config, "tables require a discrete task");
    require(pwm.size() == L && epistasis.size() == L, ErrorKind::shape, "table row count != L");
    for (const auto& row : pwm) require(row.size() == task.alphabet.size(), ErrorKind::shape, "pwm row width");
    for (const auto& row : epistasis) require(row.size() == L, ErrorKind::shape, "epistasis row width");
    Oracle o;
    o.task_ = task;
    o.task_.oracle_id = "pwm_epistasis";
    o.pwm_ = std::move(pwm);
    o.epistasis_ = std::move(epistasis);
    o.normalization_ = o.enumerate_extrema(enumeration_cap);
    return o;
  }

  static Oracle sphere_with_center(const TaskSpec& task, std::vector<double> center) {
    task.validate();
    require(task.kind == TaskKind::continuous, ErrorKind::config, "sphere needs a continuous task");
    require(center.size() == static_cast<std::size_t>(task.length), ErrorKind::shape, "center dimension");
    for (std::size_t i = 0; i < center.size(); ++i)
      require(center[i] >= task.bounds[i].lower && center[i] <= task.bounds[i].upper, ErrorKind::config,
              "sphere center must lie within bounds");
    Oracle o;
    o.task_ = task;
    o.task_.oracle_id = "sphere";
    o.center_ = std::move(center);
    o.normalization_ = o.enumerate_extrema(kDefaultEnumerationCap);
    return o;
  }

  /// Lookup table over the full discrete space, from CSV `design,label`.
  static Oracle from_lookup_csv(const TaskSpec& task, const std::string& path, bool negate_labels = false) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open lookup oracle file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_lookup_text(task, buffer.str(), negate_labels);
  }

  static Oracle from_lookup_text(const TaskSpec& task, const std::string& csv, bool negate_labels = false) {
    task.validate();
    require(task.kind == TaskKind::discrete, ErrorKind::config, "lookup oracle needs a discrete task");
    const std::uint64_t n = task.space_size();
    require(n <= kDefaultEnumerationCap, ErrorKind::capacity, "lookup oracle space exceeds enumeration cap");
    Oracle o;
    o.task_ = task;
    o.task_.oracle_id = "lookup";
    o.table_.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::quiet_NaN());
    std::istringstream lines(csv);
    std::string line;
    require(static_cast<bool>(std::getline(lines, line)), ErrorKind::parse, "lookup csv is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    require(line == "design,label", ErrorKind::parse, "lookup csv header must be 'design,label'");
    std::uint64_t rows = 0;
    while (std::getline(lines, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto comma = line.find(',');
      require(comma != std::string::npos, ErrorKind::parse, "lookup row without comma: " + line);
      const Design d = design_from_symbol_string(task, std::string_view(line).substr(0, comma));
      const std::string label_text = line.substr(comma + 1);
      char* end = nullptr;
      double y = std::strtod(label_text.c_str(), &end);
      require(end != label_text.c_str() && *end == '\0' && std::isfinite(y), ErrorKind::parse,
              "bad label in lookup row: " + line);
      auto& slot = o.table_[static_cast<std::size_t>(design_index(task, d))];
      require(std::isnan(slot), ErrorKind::parse, "duplicate design in lookup csv: " + line);
      slot = negate_labels ? -y : y;
      ++rows;
    }
    require(rows == n, ErrorKind::parse,
            "lookup csv covers " + std::to_string(rows) + " of " + std::to_string(n) + " designs");
    o.normalization_ = o.enumerate_extrema(kDefaultEnumerationCap);
    return o;
  }

  const TaskSpec& task() const { return task_; }
  const NormalizationSpec& normalization() const { return normalization_; }
  const std::vector<std::vector<double>>& pwm() const { return pwm_; }
  const std::vector<std::vector<double>>& epistasis() const { return epistasis_; }
  const std::vector<double>& center() const { return center_; }

  /// Raw label f(design).
  double score(const Design& design) const {
    check_design(task_, design);
    if (task_.oracle_id == "pwm_epistasis") {
      const auto& s = design.symbols;
      double y = 0.0;
      for (std::size_t i = 0; i < s.size(); ++i) y += pwm_[i][static_cast<std::size_t>(s[i])];
      for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = i + 1; j < s.size(); ++j)
          if (s[i] == s[j]) y += epistasis_[i][j];
      return y;
    }
    if (task_.oracle_id == "sphere") {
      double d2 = 0.0;
      for (std::size_t i = 0; i < center_.size(); ++i) {
        const double diff = design.values[i] - center_[i];
        d2 += diff * diff;
      }
      return -d2;
    }
    return table_[static_cast<std::size_t>(design_index(task_, design))];
  }

  double normalized_score(const Design& design) const { return normalize(normalization_, score(design)); }

  /// Exact extrema: full enumeration for discrete spaces, closed form for
  /// the sphere oracle.
  NormalizationSpec enumerate_extrema(std::uint64_t enumeration_cap = kDefaultEnumerationCap) const {
    if (task_.kind == TaskKind::continuous) {
      require(task_.oracle_id == "sphere", ErrorKind::config, "continuous oracle has no analytic extrema");
      double far = 0.0;
      for (std::size_t i = 0; i < center_.size(); ++i) {
        const double lo = center_[i] - task_.bounds[i].lower;
        const double hi = task_.bounds[i].upper - center_[i];
        far += std::max(lo * lo, hi * hi);
      }
      return NormalizationSpec(-far, 0.0);
    }
    const std::uint64_t n = task_.space_size();
    require(n <= enumeration_cap, ErrorKind::capacity,
            "design space of " + std::to_string(n) + " exceeds enumeration cap " + std::to_string(enumeration_cap));
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::uint64_t i = 0; i < n; ++i) {
      const double y = score(design_from_index(task_, i));
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
    return NormalizationSpec(lo, hi);
  }

 private:
  static constexpr double kEpistasisScale = 0.5;

  TaskSpec task_;
  std::vector<std::vector<double>> pwm_;        // L x |alphabet|
  std::vector<std::vector<double>> epistasis_;  // L x L, upper triangle used
  std::vector<double> center_;
  std::vector<double> table_;
  NormalizationSpec normalization_;
};

/// Every design of a discrete task with its label, in index order.
inline std::vector<LabeledDesign> full_space_dataset(const Oracle& oracle,
                                                     std::uint64_t enumeration_cap = kDefaultEnumerationCap) {
  const auto& task = oracle.task();
  require(task.kind == TaskKind::discrete, ErrorKind::config, "full space dataset needs a discrete task");
  const std::uint64_t n = task.space_size();
  require(n <= enumeration_cap, ErrorKind::capacity, "design space exceeds enumeration cap");
  std::vector<LabeledDesign> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    Design d = design_from_index(task, i);
    const double y = oracle.score(d);
    out.push_back({std::move(d), y});
  }
  return out;
}

/// Rounds to three decimals, the precision designs are rendered at.
inline double quantize3(double v) { return std::round(v * 1000.0) / 1000.0; }

/// Uniform random design over the task's space. Continuous values are
/// quantized to three decimals.
inline Design random_design(const TaskSpec& task, Rng& rng) {
  Design d;
  if (task.kind == TaskKind::discrete) {
    d.symbols.resize(static_cast<std::size_t>(task.length));
    for (auto& s : d.symbols) s = static_cast<int>(rng.below(task.alphabet.size()));
  } else {
    d.values.resize(static_cast<std::size_t>(task.length));
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      const auto& b = task.bounds[i];
      d.values[i] = std::clamp(quantize3(rng.uniform(b.lower, b.upper)), b.lower, b.upper);
    }
  }
  return d;
}

/// n distinct uniform designs of a continuous task.
inline std::vector<LabeledDesign> sampled_dataset(const Oracle& oracle, std::size_t n, Rng& rng) {
  std::vector<LabeledDesign> out;
  std::set<Design> seen;
  out.reserve(n);
  std::size_t attempts = 0;
  while (out.size() < n) {
    require(++attempts <= 100 * n, ErrorKind::capacity, "could not sample enough distinct designs");
    Design d = random_design(oracle.task(), rng);
    if (!seen.insert(d).second) continue;
    const double y = oracle.score(d);
    out.push_back({std::move(d), y});
  }
  return out;
}

}  // namespace dibo
