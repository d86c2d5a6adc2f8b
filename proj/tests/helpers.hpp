#pragma once

// Small fixtures shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "dibo/dibo.hpp"

namespace dibo::testing {

inline ModelConfig tiny_config(int vocab, AttentionMode mode = AttentionMode::bidirectional) {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_len = 32;
  c.vocab_size = vocab;
  c.attention = mode;
  c.init_std = 0.3;
  return c;
}

/// Random prompt+response sequence with ids in [2, vocab).
inline TokenSeq random_seq(Rng& rng, int vocab, std::size_t prompt, std::size_t response) {
  TokenSeq s;
  for (std::size_t i = 0; i < prompt + response; ++i) {
    s.ids.push_back(2 + static_cast<int>(rng.below(static_cast<std::size_t>(vocab - 2))));
    s.roles.push_back(i < prompt ? Role::prompt : Role::response);
  }
  return s;
}

template <class T>
Model<double> widen(const Model<T>& m) {
  Rng unused(0);
  Model<double> out(m.config(), unused);
  for (std::size_t i = 0; i < m.params().size(); ++i) out.params()[i] = m.params()[i].template cast<double>();
  return out;
}

/// Largest relative error between `grads` and central differences of `value`
/// (evaluated in 64-bit on `ref`) over `coords` resolvable random coordinates,
/// each from a uniformly chosen tensor; infinity if fewer are found in
/// 20·coords draws. Relative error is |a - n| / max(|a|, |n|, floor).
/// A coordinate whose analytic and numeric values are both below the
/// round-off resolution of the difference quotient, 16·eps·|f|/h, counts as a
/// zero gradient with error 0 (key biases are exactly zero by shift
/// invariance of softmax, and their quotient is pure round-off).
template <class T>
double fd_max_rel_error(Model<double>& ref, const std::function<double(const Model<double>&)>& value,
                        const std::vector<Mat<T>>& grads, int coords, Rng& rng, double h = 1e-5,
                        double floor = 0.0) {
  double worst = 0.0;
  int resolved = 0;
  for (int draw = 0; draw < 20 * coords && resolved < coords; ++draw) {
    const std::size_t i = rng.below(ref.params().size());
    const std::size_t flat = rng.below(static_cast<std::size_t>(ref.params()[i].size()));
    double& w = ref.params()[i].data()[flat];
    const double saved = w;
    w = saved + h;
    const double up = value(ref);
    w = saved - h;
    const double down = value(ref);
    w = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = static_cast<double>(grads[i].data()[flat]);
    const double resolution =
        16.0 * std::numeric_limits<double>::epsilon() * std::max(std::fabs(up), std::fabs(down)) / h;
    const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
    if (scale <= resolution) continue;
    ++resolved;
    worst = std::max(worst, std::fabs(analytic - numeric) / std::max(scale, floor));
  }
  return resolved < coords ? std::numeric_limits<double>::infinity() : worst;
}

/// Sets the output layer so every position predicts softmax(bias).
template <class T>
void set_constant_output(Model<T>& m, const std::vector<double>& bias) {
  m.param("w_out").setZero();
  auto& b = m.param("b_out");
  for (Eigen::Index j = 0; j < b.cols(); ++j) b(0, j) = static_cast<T>(bias[static_cast<std::size_t>(j)]);
}

}  // namespace dibo::testing
