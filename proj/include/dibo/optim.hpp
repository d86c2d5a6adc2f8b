#pragma once

// AdamW with decoupled weight decay and a linear warmup to a constant rate.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dibo/autograd.hpp"
#include "dibo/error.hpp"

namespace dibo {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long warmup_steps = 100;
};

/// base * min(1, step / warmup) for a 1-based step counter.
inline double warmup_lr(double base, long step, long warmup) {
  if (warmup <= 0) return base;
  return base * std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup));
}

template <class T>
class AdamW {
 public:
  AdamW(const AdamWConfig& cfg, const std::vector<Mat<T>>& params) : cfg_(cfg) {
    require(cfg.lr > 0.0, ErrorKind::config, "learning rate must be positive");
    for (const auto& p : params) {
      m_.push_back(Mat<T>::Zero(p.rows(), p.cols()));
      v_.push_back(Mat<T>::Zero(p.rows(), p.cols()));
    }
  }

  long step_count() const { return step_; }
  double current_lr() const { return warmup_lr(cfg_.lr, std::max(step_, 1L), cfg_.warmup_steps); }
  const std::vector<Mat<T>>& first_moments() const { return m_; }
  const std::vector<Mat<T>>& second_moments() const { return v_; }

  /// One update; returns the learning rate that was applied.
  double step(std::vector<Mat<T>>& params, const std::vector<Mat<T>>& grads) {
    require(params.size() == m_.size() && grads.size() == m_.size(), ErrorKind::shape,
            "optimizer: parameter count changed");
    for (std::size_t i = 0; i < grads.size(); ++i)
      require(grads[i].allFinite(), ErrorKind::numeric, "non-finite gradient in tensor " + std::to_string(i));
    ++step_;
    const double lr = warmup_lr(cfg_.lr, step_, cfg_.warmup_steps);
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(step_)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(step_)));
    const T eps = static_cast<T>(cfg_.eps);
    const T decay = static_cast<T>(1.0 - lr * cfg_.weight_decay);
    const T tlr = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (T(1) - b1) * grads[i];
      v_[i] = b2 * v_[i] + (T(1) - b2) * grads[i].cwiseProduct(grads[i]);
      if (cfg_.weight_decay != 0.0) params[i] *= decay;
      params[i].array() -= tlr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
    return lr;
  }

 private:
  AdamWConfig cfg_;
  long step_ = 0;
  std::vector<Mat<T>> m_, v_;
};

}  // namespace dibo
