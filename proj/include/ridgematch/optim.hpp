#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ridgematch/error.hpp"
#include "ridgematch/params.hpp"

namespace ridgematch {

template <typename T>
struct OptimizerState {
  ParamStore<T> first_moment;
  ParamStore<T> second_moment;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

template <typename T>
OptimizerState<T> make_optimizer(const ParamStore<T>& params, double weight_decay, double beta1 = 0.9,
                                 double beta2 = 0.999, double eps = 1e-8) {
  OptimizerState<T> s;
  for (const auto& [name, m] : params) {
    s.first_moment.add(name, Matrix<T>(m.rows(), m.cols()));
    s.second_moment.add(name, Matrix<T>(m.rows(), m.cols()));
  }
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  s.weight_decay = weight_decay;
  return s;
}

// Decoupled weight decay followed by the bias-corrected Adam update.
template <typename T>
void adamw_step(ParamStore<T>& params, const ParamStore<T>& grads, OptimizerState<T>& st, double lr) {
  if (!(lr >= 0.0)) throw ConfigError("adamw_step: learning rate must be non-negative");
  for (const auto& [name, p] : params) {
    const Matrix<T>& g = grads.get(name);
    require_same_shape(p, g, ("adamw_step: gradient for " + name).c_str());
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (auto& [name, p] : params) {
    const Matrix<T>& g = grads.get(name);
    Matrix<T>& m = st.first_moment.get(name);
    Matrix<T>& v = st.second_moment.get(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
      const double vi = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double pi = static_cast<double>(p[i]) * (1.0 - lr * st.weight_decay);
      pi -= lr * (mi / c1) / (std::sqrt(vi / c2) + st.eps);
      p[i] = static_cast<T>(pi);
    }
  }
}

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& grads, double max_norm) {
  double ss = 0;
  for (const auto& [_, g] : grads)
    for (T v : g.data()) ss += static_cast<double>(v) * v;
  const double norm = std::sqrt(ss);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [_, g] : grads)
      for (T& v : g.data()) v *= s;
  }
  return norm;
}

// base_lr × decay^(number of milestones <= epoch)
inline double lr_schedule(std::size_t epoch, double base_lr, const std::vector<std::size_t>& milestones,
                          double decay) {
  const auto passed = std::count_if(milestones.begin(), milestones.end(),
                                    [epoch](std::size_t m) { return m <= epoch; });
  return base_lr * std::pow(decay, static_cast<double>(passed));
}

}  // namespace ridgematch
