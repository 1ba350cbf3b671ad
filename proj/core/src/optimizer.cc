#include "forge/optimizer.h"

#include <cmath>
#include <stdexcept>

namespace forge {

void Adam::Step(std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads,
                double direction) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam: params/grads tensor count mismatch");
  }
  if (m_.empty()) {
    for (auto p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("adam: tensor list changed between steps");
  }
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    if (p.size() != g.size() || p.size() != m_[k].size()) {
      throw std::invalid_argument("adam: tensor size mismatch");
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] += direction * options_.learning_rate * mhat /
              (std::sqrt(vhat) + options_.epsilon);
    }
  }
}

}  // namespace forge
