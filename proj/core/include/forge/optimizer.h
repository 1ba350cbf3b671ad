#ifndef FORGE_OPTIMIZER_H_
#define FORGE_OPTIMIZER_H_

#include <span>
#include <vector>

namespace forge {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias-corrected moments over a fixed list of tensors. The tensor
// count and sizes are fixed by the first Step() call.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // Moves `params` against `grads` (descent) or along them (ascent).
  void Descend(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads) {
    Step(params, grads, -1.0);
  }
  void Ascend(std::span<const std::span<double>> params,
              std::span<const std::span<const double>> grads) {
    Step(params, grads, 1.0);
  }

  long steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  void Step(std::span<const std::span<double>> params,
            std::span<const std::span<const double>> grads, double direction);

  AdamOptions options_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace forge

#endif  // FORGE_OPTIMIZER_H_
