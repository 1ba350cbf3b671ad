#include "forge/sft.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "forge/errors.h"
#include "forge/optimizer.h"

namespace forge {
namespace {

double BatchLoss(const PolicyParams& params, std::span<const Trace> traces,
                 std::span<const std::size_t> batch) {
  double loss = 0.0;
  for (std::size_t idx : batch) {
    const Trace& t = traces[idx];
    loss -= SequenceLogProb(params, t.prompt, t.tokens).total /
            static_cast<double>(t.tokens.size());
  }
  return loss / static_cast<double>(batch.size());
}

// Weights whose weighted log-likelihood gradient is minus the NLL gradient.
std::vector<WeightedSequence> NllItems(std::span<const Trace> traces,
                                       std::span<const std::size_t> batch) {
  std::vector<WeightedSequence> items;
  items.reserve(batch.size());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t idx : batch) {
    const Trace& t = traces[idx];
    items.push_back(
        {t.prompt, t.tokens, -inv_b / static_cast<double>(t.tokens.size())});
  }
  return items;
}

}  // namespace

void SftConfig::Validate() const {
  if (mode == SftMode::kLora && !lora) {
    throw std::invalid_argument("sft lora mode needs lora settings");
  }
  if (mode == SftMode::kFull && lora) {
    throw std::invalid_argument("sft full mode must not carry lora settings");
  }
  if (lora && (lora->rank < 1 || lora->targets.empty())) {
    throw std::invalid_argument("sft lora rank must be >= 1 with >= 1 target");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("sft learning_rate must be > 0");
  if (epochs < 0) throw std::invalid_argument("sft epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("sft batch_size must be >= 1");
}

double NllLoss(const PolicyParams& params,
               std::span<const LoraAdapter> adapters,
               std::span<const Trace> batch) {
  if (batch.empty()) throw std::invalid_argument("nll_loss: empty batch");
  double loss = 0.0;
  for (const Trace& t : batch) {
    const double lp =
        adapters.empty()
            ? SequenceLogProb(params, t.prompt, t.tokens).total
            : AdaptedSequenceLogProb(params, adapters, t.prompt, t.tokens).total;
    loss -= lp / static_cast<double>(t.tokens.size());
  }
  return loss / static_cast<double>(batch.size());
}

SftResult TrainSft(const PolicyParams& start, std::span<const Trace> traces,
                   const SftConfig& config, const SftSinks& sinks) {
  config.Validate();
  if (traces.empty()) throw std::invalid_argument("sft: no traces");
  SftResult result{start, {}, {}};
  if (config.mode == SftMode::kLora) {
    for (std::size_t i = 0; i < config.lora->targets.size(); ++i) {
      const LoraTarget target = config.lora->targets[i];
      result.adapters.push_back(InitAdapter(DeriveSeed(config.seed, "lora", i),
                                            start.dims, target,
                                            config.lora->rank,
                                            config.lora->scale));
    }
  }
  Adam adam(AdamOptions{.learning_rate = config.learning_rate});
  std::vector<std::size_t> order(traces.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(DeriveSeed(config.seed, "sft_epoch", static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.Below(i)]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t off = 0; off < order.size(); off += bs) {
      std::span<const std::size_t> batch(order.data() + off,
                                         std::min(bs, order.size() - off));
      const auto items = NllItems(traces, batch);
      SftResult next = result;
      double loss;
      if (config.mode == SftMode::kFull) {
        loss = BatchLoss(result.base, traces, batch);
        const Gradient grad = GradWeightedLogprob(result.base, items);
        auto p = next.base.Tensors();
        auto g = grad.Tensors();
        adam.Descend(p, g);
      } else {
        const PolicyParams merged = result.Merged();
        loss = BatchLoss(merged, traces, batch);
        // AdapterGrad returns d(sum w log pi); with negative weights that is
        // the NLL gradient.
        const auto grads = AdapterGrad(result.base, result.adapters, items);
        std::vector<std::span<double>> p;
        std::vector<std::span<const double>> g;
        for (std::size_t k = 0; k < next.adapters.size(); ++k) {
          p.push_back(next.adapters[k].a.data);
          p.push_back(next.adapters[k].b.data);
          g.push_back(grads[k].a.data);
          g.push_back(grads[k].b.data);
        }
        adam.Descend(p, g);
      }
      const bool finite =
          std::isfinite(loss) && next.base.AllFinite() &&
          std::all_of(next.adapters.begin(), next.adapters.end(),
                      [](const LoraAdapter& a) {
                        for (double v : a.a.data) if (!std::isfinite(v)) return false;
                        for (double v : a.b.data) if (!std::isfinite(v)) return false;
                        return true;
                      });
      if (!finite) {
        if (sinks.on_failure) sinks.on_failure(result);
        throw NumericalError("non-finite SFT state in epoch " +
                             std::to_string(epoch + 1));
      }
      result.base = std::move(next.base);
      result.adapters = std::move(next.adapters);
      loss_sum += loss;
      ++batches;
    }
    SftEpochRecord rec{epoch + 1, loss_sum / static_cast<double>(batches)};
    result.history.push_back(rec);
    if (sinks.on_epoch) sinks.on_epoch(rec);
  }
  return result;
}

}  // namespace forge
