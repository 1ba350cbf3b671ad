#ifndef FORGE_POLICY_H_
#define FORGE_POLICY_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "forge/rng.h"
#include "forge/vocabulary.h"

namespace forge {

// Left-padding token for short histories. Vocabulary pins "<pad>" to id 0.
inline constexpr TokenId kPadToken = 0;

struct PolicyDims {
  int vocab = 48;
  int embed = 16;
  int context = 8;
  int hidden = 32;

  int input() const { return context * embed; }
  void Validate() const;  // throws std::invalid_argument on any dim < 1
  bool operator==(const PolicyDims&) const = default;
};

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  std::span<double> Row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> Row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
  bool operator==(const Matrix&) const = default;
};

enum class TensorId { kEmbedding = 0, kW1, kB1, kW2, kB2 };
inline constexpr std::size_t kNumTensors = 5;
inline constexpr std::array<std::string_view, kNumTensors> kTensorNames = {
    "E", "W1", "b1", "W2", "b2"};

// The five tensors of the context-window MLP:
//   x = concat(E[c_1], ..., E[c_C]);  a = tanh(x W1 + b1);  logits = a W2 + b2.
// Tagged so that parameters and gradients are distinct types sharing layout.
template <class Tag>
struct ParamTensors {
  PolicyDims dims;
  Matrix embedding;        // V x d_e
  Matrix w1;               // (C*d_e) x h
  std::vector<double> b1;  // h
  Matrix w2;               // h x V
  std::vector<double> b2;  // V

  static ParamTensors Zeros(const PolicyDims& d) {
    d.Validate();
    ParamTensors t;
    t.dims = d;
    t.embedding = Matrix(d.vocab, d.embed);
    t.w1 = Matrix(d.input(), d.hidden);
    t.b1.assign(d.hidden, 0.0);
    t.w2 = Matrix(d.hidden, d.vocab);
    t.b2.assign(d.vocab, 0.0);
    return t;
  }

  std::array<std::span<double>, kNumTensors> Tensors() {
    return {embedding.data, w1.data, b1, w2.data, b2};
  }
  std::array<std::span<const double>, kNumTensors> Tensors() const {
    return {embedding.data, w1.data, b1, w2.data, b2};
  }
  std::span<double> Tensor(TensorId id) {
    return Tensors()[static_cast<std::size_t>(id)];
  }
  std::span<const double> Tensor(TensorId id) const {
    return Tensors()[static_cast<std::size_t>(id)];
  }

  std::size_t NumValues() const {
    std::size_t n = 0;
    for (auto t : Tensors()) n += t.size();
    return n;
  }
  bool AllFinite() const;

  bool operator==(const ParamTensors&) const = default;
};

struct ParamsTag {};
struct GradientTag {};

using PolicyParams = ParamTensors<ParamsTag>;

// Additive group over parameter-shaped tensors.
struct Gradient : ParamTensors<GradientTag> {
  Gradient() = default;
  explicit Gradient(const PolicyDims& d) : ParamTensors(Zeros(d)) {}

  Gradient& operator+=(const Gradient& other);
  void AddScaled(const Gradient& other, double scale);
  void Scale(double factor);
  bool IsZero() const;
};

// Weights drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases 0.
// The embedding's fan-in is V (one-hot input).
PolicyParams InitParams(std::uint64_t seed, const PolicyDims& dims);

// The C-token window ending just before position `pos` of prompt ++ tokens,
// left-padded with kPadToken.
TokenSeq ContextWindow(std::span<const TokenId> prompt,
                       std::span<const TokenId> tokens, std::size_t pos,
                       int context);

// Raw logits for the next token. `context` must have exactly C ids, each < V.
std::vector<double> NextTokenLogits(const PolicyParams& params,
                                    std::span<const TokenId> context);

// Numerically stable log-softmax.
std::vector<double> LogSoftmax(std::span<const double> logits);
double LogSumExp(std::span<const double> values);

struct SequenceLogprob {
  double total = 0.0;
  std::vector<double> per_token;
};

// log pi(tokens | prompt) as the sum of per-token conditional log-probs.
SequenceLogprob SequenceLogProb(const PolicyParams& params,
                                std::span<const TokenId> prompt,
                                std::span<const TokenId> tokens);

struct DecodeOptions {
  int max_len = 96;
  double temperature = 1.0;
  bool greedy = false;
};

struct Completion {
  TokenSeq prompt;
  TokenSeq tokens;
  // Log-probabilities under the unmodified (temperature 1) model.
  std::vector<double> per_token_logprob;
  double total_logprob = 0.0;

  bool operator==(const Completion&) const = default;
};

// Generates until <eos> (included in tokens) or max_len. The pad token is
// never emitted. Greedy ties resolve to the lowest id.
Completion SampleCompletion(const PolicyParams& params,
                            std::span<const TokenId> prompt,
                            const DecodeOptions& decode, TokenId eos,
                            Rng& rng);

struct WeightedSequence {
  std::span<const TokenId> prompt;
  std::span<const TokenId> tokens;
  double weight = 1.0;
};

// Gradient of sum_i weight_i * log pi(tokens_i | prompt_i).
Gradient GradWeightedLogprob(const PolicyParams& params,
                             std::span<const WeightedSequence> items);

// Per-token variant: gradient of sum_i sum_t w_it * log pi(t_it | ...).
struct TokenWeightedSequence {
  std::span<const TokenId> prompt;
  std::span<const TokenId> tokens;
  std::span<const double> token_weights;  // same length as tokens
};

Gradient GradTokenWeightedLogprob(
    const PolicyParams& params, std::span<const TokenWeightedSequence> items);

}  // namespace forge

#endif  // FORGE_POLICY_H_
