#ifndef FORGE_VOCABULARY_H_
#define FORGE_VOCABULARY_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace forge {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Fixed, hand-specified symbol table. Symbols never contain whitespace, so a
// sequence renders as its symbols joined by single spaces.
class Vocabulary {
 public:
  // The standard 48-symbol table used by every run unless a checkpoint
  // carries a different one.
  static const Vocabulary& Default();

  // Throws std::invalid_argument on empty/duplicate symbols, symbols with
  // whitespace, or a missing reserved symbol.
  explicit Vocabulary(std::vector<std::string> symbols);

  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  const std::string& Symbol(TokenId id) const;
  std::optional<TokenId> Find(std::string_view symbol) const;
  // Throws std::invalid_argument naming the symbol when absent.
  TokenId Id(std::string_view symbol) const;
  bool Contains(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < symbols_.size();
  }

  TokenId pad() const { return pad_; }
  TokenId eos() const { return eos_; }
  TokenId think_open() const { return think_open_; }
  TokenId think_close() const { return think_close_; }
  TokenId answer_open() const { return answer_open_; }
  TokenId answer_close() const { return answer_close_; }
  TokenId space() const { return space_; }
  TokenId minus() const { return minus_; }
  TokenId digit(int d) const { return digits_[d]; }
  // Returns 0-9 for digit tokens, -1 otherwise.
  int DigitValue(TokenId id) const;
  // <think>, </think>, <answer>, </answer>, <eos>, <pad>.
  bool IsStructural(TokenId id) const;

  std::string Detokenize(std::span<const TokenId> tokens) const;
  // Whitespace-separated chunks are split into symbols by greedy
  // longest match, so "12 + 3 =" and "1 2 + 3 =" tokenize identically.
  // Throws std::invalid_argument naming the first unknown fragment.
  TokenSeq Tokenize(std::string_view text) const;

  // Renders a (possibly negative) integer as sign and digit tokens.
  TokenSeq Number(long long value) const;
  // Concatenates symbols without separators, e.g. {"-","8","5"} -> "-85".
  std::string Join(std::span<const TokenId> tokens) const;

  bool operator==(const Vocabulary& other) const {
    return symbols_ == other.symbols_;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t max_symbol_len_ = 0;
  TokenId pad_, eos_, think_open_, think_close_, answer_open_, answer_close_,
      space_, minus_;
  TokenId digits_[10];
};

}  // namespace forge

#endif  // FORGE_VOCABULARY_H_
