#include "forge/vocabulary.h"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace forge {
namespace {

std::vector<std::string> DefaultSymbols() {
  std::vector<std::string> s = {"<pad>", "<eos>"};
  for (int d = 0; d <= 9; ++d) s.push_back(std::to_string(d));
  for (const char* sym :
       {"+", "-", "*", "=", "(", ")", "<sp>", "<think>", "</think>",
        "<answer>", "</answer>",
        // reflection markers, see ReflectionLexicon::Default()
        "check", "verify", "wait", "mistake", "redo", "first", "step", "goal",
        "need", "backwards",
        // connectives
        ",", ".", "?", "so", "then", "ok", "is", "yes", "no", "we", "get",
        "result", "x", "try", "done"}) {
    s.emplace_back(sym);
  }
  return s;
}

bool HasSpace(const std::string& s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isspace(c) != 0;
  });
}

}  // namespace

const Vocabulary& Vocabulary::Default() {
  static const Vocabulary kDefault(DefaultSymbols());
  return kDefault;
}

Vocabulary::Vocabulary(std::vector<std::string> symbols)
    : symbols_(std::move(symbols)) {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const std::string& sym = symbols_[i];
    if (sym.empty() || HasSpace(sym)) {
      throw std::invalid_argument("vocabulary symbol " + std::to_string(i) +
                                  " is empty or contains whitespace");
    }
    if (!index_.emplace(sym, static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary symbol '" + sym + "'");
    }
    max_symbol_len_ = std::max(max_symbol_len_, sym.size());
  }
  auto reserved = [this](const char* sym) {
    auto it = index_.find(sym);
    if (it == index_.end()) {
      throw std::invalid_argument(std::string("vocabulary lacks reserved symbol '") +
                                  sym + "'");
    }
    return it->second;
  };
  pad_ = reserved("<pad>");
  if (pad_ != 0) throw std::invalid_argument("<pad> must be symbol 0");
  eos_ = reserved("<eos>");
  think_open_ = reserved("<think>");
  think_close_ = reserved("</think>");
  answer_open_ = reserved("<answer>");
  answer_close_ = reserved("</answer>");
  space_ = reserved("<sp>");
  minus_ = reserved("-");
  for (int d = 0; d <= 9; ++d) digits_[d] = reserved(std::to_string(d).c_str());
  reserved("+");
  reserved("*");
  reserved("=");
  reserved("(");
  reserved(")");
}

const std::string& Vocabulary::Symbol(TokenId id) const {
  if (!Contains(id)) {
    throw std::out_of_range("token id " + std::to_string(id) +
                            " outside vocabulary of size " +
                            std::to_string(size()));
  }
  return symbols_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::Find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::Id(std::string_view symbol) const {
  if (auto id = Find(symbol)) return *id;
  throw std::invalid_argument("unknown symbol '" + std::string(symbol) + "'");
}

int Vocabulary::DigitValue(TokenId id) const {
  for (int d = 0; d <= 9; ++d) {
    if (digits_[d] == id) return d;
  }
  return -1;
}

bool Vocabulary::IsStructural(TokenId id) const {
  return id == think_open_ || id == think_close_ || id == answer_open_ ||
         id == answer_close_ || id == eos_ || id == pad_;
}

std::string Vocabulary::Detokenize(std::span<const TokenId> tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += Symbol(tokens[i]);
  }
  return out;
}

TokenSeq Vocabulary::Tokenize(std::string_view text) const {
  TokenSeq out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[pos]))) {
      ++pos;
      continue;
    }
    std::size_t end = pos;
    while (end < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[end]))) {
      ++end;
    }
    std::string_view chunk = text.substr(pos, end - pos);
    while (!chunk.empty()) {
      std::size_t len = std::min(chunk.size(), max_symbol_len_);
      for (; len > 0; --len) {
        if (auto id = Find(chunk.substr(0, len))) {
          out.push_back(*id);
          break;
        }
      }
      if (len == 0) {
        throw std::invalid_argument("unknown symbol in text at '" +
                                    std::string(chunk) + "'");
      }
      chunk.remove_prefix(len);
    }
    pos = end;
  }
  return out;
}

TokenSeq Vocabulary::Number(long long value) const {
  TokenSeq out;
  unsigned long long mag;
  if (value < 0) {
    out.push_back(minus_);
    mag = 0ULL - static_cast<unsigned long long>(value);
  } else {
    mag = static_cast<unsigned long long>(value);
  }
  for (char c : std::to_string(mag)) out.push_back(digits_[c - '0']);
  return out;
}

std::string Vocabulary::Join(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) out += Symbol(t);
  return out;
}

}  // namespace forge
