#include "forge/checkpoint.h"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace forge {
namespace {

constexpr const char* kMagic = "grpo-forge-ckpt";
constexpr const char* kVersion = "v1";

void WriteRows(std::ostream& out, std::span<const double> values,
               std::size_t cols) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << FormatDouble17(values[i]);
    out << ((i + 1) % cols == 0 ? '\n' : ' ');
  }
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::string Line(const char* what) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return line;
    }
    Fail(std::string("unexpected end of file, expected ") + what);
  }

  void Values(std::span<double> out, const std::string& block) {
    for (double& v : out) {
      std::string tok;
      if (!(in_ >> tok)) Fail("block " + block + " is truncated");
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        Fail("block " + block + " has malformed value '" + tok + "'");
      }
    }
    // Consume the rest of the current line.
    std::string rest;
    std::getline(in_, rest);
  }

  [[noreturn]] void Fail(const std::string& msg) const {
    throw std::runtime_error("checkpoint: " + msg + " (near line " +
                             std::to_string(line_no_) + ")");
  }

 private:
  std::istream& in_;
  int line_no_ = 0;
};

int ParseKeyInt(Reader& r, const std::string& field, const std::string& key) {
  const std::string prefix = key + "=";
  if (field.rfind(prefix, 0) != 0) r.Fail("expected " + prefix + "<int>");
  int v = 0;
  const char* b = field.data() + prefix.size();
  const char* e = field.data() + field.size();
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) r.Fail("bad integer in " + field);
  return v;
}

}  // namespace

std::string FormatDouble17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void WriteCheckpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& d = ckpt.params.dims;
  if (ckpt.vocab.size() != static_cast<std::size_t>(d.vocab)) {
    throw std::invalid_argument("checkpoint vocabulary size differs from V");
  }
  out << kMagic << ' ' << kVersion << " V=" << d.vocab << " de=" << d.embed
      << " C=" << d.context << " h=" << d.hidden << '\n';
  for (const auto& s : ckpt.vocab.symbols()) out << s << '\n';
  const auto tensors = ckpt.params.Tensors();
  const std::size_t cols[kNumTensors] = {
      static_cast<std::size_t>(d.embed), static_cast<std::size_t>(d.hidden),
      static_cast<std::size_t>(d.hidden), static_cast<std::size_t>(d.vocab),
      static_cast<std::size_t>(d.vocab)};
  for (std::size_t t = 0; t < kNumTensors; ++t) {
    out << kTensorNames[t] << '\n';
    WriteRows(out, tensors[t], cols[t]);
  }
  for (const auto& a : ckpt.adapters) {
    out << "LORA " << LoraTargetName(a.target) << " r=" << a.rank
        << " scale=" << FormatDouble17(a.scale) << '\n';
    WriteRows(out, a.a.data, a.a.cols);
    WriteRows(out, a.b.data, a.b.cols);
  }
}

std::string SerializeCheckpoint(const Checkpoint& ckpt) {
  std::ostringstream out;
  WriteCheckpoint(out, ckpt);
  return out.str();
}

Checkpoint ReadCheckpoint(std::istream& in) {
  Reader r(in);
  std::istringstream header(r.Line("header"));
  std::string magic, version, fv, fe, fc, fh;
  header >> magic >> version >> fv >> fe >> fc >> fh;
  if (magic != kMagic) r.Fail("not a grpo-forge checkpoint");
  if (version != kVersion) r.Fail("unsupported version '" + version + "'");
  PolicyDims dims{ParseKeyInt(r, fv, "V"), ParseKeyInt(r, fe, "de"),
                  ParseKeyInt(r, fc, "C"), ParseKeyInt(r, fh, "h")};
  try {
    dims.Validate();
  } catch (const std::invalid_argument& e) {
    r.Fail(e.what());
  }
  std::vector<std::string> symbols;
  for (int i = 0; i < dims.vocab; ++i) symbols.push_back(r.Line("symbol"));
  Checkpoint ckpt{Vocabulary(std::move(symbols)), PolicyParams::Zeros(dims), {}};
  auto tensors = ckpt.params.Tensors();
  for (std::size_t t = 0; t < kNumTensors; ++t) {
    const std::string name = r.Line("tensor name");
    if (name != kTensorNames[t]) {
      r.Fail("expected block " + std::string(kTensorNames[t]) + ", got '" +
             name + "'");
    }
    r.Values(tensors[t], name);
  }
  while (true) {
    std::string line;
    try {
      line = r.Line("LORA block");
    } catch (const std::runtime_error&) {
      break;
    }
    std::istringstream ls(line);
    std::string tag, target, fr, fs;
    ls >> tag >> target >> fr >> fs;
    if (tag != "LORA") r.Fail("unexpected line '" + line + "'");
    LoraAdapter a;
    a.target = ParseLoraTarget(target);
    a.rank = ParseKeyInt(r, fr, "r");
    if (fs.rfind("scale=", 0) != 0) r.Fail("expected scale=<real>");
    auto res = std::from_chars(fs.data() + 6, fs.data() + fs.size(), a.scale);
    if (res.ec != std::errc()) r.Fail("bad scale in '" + line + "'");
    auto [d, k] = TargetShape(dims, a.target);
    if (a.rank < 1 || static_cast<std::size_t>(a.rank) > std::min(d, k)) {
      r.Fail("lora rank out of range");
    }
    a.a = Matrix(k, a.rank);
    a.b = Matrix(d, a.rank);
    r.Values(a.a.data, "LORA A");
    r.Values(a.b.data, "LORA B");
    ckpt.adapters.push_back(std::move(a));
  }
  return ckpt;
}

Checkpoint ParseCheckpoint(const std::string& text) {
  std::istringstream in(text);
  return ReadCheckpoint(in);
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  WriteCheckpoint(out, ckpt);
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return ReadCheckpoint(in);
}

}  // namespace forge
