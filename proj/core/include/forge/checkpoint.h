#ifndef FORGE_CHECKPOINT_H_
#define FORGE_CHECKPOINT_H_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "forge/lora.h"
#include "forge/policy.h"
#include "forge/vocabulary.h"

namespace forge {

// Text checkpoint:
//
//   grpo-forge-ckpt v1 V=<V> de=<d_e> C=<C> h=<h>
//   <V symbol lines>
//   E / W1 / b1 / W2 / b2 blocks: a name line, then row-major values
//   LORA <target> r=<r> scale=<scale>   (optional, repeated)
//   followed by A rows then B rows
//
// Values are printed with 17 significant digits, so a load reproduces every
// double exactly.
struct Checkpoint {
  Vocabulary vocab;
  PolicyParams params;
  std::vector<LoraAdapter> adapters;
};

void WriteCheckpoint(std::ostream& out, const Checkpoint& ckpt);
std::string SerializeCheckpoint(const Checkpoint& ckpt);
// Throws std::runtime_error describing the first malformed line or value.
Checkpoint ReadCheckpoint(std::istream& in);
Checkpoint ParseCheckpoint(const std::string& text);

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

// Shortest-safe rendering used everywhere a double is persisted as text.
std::string FormatDouble17(double v);

}  // namespace forge

#endif  // FORGE_CHECKPOINT_H_
