#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "gridfed/env.hpp"
#include "gridfed/harness.hpp"
#include "gridfed/neural.hpp"

namespace gridfed {

// Trained policies of one seed, enough to rebuild and evaluate them.
struct Checkpoint {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  int round = 0;
  NormalizationStats stats;
  std::vector<int> client_ids;
  std::vector<ParamVector> policies;
};

// Text form:
//   #gridfed-ckpt v1
//   seed=<s> round=<r> clients=<k>
//   config=<n>          followed by n key=value lines
//   stats_lo=<18 comma-separated values>
//   stats_hi=<18 comma-separated values>
//   layout=<m>          followed by m lines "<name> <offset> <length> <public|private>"
//   client=<id> count=<len>   followed by len values, once per client
// Values use 17 significant digits so they round-trip exactly.
void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace gridfed
