#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "affectlab/model.hpp"
#include "affectlab/optim.hpp"

namespace affectlab::nn {

// File layout (integers are little-endian u64):
//   "AFLB1"
//   metadata length, metadata (UTF-8 `key = value` lines: model spec, epoch, optimizer)
//   block count, then per block: name length, name, rank, dims..., byte offset, element width
//   IEEE-754 little-endian payloads
// Adam moments are stored as blocks "adam.m/<param>" and "adam.v/<param>", always 64-bit.

struct NamedBlock {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  ModelSpec spec;
  std::uint64_t epoch = 0;
  std::vector<NamedBlock> blocks;  // model parameters in model order
  std::optional<AdamState> adam;
  std::map<std::string, std::string> extra;  // caller-defined metadata

  const NamedBlock* find(const std::string& name) const;
};

// param_width is 8 (lossless) or 4 (float32 storage for parameters).
void save_checkpoint(const std::filesystem::path& path, Model& model, const AdamState* adam, std::uint64_t epoch,
                     const std::map<std::string, std::string>& extra = {}, int param_width = 8);

// Throws CorruptCheckpoint on a bad magic, truncation or inconsistent tables.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Requires an identical spec; overwrites every parameter.
void restore_parameters(Model& model, const Checkpoint& ckpt);

struct WarmStartResult {
  std::size_t loaded = 0;
  std::vector<std::string> skipped;  // "<name>: <reason>"
  std::size_t frozen = 0;
};

// Copies blocks whose name starts with `match_prefix` and whose name and shape match a
// model parameter. Parameters whose names start with any freeze prefix become
// non-trainable. Zero matches is reported through the result, not thrown.
WarmStartResult warm_start(Model& model, const Checkpoint& ckpt, const std::string& match_prefix = "",
                           const std::vector<std::string>& freeze_prefixes = {});

}  // namespace affectlab::nn
