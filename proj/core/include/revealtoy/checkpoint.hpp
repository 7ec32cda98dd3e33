#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "revealtoy/flow.hpp"
#include "revealtoy/model.hpp"
#include "revealtoy/train.hpp"

namespace revealtoy {

/// Model, loss and optimizer settings; the sidecar `config.json` of a checkpoint.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  AdamConfig adam;
  std::size_t checkpoint_every = 500;
  std::uint64_t init_seed = 1;
};

std::string dump_run_config(const RunConfig& cfg);
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Binary tensor file:
//   "RVLT" | version u32 | count u32 |
//   per tensor: name (u16 length + UTF-8) | dtype u8 | ndim u8 | dims u32[ndim] | little-endian payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_tensors(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> read_tensors(const std::filesystem::path& path);

/// Writes `path` and `config.json` next to it.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const RunConfig& cfg);

struct LoadedCheckpoint {
  ModelParams params;
  RunConfig config;
  std::string id;
};

/// Reads `path` plus the sibling `config.json`; shapes are checked against the config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Adam moments and step count, stored as an RVLT file ("m.<name>", "v.<name>", "step").
void save_optimizer(const std::filesystem::path& path, const Adam& opt);
void load_optimizer(const std::filesystem::path& path, Adam& opt);

/// Short content hash used as a checkpoint identifier.
std::string file_digest(const std::filesystem::path& path);

}  // namespace revealtoy
