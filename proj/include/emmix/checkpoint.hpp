#pragma once

// Artifact I/O: the versioned model checkpoint container, the flat
// key=value run-configuration format, and run manifests.
//
// Checkpoint layout: "EMMX" magic, u32 version, u64 JSON header
// length, JSON header (configs, subject table, tensor directory),
// then raw little-endian doubles.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "emmix/model.hpp"

namespace emmix {

struct Checkpoint {
  EmMixformer model;
  TrainConfig train_cfg;
  PreprocessOptions prep;  // windowing used at train time
};

void save_checkpoint(const std::string& path, EmMixformer& model,
                     const TrainConfig& train_cfg,
                     const PreprocessOptions& prep = {});
Checkpoint load_checkpoint(const std::string& path);

// Flat key=value run configuration ('#' starts a comment). Unknown
// keys are rejected so typos surface as usage errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PreprocessOptions prep;
  std::string preset = "full";
  std::map<std::string, std::string> raw;  // parsed file snapshot
};

RunConfig default_run_config();
RunConfig parse_run_config(const std::string& path);
RunConfig run_config_from_map(const std::map<std::string, std::string>& kv);

// FNV-1a 64 over the file bytes, hex encoded.
std::string file_checksum(const std::string& path);

// One manifest JSON per run, written next to its outputs.
void write_manifest(const std::string& path, const std::string& command,
                    const std::map<std::string, std::string>& config_snapshot,
                    std::uint64_t seed,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs);

}  // namespace emmix
