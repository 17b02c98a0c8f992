#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "recdenoise/model.hpp"
#include "recdenoise/train.hpp"

namespace recdenoise {

/// Unreadable, corrupted or mismatched checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  TrainState state;
};

/// JSON with every tensor stored exactly and an FNV-1a checksum over the
/// canonical body.
std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError naming the first field that differs.
void check_model_config(const ModelConfig& stored, const ModelConfig& expected);

}  // namespace recdenoise
