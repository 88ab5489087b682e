#pragma once

#include "pasfuse/models/networks.hpp"

#include <json.hpp>

#include <filesystem>

namespace pasfuse {

struct CheckpointMeta {
  std::string model;  // mri | us | fusion
  ScaleProfile profile;
  std::string version;
  std::uint64_t seed = 0;
  int epoch = -1;
  std::vector<double> val_accuracy;
  std::vector<double> val_loss;
  nlohmann::json extra = nlohmann::json::object();
};

struct Checkpoint {
  TensorDict weights;    // parameters and buffers
  TensorDict optimizer;  // optional optimizer state
  CheckpointMeta meta;
};

/// Weights (and optimizer state under an "optim/" prefix) go to `path` as an
/// NDC1 container; metadata to the sidecar path with extension ".json".
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta, const TensorDict& optimizer = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

/// Rebuilds the model described by the sidecar and loads its weights.
std::unique_ptr<Model> restore_model(const std::filesystem::path& path,
                                     const ModelOptions& options = {});

void to_json(nlohmann::json& j, const CheckpointMeta& m);
void from_json(const nlohmann::json& j, CheckpointMeta& m);

}  // namespace pasfuse
