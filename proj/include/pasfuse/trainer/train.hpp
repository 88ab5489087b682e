#pragma once

#include "pasfuse/datapipe/loader.hpp"
#include "pasfuse/evalstats/stats.hpp"
#include "pasfuse/models/checkpoint.hpp"
#include "pasfuse/trainer/optim.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

namespace pasfuse {

/// Non-finite loss during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  ModelKind model = ModelKind::mri;
  ScaleProfile profile = ScaleProfile::micro();
  double lr = 1e-4;
  Index batch_size = 8;
  int epochs = 10;
  double label_smoothing = 0.0;
  double dropout = 0.5;
  SchedulerConfig scheduler;
  bool augment = true;
  bool oversample = false;     // duplicate minority-class training samples
  bool class_weights = false;  // inverse-frequency loss weights
  std::uint64_t seed = 0;
  std::string warm_start_mri;  // fusion only: unimodal checkpoints
  std::string warm_start_us;

  /// Per-model defaults: MRI oversamples with dropout 0.5; US uses class
  /// weights and label smoothing 0.1; fusion uses BCE, dropout 0.3, no
  /// scheduler and no augmentation. Paper-profile epochs are 100/200/100.
  static TrainConfig defaults(ModelKind kind, const std::string& profile = "micro");
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Starts from defaults(model, profile) and overlays the given keys.
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const SchedulerConfig& c);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  double lr = 0;
};

struct RunRecord {
  std::string model;
  std::uint64_t seed = 0;
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val_accuracy = 0;
  std::string checkpoint;  // empty when training ran without an output dir
  std::optional<MetricsReport> test;
};

void to_json(nlohmann::json& j, const RunRecord& r);

/// First index of the maximum.
int best_index(const std::vector<double>& values);

/// One training or evaluation example: MRI and/or US uri plus label.
struct Item {
  std::string id;
  std::string mri, us;
  int label = 0;
  bool force_augment = false;
};

/// Samples of the model's modality (or pairs, for fusion) in `split`.
std::vector<Item> items_for(ModelKind kind, const SampleManifest& manifest, Split split);

struct Predictions {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<double> scores;  // probability of the positive class
  double loss = 0;             // mean loss under `loss_opts`
};

/// Eval-mode forward over items in order, without recording gradients.
Predictions predict(Model& model, const std::vector<Item>& items, SampleStore& store, Index batch_size,
                    const LossOptions& loss_opts = {});

/// Augmentation stream for the i-th item of a batch; nullopt leaves it as is.
using AugmentFn = std::function<std::optional<Rng>(std::size_t)>;

/// Stacks the model's inputs for items.
ModelInput make_batch(ModelKind kind, const std::vector<const Item*>& items, SampleStore& store,
                      const AugmentFn& augment = {});

struct TrainOptions {
  std::filesystem::path out_dir;  // best checkpoint + epoch log; empty keeps everything in memory
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  RunRecord record;
  std::unique_ptr<Model> model;  // best-validation weights restored
};

/// Epoch loop: seeded shuffle, per-sample augmentation, forward, loss,
/// backward, Adam; validation every epoch with best-accuracy checkpointing
/// (earliest epoch on ties). The test split, when present, is evaluated
/// with the restored best weights.
TrainResult train(const TrainConfig& config, const SampleManifest& manifest, const TrainOptions& options = {});

struct MultiRunResult {
  std::vector<RunRecord> runs;
  MetricSummary summary;  // over test metrics
};

/// Runs with seeds seed + i, each under out_dir/run<i> when out_dir is set.
MultiRunResult multi_run(const TrainConfig& config, const SampleManifest& manifest, int n_runs,
                         const TrainOptions& options = {});

struct ProtocolConfig {
  TrainConfig mri = TrainConfig::defaults(ModelKind::mri);
  TrainConfig us = TrainConfig::defaults(ModelKind::us);
  TrainConfig fusion = TrainConfig::defaults(ModelKind::fusion);
  int runs = 5;
  std::uint64_t seed = 0;        // run i trains all three models with seed + i
  std::uint64_t split_seed = 0;  // applied to manifests without split assignments
  SplitRatios unimodal_ratios{0.7, 0.1, 0.2};
  SplitRatios paired_ratios{0.6, 0.15, 0.25};
  bool warm_start = true;
};

void to_json(nlohmann::json& j, const ProtocolConfig& c);
void from_json(const nlohmann::json& j, ProtocolConfig& c);

struct ProtocolResult {
  std::vector<std::string> models{"fusion", "mri", "us"};
  std::vector<std::string> test_ids;  // the shared paired test set
  /// Per model (in `models` order), per run: metrics on the shared test set.
  std::vector<std::vector<MetricsReport>> shared_test;
  std::vector<std::vector<RunRecord>> records;
  std::vector<MetricSummary> summaries;
  std::optional<ComparisonReport> comparison;  // needs at least two runs
  /// Per run: largest absolute change of a warm-started branch parameter.
  std::vector<double> branch_delta;
};

/// Trains unimodal MRI and US on their own manifests and fusion on the
/// paired manifest (warm-started from that run's unimodal checkpoints,
/// branches left trainable), then evaluates all three on the paired test
/// set. Unassigned manifests are split first.
ProtocolResult comparative_protocol(const SampleManifest& mri_manifest, const SampleManifest& us_manifest,
                                    const SampleManifest& paired, const ProtocolConfig& config,
                                    const std::filesystem::path& out_dir,
                                    const std::function<void(const std::string&)>& log = {});

void to_json(nlohmann::json& j, const ProtocolResult& r);

}  // namespace pasfuse
