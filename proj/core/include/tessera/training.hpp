#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tessera/manifest.hpp"
#include "tessera/model.hpp"

namespace tessera {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::int64_t crop_size = 2048;
  std::int64_t batch_size = 2;
  std::int64_t epochs = 500;
  /// Stops after this many optimizer steps when > 0; the schedule spans
  /// the shorter of the two horizons.
  std::int64_t max_steps = 0;
  double lr_init = 1e-3;
  double lr_min = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool augment_rotation = true;
  std::uint64_t seed = 0;
  /// Checkpoints (last.ckpt, best.ckpt) and loss.csv; empty disables output.
  std::string out_dir = "runs/train";
};

std::vector<std::string> validate_config(const TrainConfig& cfg, const ModelConfig& model);

/// lr_min + (lr_init - lr_min) / 2 * (1 + cos(pi * step / total)).
double lr_at(std::int64_t step, std::int64_t total, const TrainConfig& cfg);

/// Mean absolute difference.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

class Adam {
 public:
  Adam(nn::ParamRefs params, double beta1, double beta2, double eps);

  void zero_grad();
  /// One update from the accumulated gradients.
  void step(double lr);
  std::int64_t steps() const { return t_; }

 private:
  nn::ParamRefs params_;
  std::vector<std::vector<float>> m_, v_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

struct TrainPair {
  ImageTensor clear;
  ImageTensor hazy;
  std::string name;
};

std::vector<TrainPair> load_pairs(const Manifest& manifest, const std::string& split);

/// Same crop and quarter-turn rotation applied to both images, drawn from a
/// generator keyed on (seed, epoch, index).
TrainPair augment_pair(const TrainPair& pair, const TrainConfig& cfg, std::int64_t epoch, std::int64_t index);

struct LossRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> history;
  std::int64_t steps = 0;
  double best_epoch_loss = 0.0;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
};

using StepCallback = std::function<void(const LossRecord&)>;

/// All patch mini-batches of a crop and all crops of a batch contribute to
/// one optimizer step. A non-finite loss writes `nan_snapshot.ckpt` and
/// throws TrainingError.
TrainResult train(DehazeModel& model, const std::vector<TrainPair>& pairs, const TrainConfig& cfg,
                  const StepCallback& on_step = {});
TrainResult train(DehazeModel& model, const Manifest& manifest, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

}  // namespace tessera
