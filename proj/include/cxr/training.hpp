#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cxr/data_pipeline.hpp"
#include "cxr/model.hpp"
#include "cxr/prior_maps.hpp"

namespace cxr {

struct TrainConfig {
  int batch_size = 16;
  int epochs = 15;
  double lr0 = 1e-4;
  double weight_decay = 1e-4;
  double lr_decay_factor = 0.1;
  int lr_decay_every = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// AdamW-style decay instead of L2 added to the gradient.
  bool decoupled_weight_decay = false;
  /// Drop images that carry box annotations from the training split.
  bool exclude_bbox_images_from_train = false;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

std::string to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

/// Mean over all entries of the numerically stable binary cross-entropy
/// max(z, 0) - z y + log(1 + exp(-|z|)). Throws on non-finite logits.
double bce_loss(const Tensor& logits, const Tensor& labels);
/// d(bce_loss)/d(logits).
Tensor bce_grad(const Tensor& logits, const Tensor& labels);

/// lr0 * factor^floor(epoch / every), rounded to 15 significant digits.
double lr_at_epoch(int epoch, const TrainConfig& config);

class Adam {
 public:
  Adam(nn::ParamRefs params, const TrainConfig& config);
  void step(double lr);
  long steps() const { return t_; }

 private:
  nn::ParamRefs params_;
  TrainConfig config_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  std::optional<double> val_mean_auc;
  double seconds = 0;
};

struct TrainInputs {
  const Dataset* dataset = nullptr;
  const PriorMapSet* priors = nullptr;
  std::optional<std::filesystem::path> roi_dir;
  /// Receives train_log.csv, best.ckpt and last.ckpt.
  std::filesystem::path out_dir;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::optional<double> best_val_auc;
  int best_epoch = -1;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

/// Records of one split, in dataset order.
std::vector<std::size_t> split_indices(const Dataset& dataset, Split split);

/// One optimisation step on a batch; returns the batch loss.
double train_step(Model& model, Adam& optimizer, const ModelInput& input, const Tensor& labels,
                  double lr);

TrainResult train(Model& model, const TrainInputs& inputs, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace cxr
