#include "cxr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "cxr/checkpoint.hpp"
#include "cxr/evaluation.hpp"
#include "cxr/sample_loader.hpp"
#include "cxr/synth.hpp"

namespace cxr {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (batch_size < 2) fail("batch_size must be >= 2 (batch norm needs batch statistics)");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(lr0 > 0)) fail("lr0 must be positive");
  if (weight_decay < 0) fail("weight_decay must be non-negative");
  if (!(lr_decay_factor > 0)) fail("lr_decay_factor must be positive");
  if (lr_decay_every < 1) fail("lr_decay_every must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("betas must be in [0, 1)");
  if (!(eps > 0)) fail("eps must be positive");
}

std::string to_json(const TrainConfig& c) {
  nlohmann::ordered_json j = {{"batch_size", c.batch_size},
                              {"epochs", c.epochs},
                              {"lr0", c.lr0},
                              {"weight_decay", c.weight_decay},
                              {"lr_decay_factor", c.lr_decay_factor},
                              {"lr_decay_every", c.lr_decay_every},
                              {"beta1", c.beta1},
                              {"beta2", c.beta2},
                              {"eps", c.eps},
                              {"decoupled_weight_decay", c.decoupled_weight_decay},
                              {"exclude_bbox_images_from_train", c.exclude_bbox_images_from_train},
                              {"seed", c.seed}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  static const std::set<std::string> known = {
      "batch_size", "epochs", "lr0",  "weight_decay", "lr_decay_factor",
      "lr_decay_every", "beta1", "beta2", "eps", "decoupled_weight_decay",
      "exclude_bbox_images_from_train", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw std::invalid_argument("train config: unknown key '" + it.key() + "'");
    }
  }
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.lr0 = j.value("lr0", c.lr0);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.decoupled_weight_decay = j.value("decoupled_weight_decay", c.decoupled_weight_decay);
  c.exclude_bbox_images_from_train =
      j.value("exclude_bbox_images_from_train", c.exclude_bbox_images_from_train);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ------------------------------------------------------------------- loss

double bce_loss(const Tensor& logits, const Tensor& labels) {
  require_same_shape(logits, labels, "bce_loss");
  if (logits.empty()) throw std::invalid_argument("bce_loss: empty input");
  double sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i], y = labels[i];
    if (!std::isfinite(z)) throw std::domain_error("bce_loss: non-finite logit");
    sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return sum / static_cast<double>(logits.size());
}

Tensor bce_grad(const Tensor& logits, const Tensor& labels) {
  require_same_shape(logits, labels, "bce_grad");
  Tensor s = nn::sigmoid(logits);
  const double scale = 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = (s[i] - labels[i]) * scale;
  return s;
}

double lr_at_epoch(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw std::invalid_argument("lr_at_epoch: negative epoch");
  const double lr = config.lr0 * std::pow(config.lr_decay_factor, epoch / config.lr_decay_every);
  // Round to 15 significant digits so 1e-4 * 0.1^3 is 1e-7, not 1.0000000000000002e-07.
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.15g", lr);
  return std::strtod(buf, nullptr);
}

// ------------------------------------------------------------------- Adam

Adam::Adam(nn::ParamRefs params, const TrainConfig& config)
    : params_(std::move(params)), config_(config) {
  for (nn::Param* p : params_.params) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double wd = config_.weight_decay;
  for (std::size_t k = 0; k < params_.params.size(); ++k) {
    nn::Param& p = *params_.params[k];
    const double decay = p.decay ? wd : 0.0;
    double* theta = p.value.data();
    const double* grad = p.grad.data();
    double* m = m_[k].data();
    double* v = v_[k].data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double g = grad[i];
      if (config_.decoupled_weight_decay) {
        theta[i] -= lr * decay * theta[i];
      } else {
        g += decay * theta[i];
      }
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

// --------------------------------------------------------------- training

std::vector<std::size_t> split_indices(const Dataset& dataset, Split split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    if (dataset.records[i].split == split) out.push_back(i);
  }
  return out;
}

namespace {

Tensor label_tensor(const Dataset& ds, const std::vector<std::size_t>& idx) {
  const int k = static_cast<int>(ds.class_names.size());
  Tensor y({static_cast<int>(idx.size()), k});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& labels = ds.records[idx[i]].labels;
    for (int c = 0; c < k; ++c) y.at(static_cast<int>(i), c) = labels.at(c);
  }
  return y;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

double train_step(Model& model, Adam& optimizer, const ModelInput& input, const Tensor& labels,
                  double lr) {
  std::unique_ptr<Model::Cache> cache;
  model.zero_grad();
  const ModelOutput out = model.forward(input, true, &cache);
  if (!all_finite(out.logits)) throw TrainingError("non-finite logits");
  const double loss = bce_loss(out.logits, labels);
  model.backward(*cache, bce_grad(out.logits, labels));
  optimizer.step(lr);
  return loss;
}

TrainResult train(Model& model, const TrainInputs& inputs, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (!inputs.dataset) throw std::invalid_argument("train: no dataset");
  const Dataset& ds = *inputs.dataset;
  if (static_cast<int>(ds.class_names.size()) != model.config().n_classes) {
    throw std::invalid_argument("dataset has " + std::to_string(ds.class_names.size()) +
                                " classes, model has " +
                                std::to_string(model.config().n_classes));
  }

  std::vector<std::size_t> train_idx = split_indices(ds, Split::train);
  if (config.exclude_bbox_images_from_train) {
    std::set<std::string> boxed;
    for (const auto& b : ds.boxes) boxed.insert(b.image_id);
    std::erase_if(train_idx, [&](std::size_t i) { return boxed.count(ds.records[i].image_id); });
  }
  const std::vector<std::size_t> val_idx = split_indices(ds, Split::val);
  if (train_idx.empty()) throw std::invalid_argument("train: the train split is empty");
  if (val_idx.empty()) throw std::invalid_argument("train: the val split is empty");
  if (config.batch_size > static_cast<int>(train_idx.size())) {
    throw std::invalid_argument("train: batch_size " + std::to_string(config.batch_size) +
                                " exceeds the " + std::to_string(train_idx.size()) +
                                " training images");
  }

  const SampleSource train_source =
      make_sample_source(model.config(), inputs.priors, inputs.roi_dir, CropMode::random);
  const SampleSource val_source =
      make_sample_source(model.config(), inputs.priors, inputs.roi_dir, CropMode::center);
  std::vector<ImageRecord> val_records;
  for (std::size_t i : val_idx) val_records.push_back(ds.records[i]);

  std::filesystem::create_directories(inputs.out_dir);
  TrainResult result;
  result.best_checkpoint = inputs.out_dir / "best.ckpt";
  result.last_checkpoint = inputs.out_dir / "last.ckpt";
  std::ofstream log(inputs.out_dir / "train_log.csv", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + (inputs.out_dir / "train_log.csv").string());
  log << "epoch,lr,train_loss,val_mean_auc\n";

  Adam optimizer(model.all_params(), config);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(epoch, config);
    std::vector<std::size_t> order = train_idx;
    Rng shuffle_rng(derive_seed(config.seed, 2 * static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const std::uint64_t crop_seed = derive_seed(config.seed, 2 * static_cast<std::uint64_t>(epoch) + 1);

    double loss_sum = 0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      if (end - start < 2) break;  // batch statistics need two samples
      const std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
      const ModelInput input = load_batch(train_source, ds.records, batch, crop_seed);
      const Tensor labels = label_tensor(ds, batch);
      double loss;
      try {
        loss = train_step(model, optimizer, input, labels, lr);
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ", batch starting at " +
                            ds.records[batch.front()].image_id + ": " + e.what());
      }
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                            ", batch starting at " + ds.records[batch.front()].image_id);
      }
      loss_sum += loss * static_cast<double>(batch.size());
      loss_count += batch.size();
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.train_loss = loss_sum / static_cast<double>(loss_count);
    entry.val_mean_auc = mean_defined(per_class_auc(predict(model, val_source, val_records)));
    entry.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    log << epoch << "," << fmt_double(lr) << "," << fmt_double(entry.train_loss) << ","
        << (entry.val_mean_auc ? fmt_double(*entry.val_mean_auc) : std::string("nan")) << "\n";
    log.flush();

    nlohmann::json meta = {{"epoch", epoch},
                           {"train_loss", entry.train_loss},
                           {"val_mean_auc", entry.val_mean_auc ? nlohmann::json(*entry.val_mean_auc)
                                                               : nlohmann::json(nullptr)}};
    if (entry.val_mean_auc && (!result.best_val_auc || *entry.val_mean_auc > *result.best_val_auc)) {
      result.best_val_auc = entry.val_mean_auc;
      result.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, model, meta.dump());
    }
    save_checkpoint(result.last_checkpoint, model, meta.dump());
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  if (result.best_epoch < 0) {
    // No epoch had a defined validation AUC; fall back to the final weights.
    std::filesystem::copy_file(result.last_checkpoint, result.best_checkpoint,
                               std::filesystem::copy_options::overwrite_existing);
    result.best_epoch = config.epochs - 1;
  }
  return result;
}

}  // namespace cxr
