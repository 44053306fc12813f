#include "cxr/sample_loader.hpp"

#include <algorithm>
#include <stdexcept>

#include "cxr/image_io.hpp"
#include "cxr/parallel.hpp"
#include "cxr/synth.hpp"

namespace cxr {

SampleSource make_sample_source(const ModelConfig& config, const PriorMapSet* priors,
                                std::optional<std::filesystem::path> roi_dir,
                                CropMode crop_mode) {
  SampleSource s;
  s.preprocess.crop_mode = crop_mode;
  s.priors = priors;
  s.roi_dir = std::move(roi_dir);
  s.need_roi = uses_roi(config.attention);
  s.need_priors = uses_priors(config.attention);
  s.feature_extent = config.feature_extent();
  if (s.need_priors) {
    if (!priors) throw std::invalid_argument("attention mode needs prior maps but none were given");
    if (static_cast<int>(priors->size()) != config.n_classes) {
      throw std::invalid_argument("prior set has " + std::to_string(priors->size()) +
                                  " classes, model has " + std::to_string(config.n_classes));
    }
  }
  return s;
}

BinaryMask roi_for(const SampleSource& source, const ImageRecord& record, const Tensor& image) {
  if (source.roi_dir) {
    const auto path = *source.roi_dir / record.path.filename();
    if (!std::filesystem::exists(path)) {
      throw std::runtime_error("no ROI mask for " + record.image_id + " at " + path.string());
    }
    BinaryMask m = load_roi_mask(path);
    if (m.height() != image.dim(1) || m.width() != image.dim(2)) {
      throw std::runtime_error("ROI mask " + path.string() + " does not match image " +
                               record.image_id + " resolution");
    }
    return m;
  }
  static const OtsuSegmenter fallback;
  return generate_roi_mask(image, record.image_id, fallback, source.roi_params).mask;
}

Sample load_sample(const SampleSource& source, const ImageRecord& record, Rng* rng) {
  Tensor raw;
  try {
    raw = read_image(record.path);
  } catch (const std::exception& e) {
    throw std::runtime_error("cannot load image " + record.image_id + ": " + e.what());
  }
  Sample s;
  std::tie(s.image, s.window) = preprocess_image(raw, source.preprocess, rng);
  const int e = source.feature_extent;
  if (source.need_roi) {
    s.roi = transform_aligned(grid_cast<double>(roi_for(source, record, raw)), s.window, e, e);
  }
  if (source.need_priors) {
    const int k = static_cast<int>(source.priors->size());
    s.priors = Tensor({k, e, e});
    for (int c = 0; c < k; ++c) {
      const Tensor t = transform_aligned(source.priors->at(c).map, s.window, e, e);
      std::copy(t.data(), t.data() + t.size(), s.priors.slice(c));
    }
  }
  return s;
}

ModelInput load_batch(const SampleSource& source, const std::vector<ImageRecord>& records,
                      const std::vector<std::size_t>& indices, std::optional<std::uint64_t> seed,
                      std::vector<CropWindow>* windows) {
  const int n = static_cast<int>(indices.size());
  std::vector<Sample> samples(n);
  parallel_for(n, [&](std::size_t i) {
    if (seed) {
      Rng rng(derive_seed(*seed, indices[i]));
      samples[i] = load_sample(source, records.at(indices[i]), &rng);
    } else {
      samples[i] = load_sample(source, records.at(indices[i]), nullptr);
    }
  });
  const int e = source.feature_extent;
  ModelInput in;
  in.images = Tensor({n, 3, 224, 224});
  if (source.need_roi) in.roi = Tensor({n, 1, e, e});
  if (source.need_priors) in.priors = Tensor({n, static_cast<int>(source.priors->size()), e, e});
  if (windows) windows->clear();
  for (int i = 0; i < n; ++i) {
    const Sample& s = samples[i];
    if (s.image.size() != in.images.stride0()) {
      throw std::runtime_error("preprocessed image has shape " + to_string(s.image.shape()));
    }
    std::copy(s.image.data(), s.image.data() + s.image.size(), in.images.slice(i));
    if (source.need_roi) std::copy(s.roi.data(), s.roi.data() + s.roi.size(), in.roi.slice(i));
    if (source.need_priors) {
      std::copy(s.priors.data(), s.priors.data() + s.priors.size(), in.priors.slice(i));
    }
    if (windows) windows->push_back(s.window);
  }
  return in;
}

}  // namespace cxr
