#pragma once

// Toy per-pixel segmenter: an MLP over a (2r+1)^2 intensity window producing
// two logits per pixel, plus a log-variance head for BNN-style predictions.

#include <filesystem>
#include <vector>

#include "uqbench/seg_entropy.hpp"
#include "uqbench/tinynet.hpp"

namespace uqbench::seg {

struct SegmenterConfig {
  int radius = 2;
  std::vector<int> hidden{32, 32};
  nn::TrainConfig train{20, 256, {nn::OptimizerConfig::Kind::adam, 3e-3}, 0.9};
};

struct WindowSegmenter {
  nn::Mlp net;
  int radius = 2;

  /// (2r+1)^2 x (H*W) features, intensities mapped to [-1, 1], border replicated.
  nn::Matrix features(const ImagePatch& patch) const;
  /// 2 x (H*W) logits, column index y * W + x.
  nn::Matrix logits(const ImagePatch& patch) const;
};

nn::Matrix window_features(const ImagePatch& patch, int radius);

/// Cross-entropy training on clean scenes with their masks as targets.
WindowSegmenter train_segmenter(const std::vector<Scene>& scenes, const SegmenterConfig& config, rand::Seed seed);

/// Fraction of pixels whose argmax logit matches the mask.
double pixel_accuracy(const WindowSegmenter& model, const std::vector<Scene>& scenes);

void save_segmenter(const WindowSegmenter& model, const std::filesystem::path& path);
WindowSegmenter load_segmenter(const std::filesystem::path& path);

/// Predicts per-pixel logit log-variances from the corrupted input window.
struct VarianceHead {
  nn::Mlp net;
  int radius = 2;
};

struct VarianceHeadConfig {
  std::vector<int> hidden{32, 32};
  /// Corrupted copies drawn per training scene.
  int copies = 2;
  nn::TrainConfig train{10, 256, {nn::OptimizerConfig::Kind::adam, 3e-3}, 0.9};
};

/// Fits the head by Gaussian NLL on the logit residuals
/// baseline(corrupt(scene)) - baseline(scene) for one corruption setting.
VarianceHead train_variance_head(const WindowSegmenter& baseline, const std::vector<Scene>& scenes,
                                 CorruptionKind kind, double n, const CorruptionOptions& options,
                                 const VarianceHeadConfig& config, rand::Seed seed);

/// Baseline logits of R independently corrupted copies of `clean`.
LogitField corrupted_replicates(const WindowSegmenter& baseline, const ImagePatch& clean, CorruptionKind kind,
                                double n, int R, const CorruptionOptions& options, rand::Seed seed);

/// BNN-style moments: mean from the baseline on the observed patch, variance from the head.
LogitField bnn_moments(const WindowSegmenter& baseline, const VarianceHead& head, const ImagePatch& observed);

}  // namespace uqbench::seg
