#include "uqbench/segmenter.hpp"

#include <algorithm>
#include <cmath>

#include "uqbench/error.hpp"
#include "uqbench/io.hpp"

namespace uqbench::seg {

nn::Matrix window_features(const ImagePatch& patch, int radius) {
  if (radius < 0) throw ParameterError("window radius must be non-negative");
  const int side = 2 * radius + 1;
  nn::Matrix f(side * side, patch.height * patch.width);
  for (int y = 0; y < patch.height; ++y) {
    for (int x = 0; x < patch.width; ++x) {
      const int col = y * patch.width + x;
      int row = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int yy = std::clamp(y + dy, 0, patch.height - 1);
          const int xx = std::clamp(x + dx, 0, patch.width - 1);
          f(row++, col) = patch.at(yy, xx) / 127.5 - 1.0;
        }
      }
    }
  }
  return f;
}

nn::Matrix WindowSegmenter::features(const ImagePatch& patch) const { return window_features(patch, radius); }

nn::Matrix WindowSegmenter::logits(const ImagePatch& patch) const { return net.forward(features(patch)); }

namespace {

// Gathers columns of `m` listed in `batch`.
nn::Matrix gather(const nn::Matrix& m, std::span<const std::size_t> batch) {
  nn::Matrix out(m.rows(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(batch[j]));
  return out;
}

std::vector<int> sizes_for(int inputs, const std::vector<int>& hidden, int outputs) {
  std::vector<int> s{inputs};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(outputs);
  return s;
}

}  // namespace

WindowSegmenter train_segmenter(const std::vector<Scene>& scenes, const SegmenterConfig& config, rand::Seed seed) {
  if (scenes.empty()) throw ParameterError("no training scenes");
  const int side = 2 * config.radius + 1;
  Eigen::Index total = 0;
  for (const auto& s : scenes) total += s.patch.height * s.patch.width;
  nn::Matrix x(side * side, total), y = nn::Matrix::Zero(2, total);
  Eigen::Index col = 0;
  for (const auto& s : scenes) {
    const auto f = window_features(s.patch, config.radius);
    x.middleCols(col, f.cols()) = f;
    for (Eigen::Index i = 0; i < f.cols(); ++i) y(s.patch.mask[static_cast<std::size_t>(i)], col + i) = 1.0;
    col += f.cols();
  }
  WindowSegmenter model{nn::Mlp(sizes_for(side * side, config.hidden, 2)), config.radius};
  rand::Stream rng(seed, "segmenter.init");
  model.net.init(rng);
  nn::fit(model.net, static_cast<std::size_t>(total), config.train, rand::derive(seed, "segmenter.train"),
          [&](const nn::Mlp& net, std::span<const std::size_t> batch, const nn::DropoutMasks&, nn::Gradients& grad) {
            nn::Mlp::Tape tape;
            const auto out = net.forward(gather(x, batch), nullptr, &tape);
            nn::Matrix g;
            const double loss = nn::softmax_cross_entropy(out, gather(y, batch), &g);
            grad = net.backward(tape, g);
            return loss;
          });
  return model;
}

double pixel_accuracy(const WindowSegmenter& model, const std::vector<Scene>& scenes) {
  std::size_t hit = 0, total = 0;
  for (const auto& s : scenes) {
    const auto z = model.logits(s.patch);
    for (Eigen::Index i = 0; i < z.cols(); ++i) {
      hit += static_cast<std::size_t>((z(1, i) > z(0, i)) == (s.patch.mask[static_cast<std::size_t>(i)] == 1));
    }
    total += static_cast<std::size_t>(z.cols());
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

void save_segmenter(const WindowSegmenter& model, const std::filesystem::path& path) {
  io::write_json(path, {{"radius", model.radius}, {"layer_sizes", model.net.layer_sizes()}, {"weights", model.net.flatten()}});
}

WindowSegmenter load_segmenter(const std::filesystem::path& path) {
  const auto j = io::read_json(path);
  try {
    WindowSegmenter m{nn::Mlp(j.at("layer_sizes").get<std::vector<int>>()), j.at("radius").get<int>()};
    m.net.unflatten(j.at("weights").get<std::vector<double>>());
    return m;
  } catch (const io::json::exception& e) {
    throw IoError("bad segmenter file " + path.string() + ": " + e.what());
  }
}

VarianceHead train_variance_head(const WindowSegmenter& baseline, const std::vector<Scene>& scenes,
                                 CorruptionKind kind, double n, const CorruptionOptions& options,
                                 const VarianceHeadConfig& config, rand::Seed seed) {
  if (scenes.empty()) throw ParameterError("no training scenes");
  if (config.copies < 1) throw ParameterError("at least one corrupted copy per scene is required");
  const int side = 2 * baseline.radius + 1;
  Eigen::Index total = 0;
  for (const auto& s : scenes) total += static_cast<Eigen::Index>(s.patch.size()) * config.copies;
  nn::Matrix x(side * side, total), r(2, total);
  Eigen::Index col = 0;
  std::uint64_t draw = 0;
  for (const auto& s : scenes) {
    const auto clean = baseline.logits(s.patch);
    for (int k = 0; k < config.copies; ++k) {
      const auto noisy = corrupt(s.patch, kind, n, rand::derive(seed, "variance_head.corrupt", draw++), options);
      const auto f = baseline.features(noisy);
      x.middleCols(col, f.cols()) = f;
      r.middleCols(col, f.cols()) = baseline.net.forward(f) - clean;
      col += f.cols();
    }
  }
  VarianceHead head{nn::Mlp(sizes_for(side * side, config.hidden, 2)), baseline.radius};
  rand::Stream rng(seed, "variance_head.init");
  head.net.init(rng);
  nn::fit(head.net, static_cast<std::size_t>(total), config.train, rand::derive(seed, "variance_head.train"),
          [&](const nn::Mlp& net, std::span<const std::size_t> batch, const nn::DropoutMasks&, nn::Gradients& grad) {
            nn::Mlp::Tape tape;
            const auto s = net.forward(gather(x, batch), nullptr, &tape);
            const auto res = gather(r, batch);
            const double count = static_cast<double>(s.size());
            nn::Matrix g(s.rows(), s.cols());
            double loss = 0.0;
            for (Eigen::Index j = 0; j < s.cols(); ++j) {
              for (Eigen::Index c = 0; c < s.rows(); ++c) {
                const double lv = s(c, j);
                const double clamped = std::clamp(lv, nn::kMinLogVar, nn::kMaxLogVar);
                const double w = std::exp(-clamped) * res(c, j) * res(c, j);
                loss += 0.5 * (w + clamped);
                g(c, j) = (lv == clamped ? 0.5 * (1.0 - w) : 0.0) / count;
              }
            }
            grad = net.backward(tape, g);
            return loss / count;
          });
  return head;
}

LogitField corrupted_replicates(const WindowSegmenter& baseline, const ImagePatch& clean, CorruptionKind kind,
                                double n, int R, const CorruptionOptions& options, rand::Seed seed) {
  if (R < 1) throw ParameterError("replicate count must be positive");
  auto field = LogitField::from_replicates(clean.height, clean.width, 2, R);
  for (int rep = 0; rep < R; ++rep) {
    const auto z = baseline.logits(corrupt(clean, kind, n, rand::derive(seed, "replicate", static_cast<std::uint64_t>(rep)), options));
    for (Eigen::Index i = 0; i < z.cols(); ++i) {
      const int y = static_cast<int>(i) / clean.width, x = static_cast<int>(i) % clean.width;
      for (int c = 0; c < 2; ++c) field.replicate(y, x, c, rep) = z(c, i);
    }
  }
  return field;
}

LogitField bnn_moments(const WindowSegmenter& baseline, const VarianceHead& head, const ImagePatch& observed) {
  auto field = LogitField::from_moments(observed.height, observed.width, 2);
  const auto f = baseline.features(observed);
  const auto z = baseline.net.forward(f);
  const auto s = head.radius == baseline.radius ? head.net.forward(f) : head.net.forward(window_features(observed, head.radius));
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    for (int c = 0; c < 2; ++c) {
      const auto e = static_cast<std::size_t>(i) * 2 + static_cast<std::size_t>(c);
      field.mean[e] = z(c, i);
      field.variance[e] = std::exp(std::clamp(s(c, i), nn::kMinLogVar, nn::kMaxLogVar));
    }
  }
  return field;
}

}  // namespace uqbench::seg
