#include "uqbench/label_uq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uqbench/error.hpp"
#include "uqbench/io.hpp"

namespace uqbench::label {

int VoteLabel::total() const { return std::accumulate(counts.begin(), counts.end(), 0); }

std::vector<double> to_distributional(const VoteLabel& votes) {
  for (const int c : votes.counts) {
    if (c < 0) throw ParameterError("vote counts must be non-negative");
  }
  const int m = votes.total();
  if (m <= 0) throw ParameterError("a vote label needs at least one vote");
  std::vector<double> y(votes.counts.size());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = static_cast<double>(votes.counts[k]) / m;
  return y;
}

int majority_vote(const VoteLabel& votes) {
  if (votes.counts.empty()) throw ParameterError("empty vote label");
  return static_cast<int>(std::max_element(votes.counts.begin(), votes.counts.end()) - votes.counts.begin());
}

std::vector<double> one_hot(int cls, int k) {
  if (cls < 0 || cls >= k) throw ParameterError("class index out of range");
  std::vector<double> y(static_cast<std::size_t>(k), 0.0);
  y[static_cast<std::size_t>(cls)] = 1.0;
  return y;
}

double kl_loss(const std::vector<double>& y, const std::vector<double>& p) {
  if (y.size() != p.size()) throw ShapeError("label and prediction sizes differ");
  double loss = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] > 0.0) loss += y[k] * std::log(y[k] / p[k]);
  }
  return loss;
}

std::vector<double> kl_gradient_logits(const std::vector<double>& y, const std::vector<double>& logits) {
  if (y.size() != logits.size()) throw ShapeError("label and logit sizes differ");
  const nn::Vector z = Eigen::Map<const nn::Vector>(logits.data(), static_cast<Eigen::Index>(logits.size()));
  const nn::Matrix p = nn::softmax(z);
  std::vector<double> g(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) g[k] = p(static_cast<Eigen::Index>(k), 0) - y[k];
  return g;
}

CalibrationReport ece(const std::vector<double>& confidence, const std::vector<bool>& correct, int n_bins) {
  if (confidence.empty()) throw ParameterError("no predictions to calibrate");
  if (confidence.size() != correct.size()) throw ShapeError("confidence and correctness sizes differ");
  if (n_bins < 1) throw ParameterError("bin count must be positive");
  CalibrationReport r;
  r.bins.resize(static_cast<std::size_t>(n_bins));
  std::vector<double> conf_sum(r.bins.size(), 0.0), hits(r.bins.size(), 0.0);
  for (int b = 0; b < n_bins; ++b) {
    r.bins[static_cast<std::size_t>(b)].lower = static_cast<double>(b) / n_bins;
    r.bins[static_cast<std::size_t>(b)].upper = static_cast<double>(b + 1) / n_bins;
  }
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    if (!(c > 0.0 && c <= 1.0)) throw DomainError("confidence must lie in (0, 1]");
    const auto b = static_cast<std::size_t>(std::clamp(static_cast<int>(std::ceil(c * n_bins)) - 1, 0, n_bins - 1));
    ++r.bins[b].count;
    conf_sum[b] += c;
    hits[b] += correct[i] ? 1.0 : 0.0;
  }
  const auto n = static_cast<double>(confidence.size());
  for (std::size_t b = 0; b < r.bins.size(); ++b) {
    auto& bin = r.bins[b];
    if (bin.count == 0) continue;
    bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
    bin.accuracy = hits[b] / static_cast<double>(bin.count);
    r.ece += static_cast<double>(bin.count) / n * std::abs(bin.accuracy - bin.mean_confidence);
  }
  return r;
}

CalibrationReport ece(const nn::Matrix& probabilities, const std::vector<int>& true_class, int n_bins) {
  if (static_cast<std::size_t>(probabilities.cols()) != true_class.size()) {
    throw ShapeError("one true class per prediction expected");
  }
  std::vector<double> conf(true_class.size());
  std::vector<bool> correct(true_class.size());
  for (Eigen::Index j = 0; j < probabilities.cols(); ++j) {
    Eigen::Index arg = 0;
    conf[static_cast<std::size_t>(j)] = probabilities.col(j).maxCoeff(&arg);
    correct[static_cast<std::size_t>(j)] = arg == true_class[static_cast<std::size_t>(j)];
  }
  return ece(conf, correct, n_bins);
}

nn::Matrix diagonal_confusion(int k, double p) {
  if (k < 2) throw ParameterError("at least two classes are required");
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("diagonal probability must lie in [0, 1]");
  nn::Matrix c = nn::Matrix::Constant(k, k, (1.0 - p) / (k - 1));
  c.diagonal().setConstant(p);
  return c;
}

namespace {

int draw_categorical(rand::Stream& rng, const double* p, int k) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int c = 0; c < k; ++c) {
    acc += p[c];
    if (u < acc) return c;
  }
  // Rounding can leave the cumulative sum just short of 1.
  for (int c = k - 1; c >= 0; --c) {
    if (p[c] > 0.0) return c;
  }
  return k - 1;
}

void check_confusion(const nn::Matrix& confusion, int k) {
  if (confusion.rows() != k || confusion.cols() != k) throw ParameterError("confusion matrix must be K x K");
  for (Eigen::Index r = 0; r < k; ++r) {
    if ((confusion.row(r).array() < 0.0).any() || std::abs(confusion.row(r).sum() - 1.0) > 1e-9) {
      throw ParameterError("confusion rows must be probability vectors");
    }
  }
}

VoteLabel draw_votes(rand::Stream& rng, const double* p, int k, int m) {
  VoteLabel v{std::vector<int>(static_cast<std::size_t>(k), 0)};
  for (int i = 0; i < m; ++i) ++v.counts[static_cast<std::size_t>(draw_categorical(rng, p, k))];
  return v;
}

// Draws class labels uniformly and class-conditional features N(s e_c, I).
void draw_features(ClassificationDataset& ds, int k, int n, double scale, rand::Seed seed) {
  rand::Stream cls(seed, "corpus.class");
  rand::Stream feat(seed, "corpus.features");
  ds.features.resize(k, n);
  ds.items.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int c = static_cast<int>(cls.below(static_cast<std::uint64_t>(k)));
    ds.items[static_cast<std::size_t>(i)].true_class = c;
    for (int d = 0; d < k; ++d) ds.features(d, i) = feat.normal() + (d == c ? scale : 0.0);
  }
}

}  // namespace

std::vector<VoteItem> synth_votes(int k, int n_items, const nn::Matrix& confusion, int m, rand::Seed seed) {
  if (k < 2) throw ParameterError("at least two classes are required");
  if (m < 1) throw ParameterError("at least one vote per item is required");
  if (n_items < 0) throw ParameterError("item count must be non-negative");
  check_confusion(confusion, k);
  const nn::Matrix rows = confusion.transpose();  // column c holds row c contiguously
  rand::Stream cls(seed, "votes.class");
  rand::Stream votes(seed, "votes.draw");
  std::vector<VoteItem> out(static_cast<std::size_t>(n_items));
  for (auto& item : out) {
    item.true_class = static_cast<int>(cls.below(static_cast<std::uint64_t>(k)));
    item.votes = draw_votes(votes, rows.col(item.true_class).data(), k, m);
  }
  return out;
}

double expected_vote_accuracy(int classes, double scale) {
  constexpr int kDraws = 20000;
  rand::Stream rng(rand::Seed{0x5eedULL}, "corpus.calibrate");
  nn::Vector x(classes);
  double sum = 0.0;
  for (int n = 0; n < kDraws; ++n) {
    for (int d = 0; d < classes; ++d) x(d) = rng.normal() + (d == 0 ? scale : 0.0);
    sum += nn::softmax(scale * x)(0, 0);
  }
  return sum / kDraws;
}

double scale_for_vote_accuracy(int classes, double target) {
  if (classes < 2) throw ParameterError("at least two classes are required");
  if (!(target > 1.0 / classes && target < 1.0)) throw ParameterError("target accuracy must lie in (1/K, 1)");
  double lo = 0.0, hi = 1.0;
  while (expected_vote_accuracy(classes, hi) < target) hi *= 2.0;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (expected_vote_accuracy(classes, mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

ClassificationDataset ambiguous_corpus(const CorpusConfig& config, rand::Seed seed) {
  if (config.votes < 1) throw ParameterError("at least one vote per item is required");
  const int k = config.classes;
  const double s = config.feature_scale > 0.0 ? config.feature_scale : scale_for_vote_accuracy(k, config.vote_accuracy);
  ClassificationDataset ds;
  draw_features(ds, k, config.items, s, seed);
  const nn::Matrix posterior = nn::softmax(s * ds.features);
  rand::Stream votes(seed, "corpus.votes");
  for (int i = 0; i < config.items; ++i) {
    ds.items[static_cast<std::size_t>(i)].votes = draw_votes(votes, posterior.col(i).data(), k, config.votes);
  }
  return ds;
}

ClassificationDataset confusion_corpus(const CorpusConfig& config, const nn::Matrix& confusion, rand::Seed seed) {
  if (config.votes < 1) throw ParameterError("at least one vote per item is required");
  const int k = config.classes;
  check_confusion(confusion, k);
  const double s = config.feature_scale > 0.0 ? config.feature_scale : scale_for_vote_accuracy(k, config.vote_accuracy);
  ClassificationDataset ds;
  draw_features(ds, k, config.items, s, seed);
  const nn::Matrix rows = confusion.transpose();
  rand::Stream votes(seed, "corpus.votes");
  for (auto& item : ds.items) item.votes = draw_votes(votes, rows.col(item.true_class).data(), k, config.votes);
  return ds;
}

std::string to_string(LabelEncoding e) { return e == LabelEncoding::one_hot ? "one_hot" : "distributional"; }

ClassifierResult train_classifier(const ClassificationDataset& train, const ClassificationDataset& test,
                                  LabelEncoding encoding, const ClassifierConfig& config, rand::Seed seed) {
  if (train.size() == 0 || test.size() == 0) throw ParameterError("train and test sets must be non-empty");
  const auto k = static_cast<int>(train.items.front().votes.counts.size());
  const auto targets_for = [&](const ClassificationDataset& ds, LabelEncoding e) {
    nn::Matrix y(k, static_cast<Eigen::Index>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& v = ds.items[i].votes;
      const auto col = e == LabelEncoding::one_hot ? one_hot(majority_vote(v), k) : to_distributional(v);
      y.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const nn::Vector>(col.data(), k);
    }
    return y;
  };
  const nn::Matrix y = targets_for(train, encoding);

  std::vector<int> sizes{static_cast<int>(train.features.rows())};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(k);
  ClassifierResult r{nn::Mlp(sizes), {}, 0.0, 0.0, 0.0};
  rand::Stream init(seed, "classifier.init");
  r.net.init(init);
  // KL and cross-entropy differ by the label entropy, a constant, so both use
  // the same gradient softmax(z) - y.
  nn::fit(r.net, train.size(), config.train, rand::derive(seed, "classifier.train"),
          [&](const nn::Mlp& net, std::span<const std::size_t> batch, const nn::DropoutMasks&, nn::Gradients& grad) {
            const auto b = static_cast<Eigen::Index>(batch.size());
            nn::Matrix x(train.features.rows(), b), t(k, b);
            for (Eigen::Index j = 0; j < b; ++j) {
              x.col(j) = train.features.col(static_cast<Eigen::Index>(batch[static_cast<std::size_t>(j)]));
              t.col(j) = y.col(static_cast<Eigen::Index>(batch[static_cast<std::size_t>(j)]));
            }
            nn::Mlp::Tape tape;
            const auto z = net.forward(x, nullptr, &tape);
            nn::Matrix g;
            const double loss = nn::softmax_cross_entropy(z, t, &g);
            grad = net.backward(tape, g);
            return loss;
          });

  const nn::Matrix p = nn::softmax(r.net.forward(test.features));
  std::vector<int> truth(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) truth[i] = test.items[i].true_class;
  r.calibration = ece(p, truth, config.ece_bins);
  std::size_t hits = 0;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    Eigen::Index arg = 0;
    p.col(j).maxCoeff(&arg);
    hits += static_cast<std::size_t>(arg == truth[static_cast<std::size_t>(j)]);
  }
  r.overall_accuracy = static_cast<double>(hits) / static_cast<double>(test.size());
  const auto mean_ce = [&](const nn::Matrix& t) {
    return -(t.array() * p.array().max(1e-300).log()).sum() / static_cast<double>(p.cols());
  };
  r.ce_one_hot = mean_ce(targets_for(test, LabelEncoding::one_hot));
  r.ce_distributional = mean_ce(targets_for(test, LabelEncoding::distributional));
  return r;
}

void write_votes_csv(const std::vector<VoteItem>& items, const std::filesystem::path& path) {
  auto out = io::open_for_write(path);
  const std::size_t k = items.empty() ? 0 : items.front().votes.counts.size();
  std::vector<std::string> header{"item_id", "true_class"};
  for (std::size_t c = 1; c <= k; ++c) header.push_back("c" + std::to_string(c));
  out << io::csv_line(header);
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::vector<std::string> row{std::to_string(i), std::to_string(items[i].true_class)};
    for (const int c : items[i].votes.counts) row.push_back(std::to_string(c));
    out << io::csv_line(row);
  }
}

std::vector<VoteItem> read_votes_csv(const std::filesystem::path& path) {
  const auto table = io::read_csv(path);
  if (table.header.size() < 4 || table.header[0] != "item_id" || table.header[1] != "true_class") {
    throw IoError("vote file " + path.string() + " must start with item_id,true_class,c1,...");
  }
  std::vector<VoteItem> items;
  for (const auto& row : table.rows) {
    VoteItem item{static_cast<int>(io::parse_int(row[1])), {}};
    for (std::size_t c = 2; c < row.size(); ++c) item.votes.counts.push_back(static_cast<int>(io::parse_int(row[c])));
    items.push_back(std::move(item));
  }
  return items;
}

nn::Matrix read_features_csv(const std::filesystem::path& path) {
  const auto table = io::read_csv(path);
  if (table.header.size() < 2 || table.header[0] != "item_id") {
    throw IoError("feature file " + path.string() + " must start with item_id,f1,...");
  }
  nn::Matrix f(static_cast<Eigen::Index>(table.header.size() - 1), static_cast<Eigen::Index>(table.rows.size()));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (std::size_t d = 1; d < table.header.size(); ++d) {
      f(static_cast<Eigen::Index>(d - 1), static_cast<Eigen::Index>(i)) = io::parse_double(table.rows[i][d]);
    }
  }
  return f;
}

void write_features_csv(const nn::Matrix& features, const std::filesystem::path& path) {
  auto out = io::open_for_write(path);
  std::vector<std::string> header{"item_id"};
  for (Eigen::Index d = 1; d <= features.rows(); ++d) header.push_back("f" + std::to_string(d));
  out << io::csv_line(header);
  for (Eigen::Index i = 0; i < features.cols(); ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (Eigen::Index d = 0; d < features.rows(); ++d) row.push_back(io::fmt_double(features(d, i)));
    out << io::csv_line(row);
  }
}

ClassificationDataset load_dataset(const std::filesystem::path& votes_csv, const std::filesystem::path& features_csv) {
  ClassificationDataset ds{read_features_csv(features_csv), read_votes_csv(votes_csv)};
  if (static_cast<std::size_t>(ds.features.cols()) != ds.items.size()) {
    throw ShapeError("feature and vote files list different item counts");
  }
  return ds;
}

void write_calibration_json(const CalibrationReport& report, const std::filesystem::path& path) {
  io::json j;
  j["ece"] = report.ece;
  j["bins"] = io::json::array();
  for (const auto& b : report.bins) {
    j["bins"].push_back({{"lower", b.lower},
                         {"upper", b.upper},
                         {"mean_confidence", b.mean_confidence},
                         {"accuracy", b.accuracy},
                         {"count", b.count}});
  }
  io::write_json(path, j);
}

}  // namespace uqbench::label
