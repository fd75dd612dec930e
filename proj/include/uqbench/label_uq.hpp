#pragma once

// Classification track: distributional labels from annotator votes, the KL
// training loss, expected calibration error, and synthetic vote corpora.

#include <filesystem>
#include <vector>

#include "uqbench/randkit.hpp"
#include "uqbench/tinynet.hpp"

namespace uqbench::label {

struct VoteLabel {
  std::vector<int> counts;
  int total() const;
};

/// counts / M. Throws ParameterError when M == 0 or a count is negative.
std::vector<double> to_distributional(const VoteLabel& votes);
/// Argmax of the counts; ties go to the lowest class index.
int majority_vote(const VoteLabel& votes);
std::vector<double> one_hot(int cls, int k);

/// sum_k y_k log(y_k / p_k) with 0 log 0 = 0.
double kl_loss(const std::vector<double>& y, const std::vector<double>& p);
/// Gradient of kl_loss(y, softmax(z)) w.r.t. z: softmax(z) - y (y sums to 1).
std::vector<double> kl_gradient_logits(const std::vector<double>& y, const std::vector<double>& logits);

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
};

/// Equal-width bins over (0, 1]; a confidence c lands in bin ceil(c n) - 1.
/// `probabilities` is (K x N) with one softmax column per prediction.
CalibrationReport ece(const nn::Matrix& probabilities, const std::vector<int>& true_class, int n_bins = 10);
/// Same, from precomputed confidences and correctness flags.
CalibrationReport ece(const std::vector<double>& confidence, const std::vector<bool>& correct, int n_bins = 10);

struct VoteItem {
  int true_class = 0;
  VoteLabel votes;
};

/// p on the diagonal, (1 - p) / (K - 1) elsewhere.
nn::Matrix diagonal_confusion(int k, double p);

/// True classes uniform over K; M votes per item drawn from the confusion row.
/// Throws ParameterError unless every row is a probability vector and M >= 1.
std::vector<VoteItem> synth_votes(int k, int n_items, const nn::Matrix& confusion, int m, rand::Seed seed);

/// Features (D x N) with votes and ground truth.
struct ClassificationDataset {
  nn::Matrix features;
  std::vector<VoteItem> items;
  std::size_t size() const noexcept { return items.size(); }
};

struct CorpusConfig {
  int classes = 17;
  int items = 2000;
  int votes = 10;
  /// Expected probability that one vote names the true class.
  double vote_accuracy = 0.85;
  /// Class-mean separation; 0 selects the value matching vote_accuracy.
  double feature_scale = 0.0;
};

/// Mean over features x ~ N(s e_c, I) of the Bayes posterior of the true class.
double expected_vote_accuracy(int classes, double scale);
/// Scale s at which expected_vote_accuracy equals the target (bisection).
double scale_for_vote_accuracy(int classes, double target);

/// Class c has features N(s e_c, I_K); each annotator votes by sampling the
/// Bayes posterior softmax(s x), so vote disagreement follows feature ambiguity.
ClassificationDataset ambiguous_corpus(const CorpusConfig& config, rand::Seed seed);

/// Corpus whose features follow the same class-conditional Gaussians while the
/// votes follow an explicit confusion matrix.
ClassificationDataset confusion_corpus(const CorpusConfig& config, const nn::Matrix& confusion, rand::Seed seed);

enum class LabelEncoding { one_hot, distributional };
std::string to_string(LabelEncoding e);

struct ClassifierConfig {
  std::vector<int> hidden{64};
  nn::TrainConfig train{150, 64, {nn::OptimizerConfig::Kind::adam, 1e-3}, 1.0};
  int ece_bins = 10;
};

struct ClassifierResult {
  nn::Mlp net;
  CalibrationReport calibration;
  double overall_accuracy = 0.0;
  /// Mean cross-entropy against the majority-vote one-hot labels.
  double ce_one_hot = 0.0;
  /// Mean cross-entropy against the distributional labels.
  double ce_distributional = 0.0;
};

/// Trains with cross-entropy on majority labels (one_hot) or KL on vote
/// distributions (distributional) and scores the test set. Accuracy and ECE
/// are measured against the true class.
ClassifierResult train_classifier(const ClassificationDataset& train, const ClassificationDataset& test,
                                  LabelEncoding encoding, const ClassifierConfig& config, rand::Seed seed);

// CSV columns: item_id,true_class,c1..cK
void write_votes_csv(const std::vector<VoteItem>& items, const std::filesystem::path& path);
std::vector<VoteItem> read_votes_csv(const std::filesystem::path& path);
/// Feature CSV: item_id,f1..fD, rows in item order. Returns (D x N).
nn::Matrix read_features_csv(const std::filesystem::path& path);
void write_features_csv(const nn::Matrix& features, const std::filesystem::path& path);
/// Pairs an externally supplied feature file with a vote file.
ClassificationDataset load_dataset(const std::filesystem::path& votes_csv, const std::filesystem::path& features_csv);
void write_calibration_json(const CalibrationReport& report, const std::filesystem::path& path);

}  // namespace uqbench::label
