#pragma once

// End-of-conversation detection: weak labels from farewell phrases and dialogue
// length, TF-IDF n-gram features, and an L2-regularised logistic regression.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "escjudge/catalogs.hpp"
#include "escjudge/util.hpp"

namespace escjudge {

// A dialogue reduced to its utterance texts, in order.
struct Dialogue {
  std::string id;
  std::vector<std::string> utterances;
};

struct EocInstance {
  std::string dialogue_id;
  std::size_t position = 0;  // index of the first utterance in the window
  std::string window_text;
  int dialogue_turn_count = 0;
  std::optional<int> label;
};

// Two adjacent utterances joined by a newline.
std::string make_window(std::string_view first, std::string_view second);

struct WeakLabelConfig {
  // Label 1 needs dialogue_turn_count > min_turns. Turns count utterances.
  int min_turns = 6;
};

// One instance per adjacent utterance pair. Label 1 iff the dialogue is longer
// than min_turns and the window contains a farewell phrase.
std::vector<EocInstance> weak_label(const Dialogue& dialogue, const FarewellPhraseList& farewells,
                                    const WeakLabelConfig& cfg = {});

// Lowercase, split on runs of non-alphanumeric bytes, drop tokens shorter than 2.
std::vector<std::string> tokenize(std::string_view text);

struct FeaturizerConfig {
  int ngram_low = 1;
  int ngram_high = 3;
  double max_df = 0.4;
  std::vector<std::string> stopwords;
};

// Stop words are removed before n-grams are formed; n-grams join tokens with a space.
std::vector<std::string> analyze(std::string_view text, const FeaturizerConfig& cfg);

// idf(t) = ln((1 + n_docs) / (1 + df)) + 1
double smoothed_idf(std::size_t df, std::size_t n_docs);

using SparseVector = std::vector<std::pair<std::size_t, double>>;

class EocFeaturizer {
 public:
  // Throws TrainingError when no n-gram survives the max_df and stop-word filters.
  static EocFeaturizer fit(std::span<const std::string> documents, const FeaturizerConfig& cfg);

  // Raw counts times idf, L2-normalised. Unknown n-grams are dropped.
  SparseVector transform(std::string_view text) const;

  const std::map<std::string, std::size_t>& vocabulary() const { return vocabulary_; }
  const std::vector<double>& idf() const { return idf_; }
  const FeaturizerConfig& config() const { return cfg_; }
  std::size_t dimension() const { return idf_.size(); }

  Json to_json() const;
  static EocFeaturizer from_json(const Json& j);

 private:
  FeaturizerConfig cfg_;
  std::map<std::string, std::size_t> vocabulary_;
  std::vector<double> idf_;
};

// Mean log-loss plus (lambda / 2n) * |w|^2. Parameters are the weights followed
// by the bias; the bias is not regularised.
class LogisticObjective {
 public:
  LogisticObjective(std::vector<SparseVector> features, std::vector<int> labels, std::size_t dimension,
                    double l2_lambda);

  double value(std::span<const double> params) const;
  double value_and_gradient(std::span<const double> params, std::span<double> gradient) const;
  std::size_t parameter_count() const { return dimension_ + 1; }

 private:
  std::vector<SparseVector> features_;
  std::vector<int> labels_;
  std::size_t dimension_;
  double lambda_;
};

struct TrainConfig {
  double l2_lambda = 1.0;
  int max_iters = 1000;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  int lbfgs_memory = 10;
};

struct TrainReport {
  int iterations = 0;
  double gradient_norm = 0;
  double objective = 0;
  bool converged = false;
};

struct EocModel {
  std::vector<double> weights;
  double bias = 0;
  double threshold = 0.5;
  EocFeaturizer featurizer;
  TrainReport report;

  Json to_json() const;
  static EocModel from_json(const Json& j);
  void save(const std::filesystem::path& path) const;
  static EocModel load(const std::filesystem::path& path);
};

// Instances are put in a canonical order before training, so any permutation
// of the same training set yields bit-identical weights.
EocModel train(const std::vector<EocInstance>& instances, const EocFeaturizer& featurizer,
               const TrainConfig& cfg = {});

struct Classification {
  double probability = 0;
  bool end_of_conversation = false;
};

Classification classify(const EocModel& model, std::string_view window_text);

struct EvalReport {
  double accuracy = 0;
  double precision_pos = 0;
  double recall_pos = 0;
  double recall_neg = 0;
  double f1_pos = 0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  Json to_json() const;
};

// Throws Error when either class is missing from the truth labels.
EvalReport metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted);
EvalReport evaluate(const EocModel& model, const std::vector<EocInstance>& test);

// 80/20-style split at dialogue granularity so windows of one dialogue never
// straddle train and test.
std::pair<std::vector<Dialogue>, std::vector<Dialogue>> split_by_dialogue(std::vector<Dialogue> dialogues,
                                                                          double train_fraction,
                                                                          std::uint64_t seed);

std::vector<EocInstance> weak_label_all(const std::vector<Dialogue>& dialogues, const FarewellPhraseList& farewells,
                                        const WeakLabelConfig& cfg = {});

// Weak labels, featurizer fitted on the training windows, then logistic regression.
EocModel train_on_dialogues(const std::vector<Dialogue>& dialogues, const FarewellPhraseList& farewells,
                            const FeaturizerConfig& features, const TrainConfig& train_cfg = {},
                            const WeakLabelConfig& label_cfg = {});

// One {"id", "utterances"} object per line.
std::vector<Dialogue> parse_dialogues(std::string_view jsonl);
std::string serialize_dialogues(const std::vector<Dialogue>& dialogues);

}  // namespace escjudge
