#include "escjudge/eoc_detector.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

#include "escjudge/errors.hpp"

namespace escjudge {

std::string make_window(std::string_view first, std::string_view second) {
  std::string w(first);
  w += '\n';
  w += second;
  return w;
}

std::vector<EocInstance> weak_label(const Dialogue& dialogue, const FarewellPhraseList& farewells,
                                    const WeakLabelConfig& cfg) {
  std::vector<EocInstance> out;
  const int turns = static_cast<int>(dialogue.utterances.size());
  for (std::size_t i = 0; i + 1 < dialogue.utterances.size(); ++i) {
    EocInstance inst;
    inst.dialogue_id = dialogue.id;
    inst.position = i;
    inst.window_text = make_window(dialogue.utterances[i], dialogue.utterances[i + 1]);
    inst.dialogue_turn_count = turns;
    inst.label = (turns > cfg.min_turns && farewells.matches(inst.window_text)) ? 1 : 0;
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 2) tokens.push_back(cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c))
      cur.push_back(static_cast<char>(std::tolower(c)));
    else
      flush();
  }
  flush();
  return tokens;
}

std::vector<std::string> analyze(std::string_view text, const FeaturizerConfig& cfg) {
  std::set<std::string> stop(cfg.stopwords.begin(), cfg.stopwords.end());
  std::vector<std::string> tokens;
  for (auto& t : tokenize(text))
    if (!stop.count(t)) tokens.push_back(std::move(t));
  std::vector<std::string> grams;
  for (int n = cfg.ngram_low; n <= cfg.ngram_high; ++n) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string g = tokens[i];
      for (int k = 1; k < n; ++k) g += " " + tokens[i + k];
      grams.push_back(std::move(g));
    }
  }
  return grams;
}

double smoothed_idf(std::size_t df, std::size_t n_docs) {
  return std::log((1.0 + static_cast<double>(n_docs)) / (1.0 + static_cast<double>(df))) + 1.0;
}

EocFeaturizer EocFeaturizer::fit(std::span<const std::string> documents, const FeaturizerConfig& cfg) {
  if (documents.empty()) throw TrainingError("cannot fit a featurizer on an empty corpus");
  if (cfg.ngram_low < 1 || cfg.ngram_high < cfg.ngram_low) throw ConfigError("invalid n-gram range");
  if (!(cfg.max_df > 0 && cfg.max_df <= 1)) throw ConfigError("max_df must lie in (0, 1]");

  std::map<std::string, std::size_t> df;
  for (const auto& doc : documents) {
    auto grams = analyze(doc, cfg);
    std::set<std::string> unique(grams.begin(), grams.end());
    for (const auto& g : unique) ++df[g];
  }
  const double max_count = cfg.max_df * static_cast<double>(documents.size());
  EocFeaturizer f;
  f.cfg_ = cfg;
  for (const auto& [gram, count] : df) {
    if (static_cast<double>(count) > max_count) continue;
    f.vocabulary_.emplace(gram, f.idf_.size());
    f.idf_.push_back(smoothed_idf(count, documents.size()));
  }
  if (f.vocabulary_.empty()) throw TrainingError("empty vocabulary after max_df and stop-word filtering");
  return f;
}

SparseVector EocFeaturizer::transform(std::string_view text) const {
  std::map<std::size_t, double> counts;
  for (const auto& g : analyze(text, cfg_)) {
    auto it = vocabulary_.find(g);
    if (it != vocabulary_.end()) counts[it->second] += 1.0;
  }
  SparseVector v;
  double norm = 0;
  for (const auto& [idx, c] : counts) {
    double x = c * idf_[idx];
    v.emplace_back(idx, x);
    norm += x * x;
  }
  if (norm > 0) {
    norm = std::sqrt(norm);
    for (auto& [idx, x] : v) x /= norm;
  }
  return v;
}

Json EocFeaturizer::to_json() const {
  Json vocab = Json::array();
  std::vector<std::string> by_index(vocabulary_.size());
  for (const auto& [g, i] : vocabulary_) by_index[i] = g;
  return {{"ngram_range", {cfg_.ngram_low, cfg_.ngram_high}},
          {"max_df", cfg_.max_df},
          {"stopwords", cfg_.stopwords},
          {"vocabulary", by_index},
          {"idf", idf_}};
}

EocFeaturizer EocFeaturizer::from_json(const Json& j) {
  EocFeaturizer f;
  f.cfg_.ngram_low = j.at("ngram_range").at(0).get<int>();
  f.cfg_.ngram_high = j.at("ngram_range").at(1).get<int>();
  f.cfg_.max_df = j.at("max_df").get<double>();
  f.cfg_.stopwords = j.at("stopwords").get<std::vector<std::string>>();
  auto vocab = j.at("vocabulary").get<std::vector<std::string>>();
  f.idf_ = j.at("idf").get<std::vector<double>>();
  if (vocab.size() != f.idf_.size()) throw ParseError("featurizer vocabulary and idf sizes differ");
  for (std::size_t i = 0; i < vocab.size(); ++i) f.vocabulary_.emplace(vocab[i], i);
  return f;
}

// ---------------------------------------------------------------------------

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double dot(const SparseVector& x, std::span<const double> w) {
  double s = 0;
  for (const auto& [i, v] : x) s += v * w[i];
  return s;
}

double norm2(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

LogisticObjective::LogisticObjective(std::vector<SparseVector> features, std::vector<int> labels,
                                     std::size_t dimension, double l2_lambda)
    : features_(std::move(features)), labels_(std::move(labels)), dimension_(dimension), lambda_(l2_lambda) {
  if (features_.size() != labels_.size()) throw Error("feature and label counts differ");
  if (features_.empty()) throw TrainingError("empty training set");
}

double LogisticObjective::value(std::span<const double> params) const {
  const double n = static_cast<double>(features_.size());
  const auto w = params.first(dimension_);
  const double b = params[dimension_];
  double loss = 0;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    double z = dot(features_[i], w) + b;
    loss += softplus(z) - labels_[i] * z;
  }
  double reg = 0;
  for (double x : w) reg += x * x;
  return loss / n + 0.5 * lambda_ * reg / n;
}

double LogisticObjective::value_and_gradient(std::span<const double> params, std::span<double> gradient) const {
  const double n = static_cast<double>(features_.size());
  const auto w = params.first(dimension_);
  const double b = params[dimension_];
  std::fill(gradient.begin(), gradient.end(), 0.0);
  double loss = 0;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    double z = dot(features_[i], w) + b;
    loss += softplus(z) - labels_[i] * z;
    double r = sigmoid(z) - labels_[i];
    for (const auto& [j, v] : features_[i]) gradient[j] += r * v;
    gradient[dimension_] += r;
  }
  double reg = 0;
  for (std::size_t j = 0; j < dimension_; ++j) {
    reg += w[j] * w[j];
    gradient[j] = gradient[j] / n + lambda_ * w[j] / n;
  }
  gradient[dimension_] /= n;
  return loss / n + 0.5 * lambda_ * reg / n;
}

namespace {

// Limited-memory BFGS with Armijo backtracking.
TrainReport minimize_lbfgs(const LogisticObjective& obj, std::vector<double>& x, const TrainConfig& cfg) {
  const std::size_t dim = x.size();
  std::vector<double> g(dim), x_new(dim), g_new(dim), dir(dim);
  std::vector<std::vector<double>> s_hist, y_hist;
  std::vector<double> rho_hist;
  double f = obj.value_and_gradient(x, g);
  TrainReport rep;

  for (rep.iterations = 0; rep.iterations < cfg.max_iters; ++rep.iterations) {
    rep.gradient_norm = norm2(g);
    if (rep.gradient_norm <= cfg.tol) {
      rep.converged = true;
      break;
    }
    // Two-loop recursion.
    dir = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      double a = rho_hist[k] * std::inner_product(s_hist[k].begin(), s_hist[k].end(), dir.begin(), 0.0);
      alpha[k] = a;
      for (std::size_t i = 0; i < dim; ++i) dir[i] -= a * y_hist[k][i];
    }
    double gamma = 1.0 / std::max(rep.gradient_norm, 1.0);
    if (!s_hist.empty()) {
      const auto& s = s_hist.back();
      const auto& y = y_hist.back();
      gamma = std::inner_product(s.begin(), s.end(), y.begin(), 0.0) /
              std::inner_product(y.begin(), y.end(), y.begin(), 0.0);
    }
    for (double& d : dir) d *= gamma;
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      double beta = rho_hist[k] * std::inner_product(y_hist[k].begin(), y_hist[k].end(), dir.begin(), 0.0);
      for (std::size_t i = 0; i < dim; ++i) dir[i] += s_hist[k][i] * (alpha[k] - beta);
    }
    for (double& d : dir) d = -d;

    double slope = std::inner_product(g.begin(), g.end(), dir.begin(), 0.0);
    if (slope >= 0) {
      // Not a descent direction; restart from steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t i = 0; i < dim; ++i) dir[i] = -g[i];
      slope = -rep.gradient_norm * rep.gradient_norm;
    }

    double step = 1.0;
    double f_new = 0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < dim; ++i) x_new[i] = x[i] + step * dir[i];
      f_new = obj.value_and_gradient(x_new, g_new);
      if (f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    std::vector<double> s(dim), y(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g_new[i] - g[i];
    }
    double sy = std::inner_product(s.begin(), s.end(), y.begin(), 0.0);
    if (sy > 1e-12) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > cfg.lbfgs_memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
  }
  rep.gradient_norm = norm2(g);
  rep.converged = rep.converged || rep.gradient_norm <= cfg.tol;
  rep.objective = f;
  return rep;
}

}  // namespace

EocModel train(const std::vector<EocInstance>& instances, const EocFeaturizer& featurizer, const TrainConfig& cfg) {
  std::vector<std::pair<std::string, int>> data;
  for (const auto& inst : instances) {
    if (!inst.label) throw TrainingError("training instance without a label");
    data.emplace_back(inst.window_text, *inst.label);
  }
  std::sort(data.begin(), data.end());
  Rng rng(cfg.seed);
  rng.shuffle(data);

  bool has_pos = std::any_of(data.begin(), data.end(), [](const auto& d) { return d.second == 1; });
  bool has_neg = std::any_of(data.begin(), data.end(), [](const auto& d) { return d.second == 0; });
  if (!has_pos || !has_neg) throw TrainingError("training set must contain both classes");

  std::vector<SparseVector> features;
  std::vector<int> labels;
  for (const auto& [text, label] : data) {
    features.push_back(featurizer.transform(text));
    labels.push_back(label);
  }
  LogisticObjective obj(std::move(features), std::move(labels), featurizer.dimension(), cfg.l2_lambda);
  std::vector<double> params(obj.parameter_count(), 0.0);
  EocModel model;
  model.report = minimize_lbfgs(obj, params, cfg);
  model.bias = params.back();
  params.pop_back();
  model.weights = std::move(params);
  model.featurizer = featurizer;
  return model;
}

Classification classify(const EocModel& model, std::string_view window_text) {
  double z = model.bias + dot(model.featurizer.transform(window_text), model.weights);
  Classification c;
  c.probability = sigmoid(z);
  c.end_of_conversation = c.probability >= model.threshold;
  return c;
}

Json EocModel::to_json() const {
  return {{"schema_version", 1},
          {"featurizer", featurizer.to_json()},
          {"weights", weights},
          {"bias", bias},
          {"threshold", threshold},
          {"training",
           {{"iterations", report.iterations},
            {"gradient_norm", report.gradient_norm},
            {"objective", report.objective},
            {"converged", report.converged}}}};
}

EocModel EocModel::from_json(const Json& j) {
  try {
    EocModel m;
    m.featurizer = EocFeaturizer::from_json(j.at("featurizer"));
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.threshold = j.at("threshold").get<double>();
    if (j.contains("training")) {
      const auto& t = j["training"];
      m.report = {t.value("iterations", 0), t.value("gradient_norm", 0.0), t.value("objective", 0.0),
                  t.value("converged", false)};
    }
    if (m.weights.size() != m.featurizer.dimension())
      throw ParseError("model weights do not match the vocabulary size");
    return m;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed EoC model: ") + e.what());
  }
}

void EocModel::save(const std::filesystem::path& path) const { write_file(path, to_json().dump() + "\n"); }

EocModel EocModel::load(const std::filesystem::path& path) { return from_json(Json::parse(read_file(path))); }

EvalReport metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw Error("truth and prediction sizes differ");
  if (truth.empty()) throw Error("cannot evaluate on an empty test set");
  EvalReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == 1 && predicted[i] == 1) ++r.tp;
    else if (truth[i] == 0 && predicted[i] == 1) ++r.fp;
    else if (truth[i] == 0 && predicted[i] == 0) ++r.tn;
    else ++r.fn;
  }
  if (r.tp + r.fn == 0 || r.tn + r.fp == 0) throw Error("degenerate test set: both classes must be present");
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  r.accuracy = ratio(r.tp + r.tn, truth.size());
  r.precision_pos = ratio(r.tp, r.tp + r.fp);
  r.recall_pos = ratio(r.tp, r.tp + r.fn);
  r.recall_neg = ratio(r.tn, r.tn + r.fp);
  r.f1_pos = (r.precision_pos + r.recall_pos) > 0
                 ? 2 * r.precision_pos * r.recall_pos / (r.precision_pos + r.recall_pos)
                 : 0.0;
  return r;
}

EvalReport evaluate(const EocModel& model, const std::vector<EocInstance>& test) {
  std::vector<int> truth, pred;
  for (const auto& inst : test) {
    if (!inst.label) throw Error("test instance without a label");
    truth.push_back(*inst.label);
    pred.push_back(classify(model, inst.window_text).end_of_conversation ? 1 : 0);
  }
  return metrics_from_predictions(truth, pred);
}

Json EvalReport::to_json() const {
  return {{"accuracy", accuracy},   {"precision_pos", precision_pos},
          {"recall_pos", recall_pos}, {"recall_neg", recall_neg},
          {"f1_pos", f1_pos},
          {"confusion", {{"tp", tp}, {"fp", fp}, {"tn", tn}, {"fn", fn}}}};
}

std::pair<std::vector<Dialogue>, std::vector<Dialogue>> split_by_dialogue(std::vector<Dialogue> dialogues,
                                                                          double train_fraction,
                                                                          std::uint64_t seed) {
  std::sort(dialogues.begin(), dialogues.end(), [](const Dialogue& a, const Dialogue& b) { return a.id < b.id; });
  Rng rng(seed);
  rng.shuffle(dialogues);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(dialogues.size())));
  std::vector<Dialogue> train(dialogues.begin(), dialogues.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<Dialogue> test(dialogues.begin() + static_cast<std::ptrdiff_t>(n_train), dialogues.end());
  return {std::move(train), std::move(test)};
}

std::vector<EocInstance> weak_label_all(const std::vector<Dialogue>& dialogues, const FarewellPhraseList& farewells,
                                        const WeakLabelConfig& cfg) {
  std::vector<EocInstance> out;
  for (const auto& d : dialogues) {
    auto inst = weak_label(d, farewells, cfg);
    out.insert(out.end(), std::make_move_iterator(inst.begin()), std::make_move_iterator(inst.end()));
  }
  return out;
}

EocModel train_on_dialogues(const std::vector<Dialogue>& dialogues, const FarewellPhraseList& farewells,
                            const FeaturizerConfig& features, const TrainConfig& train_cfg,
                            const WeakLabelConfig& label_cfg) {
  auto instances = weak_label_all(dialogues, farewells, label_cfg);
  std::vector<std::string> docs;
  docs.reserve(instances.size());
  for (const auto& i : instances) docs.push_back(i.window_text);
  auto featurizer = EocFeaturizer::fit(docs, features);
  return train(instances, featurizer, train_cfg);
}

std::vector<Dialogue> parse_dialogues(std::string_view jsonl) {
  std::vector<Dialogue> out;
  try {
    for (const auto& line : split_lines(jsonl)) {
      if (trim(line).empty()) continue;
      auto j = Json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("utterances").get<std::vector<std::string>>()});
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed dialogue corpus: ") + e.what());
  }
  return out;
}

std::string serialize_dialogues(const std::vector<Dialogue>& dialogues) {
  std::vector<Json> lines;
  for (const auto& d : dialogues) lines.push_back({{"id", d.id}, {"utterances", d.utterances}});
  return to_jsonl(lines);
}

}  // namespace escjudge
