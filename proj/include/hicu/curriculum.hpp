#pragma once

// Level-by-level curriculum training over the augmented label tree, with
// query knowledge transfer between levels, plus the flat baseline.
//
// Random streams are derived from the seed by purpose so that levels trained
// for zero epochs consume no randomness:
//   encoder stream  - word embeddings, conv kernel, correction transform
//   decoder stream  - one per level: query (when random), output layer
//   shuffle stream  - batch order, advanced once per epoch

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hicu/data_io.hpp"
#include "hicu/error.hpp"
#include "hicu/label_tree.hpp"
#include "hicu/loss.hpp"
#include "hicu/metrics.hpp"
#include "hicu/network.hpp"
#include "hicu/poincare.hpp"
#include "hicu/serialize.hpp"
#include "hicu/text_io.hpp"

namespace hicu {

enum class TrainMode { hicu, flat };

inline std::string_view mode_name(TrainMode m) { return m == TrainMode::hicu ? "hicu" : "flat"; }

inline TrainMode parse_mode(std::string_view s) {
  if (s == "hicu") return TrainMode::hicu;
  if (s == "flat") return TrainMode::flat;
  fail(ErrorCode::usage, "unknown mode '" + std::string(s) + "' (expected hicu|flat)");
}

struct CurriculumConfig {
  std::vector<int> epochs_per_level{2, 3, 5, 10, 50};
  int batch_size = 8;
  double learning_rate = 1e-3;
  LossConfig loss;
  std::string stop_metric = "micro_f1";  // micro_f1 | macro_f1 | micro_auc | macro_auc | p@K
  int patience = 10;
  bool transfer_output_layer = false;
  bool carry_optimizer_state = false;
  bool reinit_correction = false;
  bool fresh_final_decoder = false;
  int workers = 1;
  std::uint64_t seed = 0;
  std::vector<int> p_at_k{5, 8, 15};

  void validate(int max_level) const {
    require(static_cast<int>(epochs_per_level.size()) == max_level, ErrorCode::config,
            "epochs per level must list " + std::to_string(max_level) + " entries");
    for (int e : epochs_per_level) require(e >= 0, ErrorCode::config, "epoch counts must be >= 0");
    require(batch_size >= 1, ErrorCode::config, "batch size must be >= 1");
    require(learning_rate > 0, ErrorCode::config, "learning rate must be positive");
    require(patience >= 0, ErrorCode::config, "patience must be >= 0");
    require(workers >= 1, ErrorCode::config, "workers must be >= 1");
    if (loss.kind == LossKind::asl) loss.asl.validate();
    metric_value(EvalResult{});  // rejects unknown metric names
  }

  double metric_value(const EvalResult& r) const {
    double v = 0.0;
    if (stop_metric == "micro_f1") v = r.micro_f1;
    else if (stop_metric == "macro_f1") v = r.macro_f1;
    else if (stop_metric == "micro_auc") v = r.micro_auc;
    else if (stop_metric == "macro_auc") v = r.macro_auc;
    else if (stop_metric.rfind("p@", 0) == 0) {
      const int k = static_cast<int>(parse_integer(std::string_view(stop_metric).substr(2)));
      auto it = r.p_at_k.find(k);
      v = it == r.p_at_k.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
    } else {
      fail(ErrorCode::config, "unknown early-stopping metric '" + stop_metric + "'");
    }
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
  }
};

inline json to_json(const CurriculumConfig& c) {
  return {{"epochs_per_level", c.epochs_per_level},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"loss", loss_name(c.loss.kind)},
          {"asl", to_json(c.loss.asl)},
          {"stop_metric", c.stop_metric},
          {"patience", c.patience},
          {"transfer_output_layer", c.transfer_output_layer},
          {"carry_optimizer_state", c.carry_optimizer_state},
          {"reinit_correction", c.reinit_correction},
          {"fresh_final_decoder", c.fresh_final_decoder},
          {"workers", c.workers},
          {"seed", c.seed},
          {"p_at_k", c.p_at_k}};
}

// ---------------------------------------------------------------------------
// Knowledge transfer

// Column i of the result is column parent_map[i] of the previous level's queries.
inline MatrixXd knowledge_transfer(const MatrixXd& query, std::span<const std::size_t> parent_map) {
  MatrixXd next(query.rows(), static_cast<Eigen::Index>(parent_map.size()));
  for (std::size_t i = 0; i < parent_map.size(); ++i) {
    require(parent_map[i] < static_cast<std::size_t>(query.cols()), ErrorCode::dimension,
            "knowledge transfer: parent index " + std::to_string(parent_map[i]) + " out of range");
    next.col(static_cast<Eigen::Index>(i)) = query.col(static_cast<Eigen::Index>(parent_map[i]));
  }
  return next;
}

inline std::mt19937_64 derived_stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

inline constexpr std::uint64_t kEncoderStream = 0x454e43;
inline constexpr std::uint64_t kDecoderStream = 0x444543;
inline constexpr std::uint64_t kShuffleStream = 0x534855;

// Decoder for `level`. Without a previous decoder (first level, flat
// training) the queries are drawn Xavier-uniform; otherwise they are
// transferred from the parents. The output layer is drawn fresh unless
// transfer_output is set. The correction transform is carried over.
inline DecoderParams init_level_decoder(const DecoderParams* prev, const AugmentedLabelTree& tree, int level,
                                        const ModelConfig& model, bool transfer_output, std::mt19937_64& rng) {
  require(level >= 1 && level <= tree.max_level(), ErrorCode::domain, "decoder level out of range");
  const auto labels = static_cast<Eigen::Index>(tree.level_size(level));
  const auto df = model.feature_dim;
  DecoderParams dec;
  std::vector<std::size_t> parents;
  if (prev != nullptr) {
    require(level > 1, ErrorCode::domain, "the first level has no parent decoder");
    parents = parent_index_map(tree, level - 1);
    require(prev->query.cols() == static_cast<Eigen::Index>(tree.level_size(level - 1)), ErrorCode::dimension,
            "previous decoder does not match the parent level");
    dec.query = knowledge_transfer(prev->query, parents);
    dec.fc_weight = prev->fc_weight;
    dec.fc_bias = prev->fc_bias;
  } else {
    dec.query = xavier_uniform(df, labels, df, static_cast<double>(labels), rng);
  }
  if (prev != nullptr && transfer_output) {
    dec.out_weight = knowledge_transfer(prev->out_weight, parents);
    dec.out_bias.resize(labels);
    for (Eigen::Index i = 0; i < labels; ++i) dec.out_bias[i] = prev->out_bias[static_cast<Eigen::Index>(parents[static_cast<std::size_t>(i)])];
  } else {
    dec.out_weight = xavier_uniform(df, labels, df, static_cast<double>(labels), rng);
    dec.out_bias = VectorXd::Zero(labels);
  }
  return dec;
}

// ---------------------------------------------------------------------------
// Reports and checkpoints

struct EpochRecord {
  int level = 0;
  int epoch = 0;  // 1-based within the level
  double train_loss = 0.0;
  std::optional<EvalResult> valid;
  bool improved = false;
};

inline json to_json(const EpochRecord& e) {
  return {{"type", "epoch"},
          {"level", e.level},
          {"epoch", e.epoch},
          {"train_loss", number_or_null(e.train_loss)},
          {"valid", e.valid ? to_json(*e.valid) : json(nullptr)},
          {"improved", e.improved}};
}

inline EpochRecord epoch_record_from_json(const json& j) {
  EpochRecord e;
  e.level = j.at("level").get<int>();
  e.epoch = j.at("epoch").get<int>();
  e.train_loss = number_or_nan(j.at("train_loss"));
  if (!j.at("valid").is_null()) e.valid = eval_result_from_json(j.at("valid"));
  e.improved = j.at("improved").get<bool>();
  return e;
}

struct TrainReport {
  json config;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::string stop_reason;

  std::string serialize() const {
    std::string out;
    for (const auto& e : epochs) out += to_json(e).dump() + "\n";
    json summary = {{"type", "summary"},
                    {"best_epoch", best_epoch},
                    {"best_metric", number_or_null(best_metric)},
                    {"stop_reason", stop_reason},
                    {"epochs_run", epochs.size()},
                    {"seed", seed},
                    {"config", config}};
    out += summary.dump() + "\n";
    return out;
  }
};

struct EarlyStopState {
  double best_value = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int bad_epochs = 0;
};

// Self-contained training state: enough to resume training or to evaluate
// without the original tree and embedding files.
struct TrainingCheckpoint {
  json config;
  ModelConfig model;
  int max_len = 4096;
  int level = 1;
  int epoch = 0;
  bool finished = false;
  std::string stop_reason;
  Parameters params;
  AdamState adam;
  std::string rng_state;
  EarlyStopState early_stop;
  std::optional<Parameters> best_params;
  std::vector<EpochRecord> history;
  std::vector<std::string> vocab;   // non-reserved words in index order
  std::vector<std::string> labels;  // labels of `level`, column order
  MatrixXd hyperbolic_rows;         // labels x d_h (zero columns without correction)

  std::string serialize() const {
    json j;
    j["format"] = "hicu-checkpoint";
    j["version"] = 1;
    j["config"] = config;
    j["model"] = to_json(model);
    j["max_len"] = max_len;
    j["level"] = level;
    j["epoch"] = epoch;
    j["finished"] = finished;
    j["stop_reason"] = stop_reason;
    j["params"] = parameters_to_json(params);
    j["adam"] = {{"learning_rate", adam.learning_rate},
                 {"beta1", adam.beta1},
                 {"beta2", adam.beta2},
                 {"eps", adam.eps},
                 {"step", adam.step},
                 {"first_moment", parameters_to_json(adam.first_moment)},
                 {"second_moment", parameters_to_json(adam.second_moment)}};
    j["rng_state"] = rng_state;
    j["early_stop"] = {{"best_value", number_or_null(early_stop.best_value)},
                       {"best_epoch", early_stop.best_epoch},
                       {"bad_epochs", early_stop.bad_epochs}};
    j["best_params"] = best_params ? parameters_to_json(*best_params) : json(nullptr);
    j["history"] = json::array();
    for (const auto& e : history) j["history"].push_back(to_json(e));
    j["vocab"] = vocab;
    j["labels"] = labels;
    j["hyperbolic_rows"] = tensor_to_json(hyperbolic_rows);
    return j.dump() + "\n";
  }

  static TrainingCheckpoint parse(std::string_view text) {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      fail(ErrorCode::parse, std::string("checkpoint: ") + e.what());
    }
    try {
      require(j.at("format") == "hicu-checkpoint" && j.at("version") == 1, ErrorCode::parse,
              "not a version-1 checkpoint");
      TrainingCheckpoint c;
      c.config = j.at("config");
      c.model = model_config_from_json(j.at("model"));
      c.max_len = j.at("max_len").get<int>();
      c.level = j.at("level").get<int>();
      c.epoch = j.at("epoch").get<int>();
      c.finished = j.at("finished").get<bool>();
      c.stop_reason = j.at("stop_reason").get<std::string>();
      c.params = parameters_from_json(j.at("params"));
      const auto& a = j.at("adam");
      c.adam.learning_rate = a.at("learning_rate").get<double>();
      c.adam.beta1 = a.at("beta1").get<double>();
      c.adam.beta2 = a.at("beta2").get<double>();
      c.adam.eps = a.at("eps").get<double>();
      c.adam.step = a.at("step").get<long long>();
      c.adam.first_moment = parameters_from_json(a.at("first_moment"));
      c.adam.second_moment = parameters_from_json(a.at("second_moment"));
      c.rng_state = j.at("rng_state").get<std::string>();
      const auto& es = j.at("early_stop");
      c.early_stop.best_value = es.at("best_value").is_null() ? -std::numeric_limits<double>::infinity()
                                                              : es.at("best_value").get<double>();
      c.early_stop.best_epoch = es.at("best_epoch").get<int>();
      c.early_stop.bad_epochs = es.at("bad_epochs").get<int>();
      if (!j.at("best_params").is_null()) c.best_params = parameters_from_json(j.at("best_params"));
      for (const auto& e : j.at("history")) c.history.push_back(epoch_record_from_json(e));
      c.vocab = j.at("vocab").get<std::vector<std::string>>();
      c.labels = j.at("labels").get<std::vector<std::string>>();
      tensor_from_json(j.at("hyperbolic_rows"), c.hyperbolic_rows);
      return c;
    } catch (const json::exception& e) {
      fail(ErrorCode::parse, std::string("checkpoint: ") + e.what());
    }
  }

  static TrainingCheckpoint load(const std::filesystem::path& path) { return parse(read_file(path)); }
  void save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

  Vocab vocabulary() const { return Vocab(vocab); }
  ModelState state() const { return ModelState{model, level, params}; }
};

// ---------------------------------------------------------------------------
// Trainer

struct TrainingInputs {
  const Dataset* train = nullptr;
  const Dataset* valid = nullptr;  // may be empty or null
  const AugmentedLabelTree* tree = nullptr;
  const PoincareEmbedding* hyperbolic = nullptr;  // required unless correction is none
  ModelConfig model;
  std::optional<MatrixXd> word_embeddings;
  const Vocab* vocab = nullptr;  // recorded in checkpoints when present
  int max_len = 4096;
  json config_echo;
};

inline std::vector<std::size_t> leaf_indices(const Document& d, const AugmentedLabelTree& tree) {
  std::vector<std::size_t> out;
  for (const auto& l : d.labels) {
    auto idx = tree.index_of(tree.max_level(), l);
    require(idx.has_value(), ErrorCode::not_found, "document '" + d.id + "' label '" + l + "' is not a tree leaf");
    out.push_back(*idx);
  }
  return out;
}

class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochRecord&)>;

  Trainer(TrainingInputs inputs, CurriculumConfig cfg, TrainMode mode,
          const TrainingCheckpoint* resume_from = nullptr)
      : in_(std::move(inputs)), cfg_(std::move(cfg)), mode_(mode) {
    require(in_.train != nullptr && in_.tree != nullptr, ErrorCode::config, "trainer needs a training set and tree");
    require(!in_.train->docs.empty(), ErrorCode::domain, "empty training set");
    kmax_ = in_.tree->max_level();
    cfg_.validate(kmax_);
    if (in_.model.correction != CorrectionMode::none) {
      require(in_.hyperbolic != nullptr, ErrorCode::config, "hyperbolic correction needs an embedding");
      in_.model.hyperbolic_dim = in_.hyperbolic->dim();
    }
    in_.model.validate();
    precompute_targets();

    report_.config = in_.config_echo;
    report_.seed = cfg_.seed;
    if (resume_from) {
      restore(*resume_from);
      return;
    }
    auto enc_rng = derived_stream(cfg_.seed, kEncoderStream);
    state_.config = in_.model;
    state_.params.encoder = init_encoder(in_.model, enc_rng, in_.word_embeddings);
    init_correction(in_.model, state_.params.decoder, enc_rng);
    shuffle_rng_ = derived_stream(cfg_.seed, kShuffleStream);
    start_level(mode_ == TrainMode::flat ? kmax_ : 1, /*transfer=*/false);
  }

  bool finished() const { return finished_; }
  int level() const { return level_; }
  int epoch_in_level() const { return epoch_; }
  const ModelState& state() const { return state_; }
  const TrainReport& report() const { return report_; }
  const MatrixXd& hyperbolic_rows() const { return hyp_rows_; }
  const CurriculumConfig& config() const { return cfg_; }

  void on_epoch(EpochCallback cb) { callback_ = std::move(cb); }

  // Performs pending level transitions so that the next epoch can run.
  void prepare_next() {
    while (!finished_ && epoch_ >= planned_epochs(level_)) {
      if (level_ == kmax_) {
        finish("schedule complete");
        return;
      }
      start_level(level_ + 1, /*transfer=*/true);
    }
  }

  void run_epoch() {
    prepare_next();
    if (finished_) return;
    const auto& docs = in_.train->docs;
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng_);

    double epoch_loss = 0.0;
    const auto batch = static_cast<std::size_t>(cfg_.batch_size);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += batch, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::span<const std::size_t> members(order.data() + start, end - start);
      auto [grads, losses] = batch_gradients(members);
      for (double l : losses)
        require(std::isfinite(l), ErrorCode::numeric,
                "non-finite loss at level " + std::to_string(level_) + ", epoch " + std::to_string(epoch_ + 1) +
                    ", batch " + std::to_string(batch_index));
      epoch_loss += batch_reduce(losses) * static_cast<double>(losses.size());
      adam_step(state_.params, grads, adam_);
    }
    ++epoch_;

    EpochRecord rec;
    rec.level = level_;
    rec.epoch = epoch_;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    if (in_.valid != nullptr && !in_.valid->docs.empty()) rec.valid = evaluate_split(*in_.valid);
    if (level_ == kmax_) {
      const double value = rec.valid ? cfg_.metric_value(*rec.valid) : -std::numeric_limits<double>::infinity();
      if (rec.valid && (value > early_stop_.best_value || !best_params_)) {
        early_stop_.best_value = value;
        early_stop_.best_epoch = epoch_;
        early_stop_.bad_epochs = 0;
        best_params_ = state_.params;
        rec.improved = true;
      } else {
        ++early_stop_.bad_epochs;
      }
    }
    report_.epochs.push_back(rec);
    if (callback_) callback_(rec);
    if (level_ == kmax_ && rec.valid && early_stop_.bad_epochs >= cfg_.patience && !rec.improved) {
      finish("early stopping");
    } else if (level_ == kmax_ && epoch_ >= planned_epochs(level_)) {
      finish("schedule complete");
    }
  }

  void run() {
    while (!finished_) run_epoch();
  }

  // Parameters with the best validation metric at the final level (the
  // current parameters when no validation was run).
  ModelState best_state() const {
    ModelState s = state_;
    if (best_params_) s.params = *best_params_;
    return s;
  }

  // Scores (documents x labels) of the current level for a dataset.
  MatrixXd predict(const Dataset& ds, const Parameters* params = nullptr) const {
    const Parameters& p = params ? *params : state_.params;
    MatrixXd scores(static_cast<Eigen::Index>(ds.docs.size()), static_cast<Eigen::Index>(in_.tree->level_size(level_)));
    for (std::size_t d = 0; d < ds.docs.size(); ++d) {
      auto t = forward(ds.docs[d].tokens, p, state_.config, hyp_rows_);
      scores.row(static_cast<Eigen::Index>(d)) = t.probs.transpose();
    }
    return scores;
  }

  // 0/1 targets (documents x labels) of the current level.
  MatrixXd level_targets(const Dataset& ds) const {
    MatrixXd y = MatrixXd::Zero(static_cast<Eigen::Index>(ds.docs.size()),
                                static_cast<Eigen::Index>(in_.tree->level_size(level_)));
    for (std::size_t d = 0; d < ds.docs.size(); ++d)
      for (auto leaf : leaf_indices(ds.docs[d], *in_.tree))
        y(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(ancestor_[static_cast<std::size_t>(level_)][leaf])) = 1.0;
    return y;
  }

  VectorXd train_targets(std::size_t doc) const {
    VectorXd y = VectorXd::Zero(static_cast<Eigen::Index>(in_.tree->level_size(level_)));
    for (auto leaf : train_leaves_[doc])
      y[static_cast<Eigen::Index>(ancestor_[static_cast<std::size_t>(level_)][leaf])] = 1.0;
    return y;
  }

  EvalResult evaluate_split(const Dataset& ds, const Parameters* params = nullptr) const {
    return evaluate(predict(ds, params), level_targets(ds), cfg_.p_at_k);
  }

  TrainingCheckpoint checkpoint(bool best_only = false) const {
    TrainingCheckpoint c;
    c.config = in_.config_echo;
    c.model = state_.config;
    c.max_len = in_.max_len;
    c.level = level_;
    c.epoch = epoch_;
    c.finished = finished_;
    c.stop_reason = report_.stop_reason;
    c.params = best_only && best_params_ ? *best_params_ : state_.params;
    c.adam = adam_;
    std::ostringstream rng;
    rng << shuffle_rng_;
    c.rng_state = rng.str();
    c.early_stop = early_stop_;
    if (!best_only) c.best_params = best_params_;
    c.history = report_.epochs;
    if (in_.vocab) c.vocab = in_.vocab->words();
    c.labels = level_labels(*in_.tree, level_);
    c.hyperbolic_rows = hyp_rows_;
    return c;
  }

 private:
  int planned_epochs(int level) const { return cfg_.epochs_per_level[static_cast<std::size_t>(level - 1)]; }

  void finish(std::string reason) {
    finished_ = true;
    report_.stop_reason = std::move(reason);
    report_.best_epoch = early_stop_.best_epoch;
    report_.best_metric = early_stop_.best_value;
  }

  void precompute_targets() {
    const auto& tree = *in_.tree;
    ancestor_.assign(static_cast<std::size_t>(kmax_) + 1, {});
    const std::size_t n_leaves = tree.level_size(kmax_);
    auto& deepest = ancestor_[static_cast<std::size_t>(kmax_)];
    deepest.resize(n_leaves);
    std::iota(deepest.begin(), deepest.end(), 0);
    for (int k = kmax_ - 1; k >= 1; --k) {
      auto& cur = ancestor_[static_cast<std::size_t>(k)];
      const auto& below = ancestor_[static_cast<std::size_t>(k) + 1];
      cur.resize(n_leaves);
      for (std::size_t leaf = 0; leaf < n_leaves; ++leaf) cur[leaf] = tree.parent_index(k + 1, below[leaf]);
    }
    train_leaves_.clear();
    for (const auto& d : in_.train->docs) train_leaves_.push_back(leaf_indices(d, tree));
    if (in_.valid)
      for (const auto& d : in_.valid->docs) leaf_indices(d, tree);
  }

  MatrixXd level_hyperbolic_rows(int level) const {
    if (in_.model.correction == CorrectionMode::none)
      return MatrixXd(static_cast<Eigen::Index>(in_.tree->level_size(level)), 0);
    return embedding_for_level(*in_.hyperbolic, *in_.tree, level);
  }

  void start_level(int level, bool transfer) {
    auto rng = derived_stream(cfg_.seed, kDecoderStream, static_cast<std::uint64_t>(level));
    const bool fresh = !transfer || (level == kmax_ && cfg_.fresh_final_decoder);
    DecoderParams prev = state_.params.decoder;
    state_.params.decoder = init_level_decoder(fresh ? nullptr : &prev, *in_.tree, level, in_.model,
                                               cfg_.transfer_output_layer, rng);
    if (fresh) {
      state_.params.decoder.fc_weight = prev.fc_weight;
      state_.params.decoder.fc_bias = prev.fc_bias;
    }
    if (transfer && cfg_.reinit_correction) init_correction(in_.model, state_.params.decoder, rng);
    level_ = level;
    epoch_ = 0;
    state_.level = level;
    hyp_rows_ = level_hyperbolic_rows(level);

    AdamState next;
    next.learning_rate = cfg_.learning_rate;
    next.reset(state_.params);
    if (transfer && cfg_.carry_optimizer_state) {
      next.step = adam_.step;
      next.first_moment.encoder = adam_.first_moment.encoder;
      next.second_moment.encoder = adam_.second_moment.encoder;
      if (!cfg_.reinit_correction) {
        next.first_moment.decoder.fc_weight = adam_.first_moment.decoder.fc_weight;
        next.first_moment.decoder.fc_bias = adam_.first_moment.decoder.fc_bias;
        next.second_moment.decoder.fc_weight = adam_.second_moment.decoder.fc_weight;
        next.second_moment.decoder.fc_bias = adam_.second_moment.decoder.fc_bias;
      }
    }
    adam_ = std::move(next);
  }

  void restore(const TrainingCheckpoint& c) {
    require(c.model.vocab_size == in_.model.vocab_size && c.model.correction == in_.model.correction,
            ErrorCode::config, "checkpoint model does not match the training inputs");
    require(c.level >= 1 && c.level <= kmax_, ErrorCode::config, "checkpoint level outside the tree");
    state_ = ModelState{c.model, c.level, c.params};
    level_ = c.level;
    epoch_ = c.epoch;
    finished_ = c.finished;
    adam_ = c.adam;
    std::istringstream rng(c.rng_state);
    rng >> shuffle_rng_;
    require(!rng.fail(), ErrorCode::parse, "checkpoint: invalid RNG state");
    early_stop_ = c.early_stop;
    best_params_ = c.best_params;
    report_.epochs = c.history;
    if (finished_) finish(c.stop_reason);
    hyp_rows_ = level_hyperbolic_rows(level_);
    require(state_.params.decoder.query.cols() == static_cast<Eigen::Index>(in_.tree->level_size(level_)),
            ErrorCode::dimension, "checkpoint decoder does not match the tree level");
  }

  std::pair<Gradients, std::vector<double>> batch_gradients(std::span<const std::size_t> members) const {
    std::vector<Gradients> per_doc(members.size());
    std::vector<double> losses(members.size());
    auto work = [&](std::size_t i) {
      const auto doc = members[i];
      const auto& tokens = in_.train->docs[doc].tokens;
      auto trace = forward(tokens, state_.params, state_.config, hyp_rows_);
      auto loss = compute_loss(cfg_.loss, trace.logits, train_targets(doc));
      losses[i] = loss.value;
      per_doc[i] = backward(trace, state_.params, state_.config, hyp_rows_, loss.grad);
    };
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg_.workers), members.size());
    if (workers <= 1) {
      for (std::size_t i = 0; i < members.size(); ++i) work(i);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(workers);
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t i = w; i < members.size(); i += workers) work(i);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    // Fixed document order keeps the sum independent of the worker count.
    Gradients total = std::move(per_doc[0]);
    auto total_views = total.flat();
    for (std::size_t i = 1; i < per_doc.size(); ++i) {
      auto views = std::as_const(per_doc[i]).flat();
      for (std::size_t t = 0; t < views.size(); ++t) total_views[t].second += views[t].second;
    }
    const double scale = 1.0 / static_cast<double>(members.size());
    for (auto& [name, v] : total_views) v *= scale;
    return {std::move(total), std::move(losses)};
  }

  TrainingInputs in_;
  CurriculumConfig cfg_;
  TrainMode mode_;
  int kmax_ = 0;
  int level_ = 1;
  int epoch_ = 0;
  bool finished_ = false;
  ModelState state_;
  AdamState adam_;
  std::mt19937_64 shuffle_rng_;
  MatrixXd hyp_rows_;
  EarlyStopState early_stop_;
  std::optional<Parameters> best_params_;
  std::vector<std::vector<std::size_t>> ancestor_;      // [level][leaf] -> node index at level
  std::vector<std::vector<std::size_t>> train_leaves_;  // per training document
  TrainReport report_;
  EpochCallback callback_;
};

struct TrainOutcome {
  ModelState state;
  TrainReport report;
};

inline TrainOutcome run_hicu(TrainingInputs inputs, CurriculumConfig cfg) {
  Trainer t(std::move(inputs), std::move(cfg), TrainMode::hicu);
  t.run();
  return {t.best_state(), t.report()};
}

inline TrainOutcome run_flat(TrainingInputs inputs, CurriculumConfig cfg) {
  Trainer t(std::move(inputs), std::move(cfg), TrainMode::flat);
  t.run();
  return {t.best_state(), t.report()};
}

// ---------------------------------------------------------------------------
// Attention inspection

struct TokenWeight {
  std::string token;
  std::size_t position = 0;
  double weight = 0.0;
};

// Top-weighted tokens in one label's attention column, ties broken by position.
inline std::vector<TokenWeight> inspect_attention(const ModelState& state, const MatrixXd& hyperbolic_rows,
                                                  std::span<const std::string> labels, const Vocab& vocab,
                                                  const Document& doc, std::string_view label, std::size_t top_n = 16) {
  auto it = std::find(labels.begin(), labels.end(), label);
  require(it != labels.end(), ErrorCode::not_found, "unknown label '" + std::string(label) + "'");
  const auto column = static_cast<Eigen::Index>(it - labels.begin());
  auto trace = forward(doc.tokens, state.params, state.config, hyperbolic_rows);
  std::vector<TokenWeight> out;
  for (std::size_t i = 0; i < doc.tokens.size(); ++i)
    out.push_back({vocab.token(doc.tokens[i]), i, trace.attention(static_cast<Eigen::Index>(i), column)});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.weight > b.weight; });
  if (out.size() > top_n) out.resize(top_n);
  return out;
}

}  // namespace hicu
