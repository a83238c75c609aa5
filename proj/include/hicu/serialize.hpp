#pragma once

// JSON forms of configuration records, metrics and tensors.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hicu/data_io.hpp"
#include "hicu/error.hpp"
#include "hicu/loss.hpp"
#include "hicu/metrics.hpp"
#include "hicu/network.hpp"
#include "hicu/poincare.hpp"
#include "hicu/text_io.hpp"

namespace hicu {

using nlohmann::json;

// Non-finite values have no JSON literal; they are written as null.
inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline json tensor_to_json(const MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
}

inline json tensor_to_json(const VectorXd& v) {
  json data = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) data.push_back(v[i]);
  return {{"shape", {v.size()}}, {"data", std::move(data)}};
}

inline void tensor_from_json(const json& j, MatrixXd& m) {
  const auto& shape = j.at("shape");
  require(shape.size() == 2, ErrorCode::parse, "expected a matrix tensor");
  const auto rows = shape[0].get<Eigen::Index>();
  const auto cols = shape[1].get<Eigen::Index>();
  const auto& data = j.at("data");
  require(static_cast<Eigen::Index>(data.size()) == rows * cols, ErrorCode::parse, "tensor data does not match shape");
  m.resize(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[k++].get<double>();
}

inline void tensor_from_json(const json& j, VectorXd& v) {
  const auto& shape = j.at("shape");
  require(shape.size() == 1, ErrorCode::parse, "expected a vector tensor");
  const auto& data = j.at("data");
  require(data.size() == shape[0].get<std::size_t>(), ErrorCode::parse, "tensor data does not match shape");
  v.resize(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) v[static_cast<Eigen::Index>(i)] = data[i].get<double>();
}

inline json parameters_to_json(const Parameters& p) {
  json out = json::object();
  p.for_each([&](std::string_view name, const auto& t) { out[std::string(name)] = tensor_to_json(t); });
  return out;
}

inline Parameters parameters_from_json(const json& j) {
  Parameters p;
  p.for_each([&](std::string_view name, auto& t) { tensor_from_json(j.at(std::string(name)), t); });
  return p;
}

inline json to_json(const ModelConfig& m) {
  return {{"vocab_size", m.vocab_size},        {"embed_dim", m.embed_dim},
          {"kernel_width", m.kernel_width},    {"feature_dim", m.feature_dim},
          {"hyperbolic_dim", m.hyperbolic_dim}, {"correction", correction_name(m.correction)},
          {"finetune_embeddings", m.finetune_embeddings}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  m.vocab_size = j.at("vocab_size").get<int>();
  m.embed_dim = j.at("embed_dim").get<int>();
  m.kernel_width = j.at("kernel_width").get<int>();
  m.feature_dim = j.at("feature_dim").get<int>();
  m.hyperbolic_dim = j.at("hyperbolic_dim").get<int>();
  m.correction = parse_correction(j.at("correction").get<std::string>());
  m.finetune_embeddings = j.at("finetune_embeddings").get<bool>();
  return m;
}

inline json to_json(const EvalResult& r) {
  json pk = json::object();
  for (const auto& [k, v] : r.p_at_k) pk[std::to_string(k)] = v;
  return {{"macro_auc", number_or_null(r.macro_auc)}, {"micro_auc", number_or_null(r.micro_auc)},
          {"macro_f1", r.macro_f1},                   {"micro_f1", r.micro_f1},
          {"p_at_k", pk},                             {"skipped_labels", r.skipped_labels}};
}

inline EvalResult eval_result_from_json(const json& j) {
  EvalResult r;
  r.macro_auc = number_or_nan(j.at("macro_auc"));
  r.micro_auc = number_or_nan(j.at("micro_auc"));
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.micro_f1 = j.at("micro_f1").get<double>();
  for (const auto& [k, v] : j.at("p_at_k").items()) r.p_at_k[static_cast<int>(parse_integer(k))] = v.get<double>();
  r.skipped_labels = j.at("skipped_labels").get<std::size_t>();
  return r;
}

inline json to_json(const EmbedConfig& c) {
  return {{"dim", c.dim},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"burn_in_epochs", c.burn_in_epochs},
          {"burn_in_lr_scale", c.burn_in_lr_scale},
          {"negatives", c.negatives},
          {"seed", c.seed},
          {"ball_eps", c.ball_eps}};
}

inline json to_json(const AslConfig& c) {
  return {{"gamma_pos", c.gamma_pos}, {"gamma_neg", c.gamma_neg}, {"margin", c.margin}, {"clamp_eps", c.clamp_eps}};
}

inline json to_json(const SynthConfig& c) {
  return {{"branching", c.branching},   {"zipf_exponent", c.zipf_exponent},
          {"tokens_per_signature", c.tokens_per_signature},
          {"doc_length", c.doc_length}, {"noise_rate", c.noise_rate},
          {"max_labels_per_doc", c.max_labels_per_doc},
          {"noise_vocab", c.noise_vocab}, {"train_docs", c.train_docs},
          {"valid_docs", c.valid_docs}, {"test_docs", c.test_docs},
          {"seed", c.seed}};
}

}  // namespace hicu
