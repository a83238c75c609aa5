#pragma once

// Command implementations behind the `hicu` executable. Each command takes a
// fully resolved argument struct and writes human-readable output to `out`;
// failures are reported by throwing hicu::Error.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hicu/curriculum.hpp"
#include "hicu/data_io.hpp"
#include "hicu/error.hpp"
#include "hicu/label_tree.hpp"
#include "hicu/metrics.hpp"
#include "hicu/poincare.hpp"
#include "hicu/serialize.hpp"
#include "hicu/text_io.hpp"

namespace hicu {

namespace fs = std::filesystem;

namespace detail {

inline std::string path_string(const fs::path& p) { return p.empty() ? std::string() : p.generic_string(); }

inline std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

inline std::vector<IcdCode> codes_of(const std::set<std::string>& labels) {
  std::vector<IcdCode> codes;
  for (const auto& l : labels) codes.push_back(parse_code(l));
  return codes;
}

inline std::set<std::string> label_set(std::span<const RawDocument> docs) {
  std::set<std::string> out;
  for (const auto& d : docs) out.insert(d.labels.begin(), d.labels.end());
  return out;
}

// Drops labels outside `keep` and documents left without labels.
inline std::vector<RawDocument> restrict_labels(std::vector<RawDocument> docs, const std::set<std::string>& keep) {
  std::vector<RawDocument> out;
  for (auto& d : docs) {
    std::erase_if(d.labels, [&](const std::string& l) { return keep.count(l) == 0; });
    if (!d.labels.empty()) out.push_back(std::move(d));
  }
  return out;
}

inline void print_level_counts(const AugmentedLabelTree& tree, std::ostream& out) {
  for (int k = 1; k <= tree.max_level(); ++k) {
    std::size_t copies = 0;
    for (std::size_t i = 0; i < tree.level_size(k); ++i) copies += tree.is_copy(k, i) ? 1 : 0;
    out << "level " << k << ": " << tree.level_size(k) << " nodes (" << copies << " padding copies)\n";
  }
  out << "targets: " << tree.targets().size() << "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  SynthConfig synth;
  fs::path out;
};

inline int cmd_synth(const SynthArgs& args, std::ostream& out) {
  require(!args.out.empty(), ErrorCode::usage, "synth: --out directory is required");
  auto corpus = synth_generate(args.synth);
  write_file_atomic(args.out / "train.jsonl", serialize_records(corpus.train));
  write_file_atomic(args.out / "valid.jsonl", serialize_records(corpus.valid));
  write_file_atomic(args.out / "test.jsonl", serialize_records(corpus.test));
  write_file_atomic(args.out / "ranges.tsv", corpus.ranges.serialize());
  write_file_atomic(args.out / "tree.tsv", corpus.tree.serialize());
  write_file_atomic(args.out / "synth_config.json", to_json(args.synth).dump(2) + "\n");

  out << "documents: train " << corpus.train.size() << ", valid " << corpus.valid.size() << ", test "
      << corpus.test.size() << "\n";
  out << "generated leaves: " << corpus.leaves.size() << "\n";
  detail::print_level_counts(augment_tree(corpus.tree), out);

  std::map<std::string, std::size_t> counts;
  for (const auto& d : corpus.train)
    for (const auto& l : d.labels) ++counts[l];
  std::vector<std::size_t> freq;
  for (auto& [l, c] : counts) freq.push_back(c);
  std::sort(freq.begin(), freq.end());
  if (!freq.empty()) {
    const std::size_t quartile_max = freq[(freq.size() - 1) / 4];
    out << "train label frequency: max " << freq.back() << ", rarest-quartile max " << quartile_max << ", min "
        << freq.front() << " (ratio " << detail::fixed(static_cast<double>(quartile_max) / static_cast<double>(freq.back()))
        << ")\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// build-tree

struct BuildTreeArgs {
  fs::path ranges;
  std::vector<fs::path> datasets;  // labels are collected from every file
  std::optional<std::size_t> top_k_labels;
  fs::path out;
};

inline int cmd_build_tree(const BuildTreeArgs& args, std::ostream& out) {
  require(!args.ranges.empty(), ErrorCode::usage, "build-tree: --ranges is required");
  require(!args.datasets.empty(), ErrorCode::usage, "build-tree: at least one dataset (--train) is required");
  require(!args.out.empty(), ErrorCode::usage, "build-tree: --out tree file is required");
  auto ranges = RangeTable::load(args.ranges);
  std::set<std::string> labels;
  for (std::size_t i = 0; i < args.datasets.size(); ++i) {
    auto docs = read_records(args.datasets[i]);
    if (i == 0 && args.top_k_labels) {
      auto kept = filter_top_k_labels<RawDocument>(docs, *args.top_k_labels).second;
      labels.insert(kept.begin(), kept.end());
      break;
    }
    auto l = detail::label_set(docs);
    labels.insert(l.begin(), l.end());
  }
  auto tree = augment_tree(build_label_tree(detail::codes_of(labels), ranges));
  write_file_atomic(args.out, tree.tree().serialize());
  detail::print_level_counts(tree, out);
  return 0;
}

// ---------------------------------------------------------------------------
// embed

struct EmbedArgs {
  fs::path tree;
  fs::path out;
  EmbedConfig embed;
};

inline int cmd_embed(const EmbedArgs& args, std::ostream& out) {
  require(!args.tree.empty(), ErrorCode::usage, "embed: --tree is required");
  require(!args.out.empty(), ErrorCode::usage, "embed: --out embedding file is required");
  args.embed.validate();
  auto tree = LabelTree::load(args.tree);
  EmbedTrainStats stats;
  auto emb = train_poincare(tree, args.embed, &stats);
  write_file_atomic(args.out, emb.serialize());
  auto gap = sibling_gap(emb, tree);
  out << "nodes: " << emb.labels.size() << ", dimension " << emb.dim() << "\n";
  out << "mean edge distance: " << detail::fixed(stats.initial_mean_edge_distance, 6) << " -> "
      << detail::fixed(stats.final_mean_edge_distance, 6) << "\n";
  out << "same-depth distance: siblings " << detail::fixed(gap.sibling_mean) << " (" << gap.sibling_pairs
      << " pairs), non-siblings " << detail::fixed(gap.non_sibling_mean) << " (" << gap.non_sibling_pairs
      << " pairs), gap " << detail::fixed(gap.non_sibling_mean - gap.sibling_mean) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  fs::path train, valid, tree, ranges, hyp_emb, word_emb;
  fs::path out;
  fs::path resume;
  TrainMode mode = TrainMode::hicu;
  int embed_dim = 32;
  int feature_dim = 32;
  int kernel_width = 3;
  CorrectionMode correction = CorrectionMode::add;
  bool finetune_embeddings = true;
  CurriculumConfig curriculum;
  double epoch_scale = 1.0;
  int max_len = 4096;
  int min_count = 1;
  std::optional<std::size_t> top_k_labels;
  std::optional<int> stop_after;  // epochs to run in this invocation
};

// Every setting that influences the trained model. Output locations and
// the per-invocation epoch cap are left out so that reruns into another
// directory, or resumed runs, carry the same echo.
inline json to_json(const TrainArgs& a) {
  json j;
  j["command"] = "train";
  j["train"] = detail::path_string(a.train);
  j["valid"] = detail::path_string(a.valid);
  j["tree"] = detail::path_string(a.tree);
  j["ranges"] = detail::path_string(a.ranges);
  j["hyp_emb"] = detail::path_string(a.hyp_emb);
  j["word_emb"] = detail::path_string(a.word_emb);
  j["mode"] = mode_name(a.mode);
  j["embed_dim"] = a.embed_dim;
  j["feature_dim"] = a.feature_dim;
  j["kernel_width"] = a.kernel_width;
  j["correction"] = correction_name(a.correction);
  j["finetune_embeddings"] = a.finetune_embeddings;
  j["curriculum"] = to_json(a.curriculum);
  j["epoch_scale"] = a.epoch_scale;
  j["max_len"] = a.max_len;
  j["min_count"] = a.min_count;
  j["top_k_labels"] = a.top_k_labels ? json(*a.top_k_labels) : json(nullptr);
  return j;
}

inline std::vector<int> scale_epochs(std::span<const int> epochs, double factor) {
  require(factor > 0, ErrorCode::config, "epoch scale must be positive");
  std::vector<int> out;
  for (int e : epochs) out.push_back(static_cast<int>(std::lround(e * factor)));
  return out;
}

inline int cmd_train(const TrainArgs& args, std::ostream& out) {
  require(!args.train.empty(), ErrorCode::usage, "train: --train is required");
  require(!args.out.empty(), ErrorCode::usage, "train: --out directory is required");
  require(args.max_len >= 1, ErrorCode::config, "max_len must be positive");
  require(args.min_count >= 1, ErrorCode::config, "min_count must be >= 1");
  require(!args.stop_after || *args.stop_after >= 1, ErrorCode::config, "stop-after must be >= 1");
  require(args.correction == CorrectionMode::none || !args.hyp_emb.empty(), ErrorCode::config,
          "correction '" + std::string(correction_name(args.correction)) + "' needs --hyp-emb");
  const auto started = std::chrono::steady_clock::now();
  const json echo = to_json(args);

  CurriculumConfig cur = args.curriculum;
  cur.epochs_per_level = scale_epochs(cur.epochs_per_level, args.epoch_scale);

  auto train_raw = read_records(args.train);
  std::vector<RawDocument> valid_raw;
  if (!args.valid.empty()) valid_raw = read_records(args.valid);

  AugmentedLabelTree tree;
  if (args.top_k_labels) {
    require(!args.ranges.empty(), ErrorCode::config, "--top-k-labels rebuilds the tree and needs --ranges");
    require(args.tree.empty(), ErrorCode::config, "--top-k-labels rebuilds the tree; do not pass --tree");
    auto [docs, kept] = filter_top_k_labels<RawDocument>(train_raw, *args.top_k_labels);
    train_raw = std::move(docs);
    const std::set<std::string> keep(kept.begin(), kept.end());
    valid_raw = detail::restrict_labels(std::move(valid_raw), keep);
    tree = augment_tree(build_label_tree(detail::codes_of(keep), RangeTable::load(args.ranges)));
  } else {
    require(!args.tree.empty(), ErrorCode::usage, "train: --tree is required");
    tree = augment_tree(LabelTree::load(args.tree));
  }
  cur.validate(tree.max_level());

  std::vector<std::vector<std::string>> token_docs;
  for (const auto& d : train_raw) token_docs.push_back(tokenize(d.text));
  const Vocab vocab = build_vocab(token_docs, args.min_count);
  const auto max_len = static_cast<std::size_t>(args.max_len);
  const Dataset train = to_dataset(train_raw, vocab, tree.targets(), max_len);
  const Dataset valid = to_dataset(valid_raw, vocab, tree.targets(), max_len);

  std::optional<PoincareEmbedding> hyperbolic;
  if (args.correction != CorrectionMode::none) hyperbolic = PoincareEmbedding::load(args.hyp_emb);

  TrainingInputs inputs;
  inputs.train = &train;
  inputs.valid = &valid;
  inputs.tree = &tree;
  inputs.hyperbolic = hyperbolic ? &*hyperbolic : nullptr;
  inputs.model.vocab_size = vocab.size();
  inputs.model.embed_dim = args.embed_dim;
  inputs.model.feature_dim = args.feature_dim;
  inputs.model.kernel_width = args.kernel_width;
  inputs.model.correction = args.correction;
  inputs.model.finetune_embeddings = args.finetune_embeddings;
  if (hyperbolic) inputs.model.hyperbolic_dim = hyperbolic->dim();
  if (!args.word_emb.empty())
    inputs.word_embeddings = load_embeddings(args.word_emb, vocab, args.embed_dim, cur.seed);
  inputs.vocab = &vocab;
  inputs.max_len = args.max_len;
  inputs.config_echo = echo;

  std::optional<TrainingCheckpoint> resume;
  if (!args.resume.empty()) {
    resume = TrainingCheckpoint::load(args.resume);
    require(resume->config == echo, ErrorCode::config,
            "resume: checkpoint was written with a different configuration");
    require(resume->vocab == vocab.words(), ErrorCode::config, "resume: vocabulary differs from the checkpoint");
  }

  out << "train docs " << train.docs.size() << " (skipped empty " << train.skipped_empty << "), valid docs "
      << valid.docs.size() << ", vocab " << vocab.size() << ", targets " << tree.targets().size() << "\n";

  Trainer trainer(std::move(inputs), cur, args.mode, resume ? &*resume : nullptr);
  trainer.on_epoch([&](const EpochRecord& rec) {
    out << "level " << rec.level << " epoch " << rec.epoch << " loss " << detail::fixed(rec.train_loss, 6);
    if (rec.valid)
      out << " valid micro_f1 " << detail::fixed(rec.valid->micro_f1) << " macro_auc "
          << detail::fixed(rec.valid->macro_auc);
    if (rec.improved) out << " *";
    out << "\n";
  });

  int ran = 0;
  while (!trainer.finished() && (!args.stop_after || ran < *args.stop_after)) {
    const auto before = trainer.report().epochs.size();
    trainer.run_epoch();
    if (trainer.report().epochs.size() == before) continue;
    ++ran;
    trainer.checkpoint().save(args.out / "last.ckpt");
  }
  trainer.prepare_next();
  trainer.checkpoint().save(args.out / "last.ckpt");
  trainer.checkpoint(/*best_only=*/true).save(args.out / "best.ckpt");
  write_file_atomic(args.out / "tree.tsv", tree.tree().serialize());

  TrainReport report = trainer.report();
  if (!trainer.finished()) report.stop_reason = "paused";
  write_file_atomic(args.out / "report.jsonl", report.serialize());

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  out << "stop: " << report.stop_reason << ", best epoch " << report.best_epoch << ", best " << cur.stop_metric << " "
      << detail::fixed(report.best_metric) << "\n";
  std::cerr << "wall-clock " << detail::fixed(seconds, 1) << " s\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  fs::path checkpoint;
  fs::path test;
  fs::path train;     // label frequencies; the test split is used when absent
  fs::path baseline;  // a previous eval output for bucket deltas
  fs::path dump_scores;
  fs::path out;
  std::vector<int> p_at_k{5, 8, 15};
  double threshold = 0.5;
  std::size_t buckets = 4;
};

struct ScoredSplit {
  std::vector<std::string> ids;
  std::vector<std::string> labels;
  MatrixXd scores;
  MatrixXd targets;
};

inline ScoredSplit score_split(const TrainingCheckpoint& ckpt, std::span<const RawDocument> records) {
  const Vocab vocab = ckpt.vocabulary();
  const Dataset ds = to_dataset(records, vocab, ckpt.labels, static_cast<std::size_t>(ckpt.max_len));
  require(!ds.docs.empty(), ErrorCode::domain, "no documents to evaluate");
  ScoredSplit s;
  s.labels = ckpt.labels;
  const auto L = static_cast<Eigen::Index>(s.labels.size());
  s.scores.resize(static_cast<Eigen::Index>(ds.docs.size()), L);
  s.targets = MatrixXd::Zero(static_cast<Eigen::Index>(ds.docs.size()), L);
  std::map<std::string_view, Eigen::Index> column;
  for (Eigen::Index i = 0; i < L; ++i) column.emplace(s.labels[static_cast<std::size_t>(i)], i);
  for (std::size_t d = 0; d < ds.docs.size(); ++d) {
    const auto r = static_cast<Eigen::Index>(d);
    auto t = forward(ds.docs[d].tokens, ckpt.params, ckpt.model, ckpt.hyperbolic_rows);
    s.scores.row(r) = t.probs.transpose();
    for (const auto& l : ds.docs[d].labels) s.targets(r, column.at(l)) = 1.0;
    s.ids.push_back(ds.docs[d].id);
  }
  return s;
}

inline std::string serialize_scores(const ScoredSplit& s) {
  std::string out = "id";
  for (const auto& l : s.labels) out += "\t" + l;
  out += "\n";
  for (Eigen::Index r = 0; r < s.scores.rows(); ++r) {
    out += s.ids[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < s.scores.cols(); ++c) out += "\t" + format_double(s.scores(r, c));
    out += "\n";
  }
  return out;
}

inline int cmd_eval(const EvalArgs& args, std::ostream& out) {
  require(!args.checkpoint.empty(), ErrorCode::usage, "eval: --checkpoint is required");
  require(!args.test.empty(), ErrorCode::usage, "eval: --test is required");
  require(args.threshold > 0 && args.threshold < 1, ErrorCode::config, "threshold must lie in (0, 1)");
  const auto ckpt = TrainingCheckpoint::load(args.checkpoint);
  const auto test_raw = read_records(args.test);
  const auto scored = score_split(ckpt, test_raw);
  const EvalResult metrics = evaluate(scored.scores, scored.targets, args.p_at_k, args.threshold);

  std::map<std::string, double> counts;
  for (const auto& d : args.train.empty() ? test_raw : read_records(args.train))
    for (const auto& l : d.labels) counts[l] += 1.0;
  const auto per_label = per_label_auc(scored.scores, scored.targets);
  std::vector<double> frequency;
  json labels = json::array();
  for (std::size_t i = 0; i < scored.labels.size(); ++i) {
    auto it = counts.find(scored.labels[i]);
    frequency.push_back(it == counts.end() ? 0.0 : it->second);
    labels.push_back({{"label", scored.labels[i]},
                      {"auc", per_label[i] ? json(*per_label[i]) : json(nullptr)},
                      {"frequency", frequency.back()}});
  }

  json result;
  result["checkpoint_config"] = ckpt.config;
  result["eval"] = {{"checkpoint", detail::path_string(args.checkpoint)},
                    {"test", detail::path_string(args.test)},
                    {"train", detail::path_string(args.train)},
                    {"baseline", detail::path_string(args.baseline)},
                    {"p_at_k", args.p_at_k},
                    {"threshold", args.threshold},
                    {"buckets", args.buckets}};
  result["metrics"] = to_json(metrics);
  result["labels"] = labels;

  out << "documents " << scored.ids.size() << ", labels " << scored.labels.size() << " (" << metrics.skipped_labels
      << " without both classes)\n";
  out << "macro_auc " << detail::fixed(metrics.macro_auc) << "  micro_auc " << detail::fixed(metrics.micro_auc)
      << "  macro_f1 " << detail::fixed(metrics.macro_f1) << "  micro_f1 " << detail::fixed(metrics.micro_f1) << "\n";
  for (const auto& [k, v] : metrics.p_at_k) out << "P@" << k << " " << detail::fixed(v) << "\n";

  if (!args.baseline.empty()) {
    json base;
    try {
      base = json::parse(read_file(args.baseline));
    } catch (const json::exception& e) {
      fail(ErrorCode::parse, "baseline: " + std::string(e.what()));
    }
    std::map<std::string, std::optional<double>> base_auc;
    try {
      for (const auto& l : base.at("labels"))
        base_auc[l.at("label").get<std::string>()] =
            l.at("auc").is_null() ? std::nullopt : std::optional<double>(l.at("auc").get<double>());
    } catch (const json::exception& e) {
      fail(ErrorCode::parse, "baseline: " + std::string(e.what()));
    }
    std::vector<std::optional<double>> baseline;
    for (const auto& l : scored.labels) {
      auto it = base_auc.find(l);
      baseline.push_back(it == base_auc.end() ? std::nullopt : it->second);
    }
    const auto buckets = frequency_bucket_deltas(per_label, baseline, frequency, args.buckets);
    json rows = json::array();
    out << "bucket\tfrequency\tlabels\tscored\tauc\tbaseline_auc\tdelta\n";
    for (const auto& b : buckets) {
      rows.push_back({{"bucket", b.bucket},
                      {"min_frequency", b.min_frequency},
                      {"max_frequency", b.max_frequency},
                      {"labels", b.labels},
                      {"scored_labels", b.scored_labels},
                      {"mean_auc", number_or_null(b.mean_auc)},
                      {"mean_baseline_auc", number_or_null(b.mean_baseline_auc)},
                      {"delta", number_or_null(b.delta)}});
      out << b.bucket << "\t" << b.min_frequency << "-" << b.max_frequency << "\t" << b.labels << "\t"
          << b.scored_labels << "\t" << detail::fixed(b.mean_auc) << "\t" << detail::fixed(b.mean_baseline_auc)
          << "\t" << detail::fixed(b.delta) << "\n";
    }
    result["buckets"] = rows;
  }

  if (!args.dump_scores.empty()) write_file_atomic(args.dump_scores, serialize_scores(scored));
  if (!args.out.empty()) write_file_atomic(args.out, result.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// inspect

struct InspectArgs {
  fs::path checkpoint;
  fs::path data;
  std::string doc;
  std::string label;
  std::size_t top_n = 16;
};

inline int cmd_inspect(const InspectArgs& args, std::ostream& out) {
  require(!args.checkpoint.empty() && !args.data.empty(), ErrorCode::usage,
          "inspect: --checkpoint and --data are required");
  require(!args.doc.empty() && !args.label.empty(), ErrorCode::usage, "inspect: --doc and --label are required");
  const auto ckpt = TrainingCheckpoint::load(args.checkpoint);
  const Vocab vocab = ckpt.vocabulary();
  const auto records = read_records(args.data);
  auto it = std::find_if(records.begin(), records.end(), [&](const RawDocument& d) { return d.id == args.doc; });
  require(it != records.end(), ErrorCode::not_found, "document '" + args.doc + "' not found");
  const RawDocument unlabeled{it->id, it->text, {}};
  const auto ds = to_dataset(std::span(&unlabeled, 1), vocab, ckpt.labels, static_cast<std::size_t>(ckpt.max_len));
  require(!ds.docs.empty(), ErrorCode::domain, "document '" + args.doc + "' has no tokens");
  const auto rows = inspect_attention(ckpt.state(), ckpt.hyperbolic_rows, ckpt.labels, vocab, ds.docs[0], args.label,
                                      args.top_n);
  out << "rank\tposition\ttoken\tweight\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    out << i + 1 << "\t" << rows[i].position << "\t" << rows[i].token << "\t" << format_double(rows[i].weight) << "\n";
  return 0;
}

}  // namespace hicu
