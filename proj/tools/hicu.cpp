// hicu: command-line front end.
//
//   hicu synth       --out DIR [--seed N] [generator options]
//   hicu build-tree  --ranges FILE --train FILE [--valid FILE --test FILE] --out FILE
//   hicu embed       --tree FILE --out FILE [--seed N] [embedding options]
//   hicu train       --train FILE --valid FILE --tree FILE --hyp-emb FILE --out DIR [options]
//   hicu eval        --checkpoint FILE --test FILE [--train FILE] [--baseline FILE] [--out FILE]
//   hicu inspect     --checkpoint FILE --data FILE --doc ID --label CODE [--top-n N]
//
// Options may also come from `--config FILE`, an INI file with one section
// per command whose keys are the long flag names, e.g.
//
//   [train]
//   mode = hicu
//   epochs-per-level = 1,1,2,4,20
//
// Flags on the command line take precedence over the file. HICU_SEED
// supplies the seed when neither sets it.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "hicu/commands.hpp"

namespace {

using hicu::ErrorCode;

std::uint64_t resolve_seed(CLI::App* cmd, std::uint64_t seed) {
  if (cmd->count("--seed") > 0) return seed;
  if (const char* env = std::getenv("HICU_SEED")) {
    const auto v = hicu::parse_integer(env);
    hicu::require(v >= 0, ErrorCode::usage, "HICU_SEED must be a non-negative integer");
    return static_cast<std::uint64_t>(v);
  }
  return seed;
}

int report_error(ErrorCode code, const std::string& detail) {
  std::cerr << "error[" << hicu::error_code_name(code) << "]: " << detail << "\n";
  return code == ErrorCode::usage ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical curriculum learning over ICD-style label trees"};
  app.set_config("--config", "", "INI file with [command] sections keyed by flag name");
  app.fallthrough();
  app.require_subcommand(1);

  std::uint64_t seed = 0;

  // synth
  hicu::SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic hierarchical corpus");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--seed", seed, "Random seed");
  synth_cmd->add_option("--branching", synth.synth.branching, "Children per node, five levels")->delimiter(',');
  synth_cmd->add_option("--zipf", synth.synth.zipf_exponent, "Leaf frequency Zipf exponent");
  synth_cmd->add_option("--tokens-per-signature", synth.synth.tokens_per_signature);
  synth_cmd->add_option("--doc-length", synth.synth.doc_length);
  synth_cmd->add_option("--noise-rate", synth.synth.noise_rate);
  synth_cmd->add_option("--max-labels", synth.synth.max_labels_per_doc);
  synth_cmd->add_option("--noise-vocab", synth.synth.noise_vocab);
  synth_cmd->add_option("--train-docs", synth.synth.train_docs);
  synth_cmd->add_option("--valid-docs", synth.synth.valid_docs);
  synth_cmd->add_option("--test-docs", synth.synth.test_docs);

  // build-tree
  hicu::BuildTreeArgs build;
  std::string build_train, build_valid, build_test;
  std::size_t build_top_k = 0;
  auto* build_cmd = app.add_subcommand("build-tree", "Build the augmented label tree from dataset codes");
  build_cmd->add_option("--ranges", build.ranges, "Range table")->required();
  build_cmd->add_option("--train", build_train, "Dataset file")->required();
  build_cmd->add_option("--valid", build_valid, "Additional dataset file");
  build_cmd->add_option("--test", build_test, "Additional dataset file");
  build_cmd->add_option("--top-k-labels", build_top_k, "Keep the K most frequent training codes");
  build_cmd->add_option("--out", build.out, "Tree file to write")->required();

  // embed
  hicu::EmbedArgs embed;
  auto* embed_cmd = app.add_subcommand("embed", "Train Poincare embeddings of a label tree");
  embed_cmd->add_option("--tree", embed.tree, "Tree file")->required();
  embed_cmd->add_option("--out", embed.out, "Embedding file to write")->required();
  embed_cmd->add_option("--seed", seed, "Random seed");
  embed_cmd->add_option("--dim", embed.embed.dim);
  embed_cmd->add_option("--epochs", embed.embed.epochs);
  embed_cmd->add_option("--lr", embed.embed.learning_rate);
  embed_cmd->add_option("--burn-in", embed.embed.burn_in_epochs);
  embed_cmd->add_option("--burn-in-lr-scale", embed.embed.burn_in_lr_scale);
  embed_cmd->add_option("--negatives", embed.embed.negatives);

  // train
  hicu::TrainArgs train;
  std::string mode = "hicu", correction = "add", loss = "asl";
  std::size_t train_top_k = 0;
  int stop_after = 0;
  bool freeze_embeddings = false;
  auto& cur = train.curriculum;
  auto* train_cmd = app.add_subcommand("train", "Train with the curriculum (hicu) or directly on the leaves (flat)");
  train_cmd->add_option("--train", train.train, "Training split")->required();
  train_cmd->add_option("--valid", train.valid, "Validation split");
  train_cmd->add_option("--tree", train.tree, "Tree file");
  train_cmd->add_option("--ranges", train.ranges, "Range table (with --top-k-labels)");
  train_cmd->add_option("--hyp-emb", train.hyp_emb, "Poincare embedding file");
  train_cmd->add_option("--word-emb", train.word_emb, "Pretrained word vectors");
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--resume", train.resume, "Continue from a checkpoint");
  train_cmd->add_option("--seed", seed, "Random seed");
  train_cmd->add_option("--mode", mode, "hicu|flat");
  train_cmd->add_option("--correction", correction, "none|add|concat");
  train_cmd->add_option("--loss", loss, "bce|asl");
  train_cmd->add_option("--gamma-pos", cur.loss.asl.gamma_pos);
  train_cmd->add_option("--gamma-neg", cur.loss.asl.gamma_neg);
  train_cmd->add_option("--margin", cur.loss.asl.margin);
  train_cmd->add_option("--epochs-per-level", cur.epochs_per_level, "Comma list, one per level")->delimiter(',');
  train_cmd->add_option("--epoch-scale", train.epoch_scale, "Multiplier applied to every level's epochs");
  train_cmd->add_option("--batch-size", cur.batch_size);
  train_cmd->add_option("--lr", cur.learning_rate);
  train_cmd->add_option("--max-len", train.max_len);
  train_cmd->add_option("--min-count", train.min_count);
  train_cmd->add_option("--top-k-labels", train_top_k);
  train_cmd->add_option("--p-at", cur.p_at_k, "Comma list of K")->delimiter(',');
  train_cmd->add_option("--workers", cur.workers);
  train_cmd->add_option("--stop-metric", cur.stop_metric, "micro_f1|macro_f1|micro_auc|macro_auc|p@K");
  train_cmd->add_option("--patience", cur.patience);
  train_cmd->add_option("--embed-dim", train.embed_dim);
  train_cmd->add_option("--feature-dim", train.feature_dim);
  train_cmd->add_option("--kernel-width", train.kernel_width);
  train_cmd->add_flag("--transfer-output", cur.transfer_output_layer, "Transfer W and b along with Q");
  train_cmd->add_flag("--carry-optimizer", cur.carry_optimizer_state, "Keep Adam moments across levels");
  train_cmd->add_flag("--reinit-correction", cur.reinit_correction, "Redraw the correction transform per level");
  train_cmd->add_flag("--fresh-final-decoder", cur.fresh_final_decoder, "Random final-level queries");
  train_cmd->add_flag("--freeze-embeddings", freeze_embeddings, "Do not update word embeddings");
  train_cmd->add_option("--stop-after", stop_after, "Pause after this many epochs (resume later)");

  // eval
  hicu::EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--test", eval.test)->required();
  eval_cmd->add_option("--train", eval.train, "Split used for label frequencies");
  eval_cmd->add_option("--baseline", eval.baseline, "Eval output of a baseline model");
  eval_cmd->add_option("--dump-scores", eval.dump_scores, "Write the score matrix as TSV");
  eval_cmd->add_option("--out", eval.out, "Write metrics as JSON");
  eval_cmd->add_option("--p-at", eval.p_at_k)->delimiter(',');
  eval_cmd->add_option("--threshold", eval.threshold);
  eval_cmd->add_option("--buckets", eval.buckets);

  // inspect
  hicu::InspectArgs inspect;
  auto* inspect_cmd = app.add_subcommand("inspect", "Show the top-attended tokens for one label");
  inspect_cmd->add_option("--checkpoint", inspect.checkpoint)->required();
  inspect_cmd->add_option("--data", inspect.data, "Dataset holding the document")->required();
  inspect_cmd->add_option("--doc", inspect.doc)->required();
  inspect_cmd->add_option("--label", inspect.label)->required();
  inspect_cmd->add_option("--top-n", inspect.top_n);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string what = e.what();
    for (auto& c : what)
      if (c == '\n') c = ' ';
    return report_error(ErrorCode::usage, what);
  }

  try {
    if (*synth_cmd) {
      synth.synth.seed = resolve_seed(synth_cmd, seed);
      return hicu::cmd_synth(synth, std::cout);
    }
    if (*build_cmd) {
      build.datasets.emplace_back(build_train);
      if (!build_valid.empty()) build.datasets.emplace_back(build_valid);
      if (!build_test.empty()) build.datasets.emplace_back(build_test);
      if (build_cmd->count("--top-k-labels")) build.top_k_labels = build_top_k;
      return hicu::cmd_build_tree(build, std::cout);
    }
    if (*embed_cmd) {
      embed.embed.seed = resolve_seed(embed_cmd, seed);
      return hicu::cmd_embed(embed, std::cout);
    }
    if (*train_cmd) {
      train.mode = hicu::parse_mode(mode);
      train.correction = hicu::parse_correction(correction);
      cur.loss.kind = hicu::parse_loss_kind(loss);
      cur.seed = resolve_seed(train_cmd, seed);
      train.finetune_embeddings = !freeze_embeddings;
      if (train_cmd->count("--top-k-labels")) train.top_k_labels = train_top_k;
      if (train_cmd->count("--stop-after")) train.stop_after = stop_after;
      return hicu::cmd_train(train, std::cout);
    }
    if (*eval_cmd) return hicu::cmd_eval(eval, std::cout);
    if (*inspect_cmd) return hicu::cmd_inspect(inspect, std::cout);
  } catch (const hicu::Error& e) {
    return report_error(e.code(), e.what());
  } catch (const std::exception& e) {
    return report_error(ErrorCode::io, e.what());
  }
  return 0;
}
