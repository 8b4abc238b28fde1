// numex — numeral/unit/metric extraction pipeline driver.
//
// Subcommands: preprocess, build-dataset, train, eval, extract, synth,
// stats. Exit codes: 0 success, 1 usage error, 2 data error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "numex/annotation.hpp"
#include "numex/dataset.hpp"
#include "numex/errors.hpp"
#include "numex/extract.hpp"
#include "numex/metrics.hpp"
#include "numex/preprocess.hpp"
#include "numex/synth.hpp"
#include "numex/tagger.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw numex::IoError("cannot write " + path.string());
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw numex::IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void echo_config(const fs::path& out_dir, const std::string& command, const ordered_json& values) {
  ordered_json j;
  j["command"] = command;
  j["config"] = values;
  write_text(out_dir / "config.json", j.dump(2) + "\n");
}

// --- preprocess ---

struct PreprocessArgs {
  std::string input;
  std::string out;
  bool keep_all = false;
};

int run_preprocess(const PreprocessArgs& args) {
  fs::create_directories(args.out);

  std::vector<fs::path> inputs;
  if (fs::is_directory(args.input)) {
    for (const auto& entry : fs::directory_iterator(args.input))
      if (entry.is_regular_file() &&
          (entry.path().extension() == ".txt" || entry.path().extension() == ".jsonl"))
        inputs.push_back(entry.path());
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.push_back(args.input);
  }
  if (inputs.empty()) throw numex::IoError("no .txt or .jsonl inputs under " + args.input);

  std::ofstream sidecar(fs::path(args.out) / "sentences.jsonl", std::ios::binary);
  std::size_t kept_total = 0;

  for (const auto& path : inputs) {
    std::vector<numex::RawAbstract> abstracts;
    if (path.extension() == ".jsonl") {
      std::ifstream f(path);
      std::string line;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        abstracts.push_back({j.at("source_id").get<std::string>(), j.at("body").get<std::string>()});
      }
    } else {
      abstracts.push_back({path.stem().string(), read_text(path)});
    }

    for (const auto& abstract : abstracts) {
      std::vector<numex::TokenizedSentence> sentences;
      for (const auto& text : numex::segment_sentences(abstract))
        sentences.push_back(numex::normalize_numerals(numex::tokenize(text)));
      if (!args.keep_all) sentences = numex::filter_numeral_sentences(std::move(sentences));
      if (sentences.empty()) continue;

      const fs::path out_file = fs::path(args.out) / (abstract.source_id + ".txt");
      std::ofstream out(out_file, std::ios::binary);
      for (std::size_t i = 0; i < sentences.size(); ++i) {
        out << sentences[i].text << '\n';
        ordered_json j;
        j["doc_id"] = abstract.source_id + "#" + std::to_string(i);
        j["source_id"] = abstract.source_id;
        j["sentence_ordinal"] = i;
        sidecar << j.dump() << '\n';
      }
      kept_total += sentences.size();
    }
  }
  echo_config(args.out, "preprocess",
              {{"input", args.input}, {"keep_all", args.keep_all}, {"sentences", kept_total}});
  std::cout << "wrote " << kept_total << " sentences to " << args.out << "\n";
  return kExitOk;
}

// --- build-dataset ---

struct BuildArgs {
  std::string input;
  std::string out;
  double ratio = 0.9;
  std::uint64_t seed = 0;
  int margin = 5;
  int max_len = 50;
  bool vocab_from_train_only = false;
};

int run_build(const BuildArgs& args) {
  const auto docs = numex::load_standoff_dir(args.input);
  for (const auto& doc : docs) {
    const auto violations = numex::validate_doc(doc);
    if (!violations.empty())
      throw numex::Error(doc.doc_id + ": " + std::string(numex::to_string(violations[0].rule)) +
                         " (" + violations[0].message + ")");
  }

  std::vector<numex::TrainingInstance> instances;
  for (const auto& doc : docs)
    for (const auto& seq : numex::make_instances(doc))
      instances.push_back(numex::truncate_and_pad(seq, args.margin, args.max_len));

  auto split = numex::split_dataset(std::move(instances), args.ratio, args.seed);

  numex::Vocabulary vocab;
  if (args.vocab_from_train_only) {
    // leakage-sensitive mode: count only tokens visible in training windows
    std::vector<numex::AnnotatedDoc> pseudo;
    pseudo.reserve(split.train.size());
    for (const auto& inst : split.train) {
      numex::AnnotatedDoc d;
      for (const auto& tok : inst.tokens) d.tokens.push_back(numex::Token{tok, 0, 0});
      pseudo.push_back(std::move(d));
    }
    vocab = numex::build_vocab(pseudo);
  } else {
    vocab = numex::build_vocab(docs);
  }

  for (auto* part : {&split.train, &split.test})
    for (auto& inst : *part) inst.indices = numex::encode(inst.tokens, vocab);

  fs::create_directories(fs::path(args.out) / "vocab");
  fs::create_directories(fs::path(args.out) / "instances");
  numex::save_vocab(vocab, fs::path(args.out) / "vocab" / "vocab.txt");
  numex::write_instances_jsonl(split.train, fs::path(args.out) / "instances" / "train.jsonl");
  numex::write_instances_jsonl(split.test, fs::path(args.out) / "instances" / "test.jsonl");

  std::vector<numex::TrainingInstance> all;
  all.reserve(split.train.size() + split.test.size());
  all.insert(all.end(), split.train.begin(), split.train.end());
  all.insert(all.end(), split.test.begin(), split.test.end());
  numex::write_instances_jsonl(all, fs::path(args.out) / "instances" / "instances.jsonl");

  echo_config(args.out, "build-dataset",
              {{"input", args.input},
               {"ratio", args.ratio},
               {"seed", args.seed},
               {"margin", args.margin},
               {"max_len", args.max_len},
               {"vocab_from_train_only", args.vocab_from_train_only},
               {"vocab_size", vocab.size()},
               {"train_instances", split.train.size()},
               {"test_instances", split.test.size()}});
  std::cout << "docs=" << docs.size() << " train=" << split.train.size()
            << " test=" << split.test.size() << " vocab=" << vocab.size() << "\n";
  return kExitOk;
}

// --- train ---

struct TrainArgs {
  std::string dataset;
  std::string out;
  int epochs = 20;
  int batch = 32;
  double lr = 0.003;
  int embed = 128;
  int hidden = 128;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  std::string precision = "f32";
  bool no_eval_val = false;
  bool mask_padding_loss = false;
};

template <class S>
int run_train_typed(const TrainArgs& args, const numex::Vocabulary& vocab,
                    numex::DatasetSplit&& split) {
  numex::ModelConfig config;
  config.seq_len = static_cast<int>(split.train.at(0).indices.size());
  config.embed_dim = args.embed;
  config.hidden_dim = args.hidden;
  config.dropout_rate = args.dropout;
  config.vocab_size = vocab.size();
  config.mask_padding_loss = args.mask_padding_loss;

  auto model = numex::init_model<S>(config, args.seed);

  numex::TrainOptions options;
  options.epochs = args.epochs;
  options.batch_size = args.batch;
  options.learning_rate = args.lr;
  options.seed = args.seed;
  options.eval_val = !args.no_eval_val;

  const auto history = numex::train(model, split, options);
  for (const auto& e : history) {
    std::cout << "epoch " << e.epoch << " train_loss=" << e.train_loss
              << " train_dice=" << e.train_dice;
    if (e.val_loss) std::cout << " val_loss=" << *e.val_loss;
    if (e.val_dice) std::cout << " val_dice=" << *e.val_dice;
    std::cout << "\n";
  }

  fs::create_directories(fs::path(args.out) / "checkpoints");
  numex::save_checkpoint(model, fs::path(args.out) / "checkpoints" / "model.ckpt",
                         vocab.content_hash());
  numex::write_history_jsonl(history, fs::path(args.out) / "history.jsonl");
  return kExitOk;
}

int run_train(const TrainArgs& args) {
  if (args.precision != "f32" && args.precision != "f64")
    throw CLI::ValidationError("--precision must be f32 or f64");

  const fs::path dataset(args.dataset);
  const auto vocab = numex::load_vocab(dataset / "vocab" / "vocab.txt");
  numex::DatasetSplit split;
  split.train = numex::read_instances_jsonl(dataset / "instances" / "train.jsonl");
  split.test = numex::read_instances_jsonl(dataset / "instances" / "test.jsonl");
  split.seed = args.seed;

  fs::create_directories(args.out);
  echo_config(args.out, "train",
              {{"dataset", args.dataset},
               {"epochs", args.epochs},
               {"batch", args.batch},
               {"lr", args.lr},
               {"embed", args.embed},
               {"hidden", args.hidden},
               {"dropout", args.dropout},
               {"seed", args.seed},
               {"precision", args.precision},
               {"eval_val", !args.no_eval_val},
               {"mask_padding_loss", args.mask_padding_loss}});

  if (args.precision == "f64") return run_train_typed<double>(args, vocab, std::move(split));
  return run_train_typed<float>(args, vocab, std::move(split));
}

// --- eval ---

struct EvalArgs {
  std::string checkpoint;
  std::string instances;
  std::string vocab;
  std::string out;
  bool pooled = false;
  double dice_eps = numex::kDiceEpsilon;
};

int run_eval(const EvalArgs& args) {
  const auto vocab = numex::load_vocab(args.vocab);
  const auto instances = numex::read_instances_jsonl(args.instances);
  const auto loaded = numex::load_checkpoint(args.checkpoint, vocab.content_hash());

  const numex::EvalReport report = std::visit(
      [&](const auto& model) {
        return numex::evaluate(model, instances, args.pooled, args.dice_eps);
      },
      loaded);

  std::cout << numex::summary_line(report) << "\n";
  if (!args.out.empty()) {
    fs::create_directories(fs::path(args.out).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(args.out).parent_path());
    write_text(args.out, numex::to_json(report) + "\n");
  }
  return kExitOk;
}

// --- extract ---

struct ExtractArgs {
  std::string checkpoint;
  std::string vocab;
  std::string input;
  std::string out;
  std::string csv;
  bool hierarchical = false;
  int max_depth = 3;
  std::string mask_mode = "oov";
};

int run_extract(const ExtractArgs& args) {
  const auto vocab = numex::load_vocab(args.vocab);
  const auto loaded = numex::load_checkpoint(args.checkpoint, vocab.content_hash());

  numex::ExtractOptions options;
  options.max_depth = args.max_depth;
  if (args.mask_mode == "num")
    options.mask_mode = numex::HierMaskMode::Num;
  else if (args.mask_mode != "oov")
    throw CLI::ValidationError("--mask-mode must be oov or num");
  std::visit([&](const auto& model) { options.max_len = model.config.seq_len; }, loaded);

  std::vector<fs::path> inputs;
  if (fs::is_directory(args.input)) {
    for (const auto& entry : fs::directory_iterator(args.input))
      if (entry.is_regular_file() && entry.path().extension() == ".txt")
        inputs.push_back(entry.path());
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.push_back(args.input);
  }

  std::vector<numex::ExtractionRecord> records;
  for (const auto& path : inputs) {
    const numex::RawAbstract abstract{path.stem().string(), read_text(path)};
    const auto sentences = numex::segment_sentences(abstract);
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      const auto sentence = numex::normalize_numerals(numex::tokenize(sentences[i]));
      if (sentence.numeral_positions.empty()) continue;
      const std::string doc_id = abstract.source_id + "#" + std::to_string(i);
      auto found = std::visit(
          [&](const auto& model) {
            return args.hierarchical
                       ? numex::extract_hierarchical(model, vocab, sentence, doc_id, options)
                       : numex::extract_sentence(model, vocab, sentence, doc_id, options);
          },
          loaded);
      records.insert(records.end(), std::make_move_iterator(found.begin()),
                     std::make_move_iterator(found.end()));
    }
  }

  const std::string jsonl = numex::records_to_jsonl(records);
  if (args.out.empty())
    std::cout << jsonl;
  else
    write_text(args.out, jsonl);
  if (!args.csv.empty()) write_text(args.csv, numex::records_to_csv(records));
  return kExitOk;
}

// --- synth / stats ---

struct SynthArgs {
  std::string out;
  numex::SynthOptions options;
};

int run_synth(const SynthArgs& args) {
  const auto docs = numex::generate_corpus(args.options);
  numex::write_corpus(docs, args.out);
  echo_config(args.out, "synth",
              {{"sentences", args.options.n_sentences},
               {"seed", args.options.seed},
               {"no_entity_fraction", args.options.no_entity_fraction},
               {"max_distractor_blocks", args.options.max_distractor_blocks},
               {"p_value_block_share", args.options.p_value_block_share},
               {"opener_fraction", args.options.opener_fraction},
               {"masked_variant_fraction", args.options.masked_variant_fraction}});
  std::cout << "wrote " << docs.size() << " sentences to " << args.out << "\n";
  return kExitOk;
}

int run_stats(const std::string& input) {
  const auto docs = numex::load_standoff_dir(input);
  std::cout << numex::to_json(numex::corpus_stats(docs)) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numeral/unit/metric extraction pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read option defaults from a config file");

  PreprocessArgs pre;
  auto* cmd_pre = app.add_subcommand("preprocess", "raw abstracts -> tokenized sentence files");
  cmd_pre->add_option("--input", pre.input, "abstract .txt/.jsonl file or directory")->required();
  cmd_pre->add_option("--out", pre.out, "output directory")->required();
  cmd_pre->add_flag("--keep-all", pre.keep_all, "keep sentences without numerals");

  BuildArgs build;
  auto* cmd_build = app.add_subcommand("build-dataset", ".txt/.ann pairs -> vocab + instances");
  cmd_build->add_option("--input", build.input, "directory of .txt/.ann pairs")->required();
  cmd_build->add_option("--out", build.out, "output directory")->required();
  cmd_build->add_option("--ratio", build.ratio, "train fraction")->capture_default_str();
  cmd_build->add_option("--seed", build.seed, "split seed")->envname("NUMEX_SEED")->capture_default_str();
  cmd_build->add_option("--margin", build.margin, "window margin in words")->capture_default_str();
  cmd_build->add_option("--max-len", build.max_len, "padded instance length")->capture_default_str();
  cmd_build->add_flag("--vocab-from-train-only", build.vocab_from_train_only,
                      "build the vocabulary from training windows only");

  TrainArgs train;
  auto* cmd_train = app.add_subcommand("train", "instances -> checkpoint + history");
  cmd_train->add_option("--dataset", train.dataset, "build-dataset output directory")->required();
  cmd_train->add_option("--out", train.out, "output directory")->required();
  cmd_train->add_option("--epochs", train.epochs)->capture_default_str();
  cmd_train->add_option("--batch", train.batch)->capture_default_str();
  cmd_train->add_option("--lr", train.lr)->capture_default_str();
  cmd_train->add_option("--embed", train.embed)->capture_default_str();
  cmd_train->add_option("--hidden", train.hidden)->capture_default_str();
  cmd_train->add_option("--dropout", train.dropout)->capture_default_str();
  cmd_train->add_option("--seed", train.seed)->envname("NUMEX_SEED")->capture_default_str();
  cmd_train->add_option("--precision", train.precision, "f32 or f64")->capture_default_str();
  cmd_train->add_flag("--no-eval-val", train.no_eval_val, "skip per-epoch test-split metrics");
  cmd_train->add_flag("--mask-padding-loss", train.mask_padding_loss,
                      "exclude [pad] positions from the loss (ablation)");

  EvalArgs eval;
  auto* cmd_eval = app.add_subcommand("eval", "checkpoint + instances -> metrics report");
  cmd_eval->add_option("--checkpoint", eval.checkpoint)->required();
  cmd_eval->add_option("--instances", eval.instances)->required();
  cmd_eval->add_option("--vocab", eval.vocab)->required();
  cmd_eval->add_option("--out", eval.out, "write the JSON report here");
  cmd_eval->add_flag("--pooled", eval.pooled, "pool dice sums across instances");
  cmd_eval->add_option("--dice-eps", eval.dice_eps, "smoothing term in the dice denominator")
      ->capture_default_str();

  ExtractArgs extract;
  auto* cmd_extract = app.add_subcommand("extract", "checkpoint + raw text -> JSONL records");
  cmd_extract->add_option("--checkpoint", extract.checkpoint)->required();
  cmd_extract->add_option("--vocab", extract.vocab)->required();
  cmd_extract->add_option("--input", extract.input, "raw text file or directory")->required();
  cmd_extract->add_option("--out", extract.out, "JSONL output (stdout when omitted)");
  cmd_extract->add_option("--csv", extract.csv, "also write a flat CSV here");
  cmd_extract->add_flag("--hierarchical", extract.hierarchical,
                        "mask found metrics and re-tag for outer metrics");
  cmd_extract->add_option("--max-depth", extract.max_depth)->capture_default_str();
  cmd_extract->add_option("--mask-mode", extract.mask_mode, "oov or num")->capture_default_str();

  SynthArgs synth;
  auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic annotated corpus");
  cmd_synth->add_option("--out", synth.out, "output directory")->required();
  cmd_synth->add_option("--sentences", synth.options.n_sentences)->capture_default_str();
  cmd_synth->add_option("--seed", synth.options.seed)->envname("NUMEX_SEED")->capture_default_str();
  cmd_synth->add_option("--no-entity-fraction", synth.options.no_entity_fraction)
      ->capture_default_str();
  cmd_synth->add_option("--max-distractor-blocks", synth.options.max_distractor_blocks)
      ->capture_default_str();
  cmd_synth->add_option("--masked-variant-fraction", synth.options.masked_variant_fraction)
      ->capture_default_str();

  std::string stats_input;
  auto* cmd_stats = app.add_subcommand("stats", "corpus summary for .txt/.ann pairs");
  cmd_stats->add_option("--input", stats_input, "directory of .txt/.ann pairs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cmd_pre->parsed()) return run_preprocess(pre);
    if (cmd_build->parsed()) return run_build(build);
    if (cmd_train->parsed()) return run_train(train);
    if (cmd_eval->parsed()) return run_eval(eval);
    if (cmd_extract->parsed()) return run_extract(extract);
    if (cmd_synth->parsed()) return run_synth(synth);
    if (cmd_stats->parsed()) return run_stats(stats_input);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const numex::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
