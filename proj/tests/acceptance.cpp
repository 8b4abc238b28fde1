// Acceptance suite: runs every release criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Returns the number of
// failed criteria. Pipeline-level criteria drive the CLI binary given via
// --cli; artifacts land under --workdir.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "numex/annotation.hpp"
#include "numex/dataset.hpp"
#include "numex/errors.hpp"
#include "numex/extract.hpp"
#include "numex/metrics.hpp"
#include "numex/rng.hpp"
#include "numex/synth.hpp"
#include "numex/tagger.hpp"

namespace fs = std::filesystem;
using namespace numex;

namespace {

struct Context {
  std::string cli = "numex";
  fs::path workdir = "acceptance_work";
};

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int run_cli(const Context& ctx, const std::string& args, const fs::path& log) {
  const std::string cmd = ctx.cli + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

bool files_identical(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && read_file(a) == read_file(b);
}

// independent naive evaluator of the dice formula, double loop
double naive_dice(const Eigen::MatrixXd& p, const Eigen::MatrixXd& t, double eps = 1e-5) {
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    double inter = 0.0, p_sq = 0.0, t_sq = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      inter += p(i, c) * t(i, c);
      p_sq += p(i, c) * p(i, c);
      t_sq += t(i, c) * t(i, c);
    }
    total += (2.0 * inter + eps) / (p_sq + t_sq + eps);
  }
  return total / 3.0;
}

Eigen::MatrixXd random_probs(int rows, Rng& rng) {
  Eigen::MatrixXd p(rows, 3);
  for (int i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
      p(i, c) = rng.uniform() + 1e-9;
      sum += p(i, c);
    }
    for (int c = 0; c < 3; ++c) p(i, c) /= sum;
  }
  return p;
}

Eigen::MatrixXd random_one_hot(int rows, Rng& rng) {
  std::vector<int> labels(static_cast<std::size_t>(rows));
  for (auto& l : labels) l = static_cast<int>(rng.below(3));
  return one_hot(labels);
}

// ---------------------------------------------------------------- 1 ---

bool criterion_1_dice_oracle(const Context&) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(1001);
  double max_delta = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const auto p = random_probs(50, rng);
    const auto t = random_one_hot(50, rng);
    max_delta = std::max(max_delta, std::abs(soft_dice(p, t).dice - naive_dice(p, t)));
  }
  const double secs = elapsed_seconds(start);
  std::cout << "    max |delta| = " << max_delta << ", " << secs << " s\n";
  return max_delta < 1e-12 && secs < 5.0;
}

// ---------------------------------------------------------------- 2 ---

bool criterion_2_dice_fixed_points(const Context&) {
  Rng rng(1002);
  const auto t = random_one_hot(50, rng);
  bool ok = soft_dice(t, t).dice == 1.0;

  Eigen::MatrixXd t2(2, 3);
  t2 << 1, 0, 0, 0, 1, 0;
  const Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(2, 3, 1.0 / 3.0);
  const double d = soft_dice(uniform, t2).dice;
  ok = ok && std::abs(d - 0.3636) < 1e-4;

  Eigen::MatrixXd single(1, 3);
  single << 1, 0, 0;
  ok = ok && soft_dice(single, single).dice == 1.0;
  std::cout << "    uniform case = " << d << "\n";
  return ok;
}

// ---------------------------------------------------------------- 3 ---

bool criterion_3_gradient_check(const Context&) {
  const auto start = std::chrono::steady_clock::now();

  ModelConfig cfg;
  cfg.seq_len = 12;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 6;
  cfg.vocab_size = 30;
  cfg.dropout_rate = 0.5;

  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto model = init_model<double>(cfg, seed);
    Rng data_rng(seed * 31 + 7);
    Batch batch;
    batch.indices.resize(1, cfg.seq_len);
    batch.labels.resize(1, cfg.seq_len);
    for (int t = 0; t < cfg.seq_len; ++t) {
      batch.indices(0, t) = static_cast<int>(data_rng.below(30));
      batch.labels(0, t) = static_cast<int>(data_rng.below(3));
    }

    Rng dropout_rng(seed * 17 + 3);
    const auto cache = forward(model, batch, true, &dropout_rng);
    auto analytic = backward(model, cache, batch.labels);
    const auto& mask = cache.dropout_mask;

    std::map<std::string, double> num, den_a, den_f;
    for (auto& ref : param_refs(model.params)) {
      const std::string group = ref.name == "embedding" ? "embedding"
                                : ref.name.starts_with("dense")
                                    ? "dense"
                                    : ref.name.substr(0, ref.name.find_last_of('.'));
      MatX<double>* analytic_mat = nullptr;
      for (auto& g : param_refs(analytic))
        if (g.name == ref.name) analytic_mat = g.mat;
      for (Eigen::Index r = 0; r < ref.mat->rows(); ++r)
        for (Eigen::Index c = 0; c < ref.mat->cols(); ++c) {
          const double saved = (*ref.mat)(r, c);
          const double h = 1e-5;
          (*ref.mat)(r, c) = saved + h;
          const double up =
              batch_loss(model, forward(model, batch, true, nullptr, &mask), batch.labels);
          (*ref.mat)(r, c) = saved - h;
          const double down =
              batch_loss(model, forward(model, batch, true, nullptr, &mask), batch.labels);
          (*ref.mat)(r, c) = saved;
          const double g_fd = (up - down) / (2.0 * h);
          const double g_an = (*analytic_mat)(r, c);
          num[group] += (g_an - g_fd) * (g_an - g_fd);
          den_a[group] += g_an * g_an;
          den_f[group] += g_fd * g_fd;
        }
    }
    for (const auto& [group, nq] : num) {
      const double rel = std::sqrt(nq) /
                         std::max(1e-30, std::max(std::sqrt(den_a[group]), std::sqrt(den_f[group])));
      worst = std::max(worst, rel);
    }
  }
  const double secs = elapsed_seconds(start);
  std::cout << "    worst group relative error = " << worst << " over 20 seeds, " << secs
            << " s\n";
  return worst < 1e-4 && secs < 60.0;
}

// ---------------------------------------------------------------- 4 ---

bool criterion_4_overfit(const Context&) {
  const auto start = std::chrono::steady_clock::now();

  SynthOptions options;
  options.n_sentences = 10;
  options.seed = 1204;
  const auto docs = generate_corpus(options);

  std::vector<TrainingInstance> instances;
  for (const auto& doc : docs)
    for (const auto& seq : make_instances(doc)) instances.push_back(truncate_and_pad(seq));
  instances.resize(16);
  const auto vocab = build_vocab(docs);
  for (auto& inst : instances) inst.indices = encode(inst.tokens, vocab);

  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  auto model = init_model<float>(cfg, 1204);

  DatasetSplit split;
  split.train = instances;

  double dice = 0.0;
  int epochs_used = 0;
  TrainOptions topt;
  topt.seed = 1204;
  topt.eval_val = false;
  topt.epochs = 25;
  while (epochs_used < 300) {
    train(model, split, topt);
    epochs_used += topt.epochs;
    dice = evaluate(model, instances).dice;
    if (dice >= 0.99) break;
  }
  const double secs = elapsed_seconds(start);
  std::cout << "    training dice = " << dice << " after " << epochs_used << " epochs, " << secs
            << " s\n";
  return dice >= 0.99 && epochs_used <= 300 && secs < 120.0;
}

// ---------------------------------------------------------------- 5 ---

bool criterion_5_end_to_end(const Context& ctx) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = ctx.workdir / "c5";
  fs::create_directories(dir);

  if (run_cli(ctx, "synth --out " + (dir / "corpus").string() + " --sentences 500 --seed 1205",
              dir / "synth.log") != 0)
    return false;
  if (run_cli(ctx,
              "build-dataset --input " + (dir / "corpus").string() + " --out " +
                  (dir / "ds").string() + " --seed 1205",
              dir / "build.log") != 0)
    return false;

  const auto build_cfg = nlohmann::json::parse(read_file(dir / "ds" / "config.json"));
  const std::size_t n_train = build_cfg["config"]["train_instances"].get<std::size_t>();
  const std::size_t n_test = build_cfg["config"]["test_instances"].get<std::size_t>();
  const std::size_t n_total = n_train + n_test;

  // reference hyperparameters are the CLI defaults: lr 0.003, batch 32,
  // 20 epochs, embedding 128
  if (run_cli(ctx,
              "train --dataset " + (dir / "ds").string() + " --out " + (dir / "run").string() +
                  " --seed 1205 --no-eval-val",
              dir / "train.log") != 0)
    return false;
  if (run_cli(ctx,
              "eval --checkpoint " + (dir / "run" / "checkpoints" / "model.ckpt").string() +
                  " --instances " + (dir / "ds" / "instances" / "test.jsonl").string() +
                  " --vocab " + (dir / "ds" / "vocab" / "vocab.txt").string() + " --out " +
                  (dir / "report.json").string(),
              dir / "eval.log") != 0)
    return false;

  const auto report = eval_report_from_json(read_file(dir / "report.json"));
  const double secs = elapsed_seconds(start);
  std::cout << "    instances = " << n_total << " (" << n_train << "/" << n_test
            << "), test dice = " << report.dice << ", test accuracy = " << report.accuracy << ", "
            << secs << " s\n";
  return n_total >= 1200 && n_total <= 1800 && report.dice >= 0.80 &&
         report.accuracy > report.dice && secs <= 900.0;
}

// ---------------------------------------------------------------- 6 ---

bool criterion_6_baseline_separation(const Context& ctx) {
  const fs::path test_file = ctx.workdir / "c5" / "ds" / "instances" / "test.jsonl";
  if (!fs::exists(test_file)) return false;
  const auto instances = read_instances_jsonl(test_file);

  Eigen::MatrixXd constant_none = Eigen::MatrixXd::Zero(50, 3);
  constant_none.col(0).setOnes();
  std::vector<Eigen::MatrixXd> probs(instances.size(), constant_none);
  std::vector<const std::vector<int>*> labels;
  for (const auto& inst : instances) labels.push_back(&inst.labels);

  const auto report = aggregate_eval(probs, labels);
  std::cout << "    all-none baseline: accuracy = " << report.accuracy
            << ", dice = " << report.dice << " on " << report.n_instances << " instances\n";
  return report.accuracy >= 0.85 && report.dice < 0.5;
}

// ---------------------------------------------------------------- 7 ---

bool criterion_7_round_trip(const Context& ctx) {
  const fs::path corpus = ctx.workdir / "c5" / "corpus";
  if (!fs::exists(corpus / "corpus.txt")) return false;
  const auto docs = load_standoff_dir(corpus);

  std::size_t checked = 0, matched = 0;
  for (const auto& doc : docs) {
    if (!validate_doc(doc).empty()) return false;
    for (const auto& seq : make_instances(doc)) {
      const auto inst = truncate_and_pad(seq);
      const auto [win_lo, win_hi] = inst.meta.window;

      const Entity* target = nullptr;
      for (const auto& e : doc.entities)
        if (e.kind == EntityKind::Num && e.surface == inst.meta.target_numeral_value &&
            static_cast<int>(e.word_start) == inst.meta.target_word_pos)
          target = &e;
      if (!target) return false;
      const int k = static_cast<int>(expand_numeral(target->surface).size());
      const auto shift = [&](std::ptrdiff_t w) {
        return static_cast<int>(w > target->word_start ? w + k - 1 : w);
      };

      std::set<std::pair<int, int>> expected_units, expected_metrics;
      for (const auto& rel : doc.relations) {
        if (rel.source != target->id) continue;
        const Entity* e = doc.find_entity(rel.target);
        (rel.kind == RelationKind::HasUnit ? expected_units : expected_metrics)
            .insert({shift(e->word_start) - win_lo, shift(e->word_end) - win_lo});
      }

      const auto spans = decode_labels(TagSequence{inst.labels}, inst.tokens);
      std::set<std::pair<int, int>> got_units, got_metrics;
      for (const auto& s : spans.units) got_units.insert({s.word_start, s.word_end});
      for (const auto& s : spans.metrics) got_metrics.insert({s.word_start, s.word_end});

      ++checked;
      matched += got_units == expected_units && got_metrics == expected_metrics;
    }
  }
  std::cout << "    " << matched << "/" << checked << " instances decode to their annotation\n";
  return checked > 0 && matched == checked;
}

// ---------------------------------------------------------------- 8 ---

bool criterion_8_split_arithmetic(const Context& ctx) {
  std::vector<TrainingInstance> instances(1758);
  const auto split = split_dataset(std::move(instances), 0.9, 1208);
  const bool arithmetic_ok = split.train.size() == 1582 && split.test.size() == 176;

  const fs::path corpus = ctx.workdir / "c5" / "corpus";
  if (!fs::exists(corpus / "corpus.txt")) return false;
  bool law_ok = true;
  for (const auto& doc : load_standoff_dir(corpus)) {
    std::size_t numerals = 0;
    for (const auto& e : doc.entities) numerals += e.kind == EntityKind::Num;
    law_ok = law_ok && make_instances(doc).size() == numerals;
  }
  std::cout << "    1758 -> " << split.train.size() << "/" << split.test.size()
            << ", one instance per numeral: " << (law_ok ? "yes" : "no") << "\n";
  return arithmetic_ok && law_ok;
}

// ---------------------------------------------------------------- 9 ---

bool criterion_9_determinism(const Context& ctx) {
  for (const char* run : {"a", "b"}) {
    const fs::path dir = ctx.workdir / "c9" / run;
    fs::create_directories(dir);
    if (run_cli(ctx, "synth --out " + (dir / "corpus").string() + " --sentences 100 --seed 1209",
                dir / "synth.log") != 0)
      return false;
    if (run_cli(ctx,
                "build-dataset --input " + (dir / "corpus").string() + " --out " +
                    (dir / "ds").string() + " --seed 1209",
                dir / "build.log") != 0)
      return false;
    if (run_cli(ctx,
                "train --dataset " + (dir / "ds").string() + " --out " + (dir / "run").string() +
                    " --seed 1209 --epochs 3 --hidden 32 --embed 32 --no-eval-val",
                dir / "train.log") != 0)
      return false;
    if (run_cli(ctx,
                "eval --checkpoint " + (dir / "run" / "checkpoints" / "model.ckpt").string() +
                    " --instances " + (dir / "ds" / "instances" / "test.jsonl").string() +
                    " --vocab " + (dir / "ds" / "vocab" / "vocab.txt").string() + " --out " +
                    (dir / "report.json").string(),
                dir / "eval.log") != 0)
      return false;
  }

  const fs::path a = ctx.workdir / "c9" / "a", b = ctx.workdir / "c9" / "b";
  const bool corpus_ok = files_identical(a / "corpus" / "corpus.txt", b / "corpus" / "corpus.txt") &&
                         files_identical(a / "corpus" / "corpus.ann", b / "corpus" / "corpus.ann");
  const bool dataset_ok =
      files_identical(a / "ds" / "vocab" / "vocab.txt", b / "ds" / "vocab" / "vocab.txt") &&
      files_identical(a / "ds" / "instances" / "train.jsonl", b / "ds" / "instances" / "train.jsonl") &&
      files_identical(a / "ds" / "instances" / "test.jsonl", b / "ds" / "instances" / "test.jsonl");
  const bool model_ok = files_identical(a / "run" / "checkpoints" / "model.ckpt",
                                        b / "run" / "checkpoints" / "model.ckpt");
  const bool report_ok = files_identical(a / "report.json", b / "report.json");
  std::cout << "    corpus " << corpus_ok << ", dataset " << dataset_ok << ", checkpoint "
            << model_ok << ", report " << report_ok << "\n";
  return corpus_ok && dataset_ok && model_ok && report_ok;
}

// --------------------------------------------------------------- 10 ---

bool criterion_10_checkpoint_round_trip(const Context& ctx) {
  const fs::path dir = ctx.workdir / "c10";
  fs::create_directories(dir);

  ModelConfig cfg;
  cfg.seq_len = 50;
  cfg.embed_dim = 32;
  cfg.hidden_dim = 16;
  cfg.vocab_size = 64;
  auto model = init_model<float>(cfg, 1210);
  save_checkpoint(model, dir / "model.ckpt", 0xfeedULL);

  auto back = load_checkpoint_as<float>(dir / "model.ckpt", 0xfeedULL);
  bool bits_ok = back.config == model.config;
  auto refs_a = param_refs(model.params);
  auto refs_b = param_refs(back.params);
  for (std::size_t i = 0; i < refs_a.size(); ++i) bits_ok = bits_ok && *refs_a[i].mat == *refs_b[i].mat;

  bool reject_ok = false;
  try {
    load_checkpoint(dir / "model.ckpt", 0xbeefULL);
  } catch (const ConfigMismatch&) {
    reject_ok = true;
  }

  bool truncate_ok = false;
  {
    const auto bytes = read_file(dir / "model.ckpt");
    std::ofstream clipped(dir / "clipped.ckpt", std::ios::binary);
    clipped.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
  }
  try {
    load_checkpoint(dir / "clipped.ckpt", std::nullopt);
  } catch (const CorruptCheckpoint&) {
    truncate_ok = true;
  }

  std::cout << "    bit-exact " << bits_ok << ", hash reject " << reject_ok << ", truncate reject "
            << truncate_ok << "\n";
  return bits_ok && reject_ok && truncate_ok;
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  for (int i = 1; i < argc - 1; ++i) {
    const std::string arg = argv[i];
    if (arg == "--cli") ctx.cli = argv[++i];
    if (arg == "--workdir") ctx.workdir = argv[++i];
  }
  fs::remove_all(ctx.workdir);
  fs::create_directories(ctx.workdir);

  const std::vector<std::pair<std::string, std::function<bool(const Context&)>>> criteria = {
      {"dice oracle equivalence (1000 pairs, <1e-12)", criterion_1_dice_oracle},
      {"dice fixed points", criterion_2_dice_fixed_points},
      {"gradient correctness (20 seeds, <1e-4)", criterion_3_gradient_check},
      {"overfit capacity (16 instances, dice >= 0.99)", criterion_4_overfit},
      {"end-to-end synthetic run (test dice >= 0.80)", criterion_5_end_to_end},
      {"baseline separation (accuracy >= 0.85, dice < 0.5)", criterion_6_baseline_separation},
      {"round-trip integrity (labels decode to annotation)", criterion_7_round_trip},
      {"split arithmetic (1758 -> 1582/176)", criterion_8_split_arithmetic},
      {"determinism (bit-identical pipeline runs)", criterion_9_determinism},
      {"checkpoint round-trip and rejection", criterion_10_checkpoint_round_trip},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    bool ok = false;
    std::string error;
    try {
      ok = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      error = e.what();
    }
    std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << i + 1 << ": " << criteria[i].first;
    if (!error.empty()) std::cout << " (" << error << ")";
    std::cout << "\n";
    failures += !ok;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << "\n";
  return failures;
}
