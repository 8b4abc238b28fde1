#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "numex/errors.hpp"
#include "numex/tagger.hpp"

using namespace numex;

namespace {

ModelConfig tiny_config(int vocab = 30) {
  ModelConfig c;
  c.seq_len = 12;
  c.embed_dim = 8;
  c.hidden_dim = 6;
  c.vocab_size = vocab;
  c.dropout_rate = 0.5;
  return c;
}

Batch random_batch(const ModelConfig& cfg, int batch, Rng& rng) {
  Batch b;
  b.indices.resize(batch, cfg.seq_len);
  b.labels.resize(batch, cfg.seq_len);
  for (int i = 0; i < batch; ++i)
    for (int t = 0; t < cfg.seq_len; ++t) {
      b.indices(i, t) = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size)));
      b.labels(i, t) = static_cast<int>(rng.below(3));
    }
  return b;
}

// central-difference loss gradients, replaying the recorded dropout mask
template <class S>
std::map<std::string, MatX<double>> finite_difference_grads(TaggerModel<S>& model,
                                                            const Batch& batch,
                                                            const std::vector<MatX<S>>& mask,
                                                            double step) {
  std::map<std::string, MatX<double>> out;
  for (auto& ref : param_refs(model.params)) {
    MatX<double> g(ref.mat->rows(), ref.mat->cols());
    for (Eigen::Index r = 0; r < ref.mat->rows(); ++r) {
      for (Eigen::Index c = 0; c < ref.mat->cols(); ++c) {
        const S saved = (*ref.mat)(r, c);
        (*ref.mat)(r, c) = saved + static_cast<S>(step);
        const double up = batch_loss(model, forward(model, batch, true, nullptr, &mask), batch.labels);
        (*ref.mat)(r, c) = saved - static_cast<S>(step);
        const double down =
            batch_loss(model, forward(model, batch, true, nullptr, &mask), batch.labels);
        (*ref.mat)(r, c) = saved;
        g(r, c) = (up - down) / (2.0 * step);
      }
    }
    out.emplace(ref.name, std::move(g));
  }
  return out;
}

std::string group_of(const std::string& name) {
  if (name == "embedding") return "embedding";
  if (name.starts_with("dense")) return "dense";
  return name.substr(0, name.find_last_of('.'));  // layerN.dir
}

// synthetic dataset: label follows trivially from the token index pattern
DatasetSplit pattern_split(const ModelConfig& cfg, int n, std::uint64_t seed) {
  Rng rng(seed);
  DatasetSplit split;
  for (int k = 0; k < n; ++k) {
    TrainingInstance inst;
    inst.meta.doc_id = "synthetic#" + std::to_string(k);
    inst.indices.resize(static_cast<std::size_t>(cfg.seq_len));
    inst.labels.resize(static_cast<std::size_t>(cfg.seq_len));
    for (int t = 0; t < cfg.seq_len; ++t) {
      const int idx = 15 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size) - 15));
      inst.indices[static_cast<std::size_t>(t)] = idx;
      inst.labels[static_cast<std::size_t>(t)] = idx % 3;
    }
    split.train.push_back(std::move(inst));
  }
  return split;
}

}  // namespace

TEST_SUITE_BEGIN("tagger");

TEST_CASE("gru cell recurrence matches the hand-evaluated convention") {
  // all-zero weights and biases: z = 0.5, candidate = 0, h' = 0.5 * h
  GruDirParams<double> p;
  p.W_z = p.W_r = p.W_h = MatX<double>::Zero(3, 2);
  p.U_z = p.U_r = p.U_h = MatX<double>::Zero(2, 2);
  p.b_z = p.b_r = p.b_h = MatX<double>::Zero(1, 2);

  MatX<double> x = MatX<double>::Zero(1, 3);
  MatX<double> h_prev(1, 2);
  h_prev << 0.4, -0.2;

  const auto step = gru_cell(p, x, h_prev);
  CHECK(step.z(0, 0) == 0.5);
  CHECK(step.c(0, 0) == 0.0);
  CHECK(step.h(0, 0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(step.h(0, 1) == doctest::Approx(-0.1).epsilon(1e-15));
}

TEST_CASE("all-pad input through a zero model gives uniform rows") {
  auto cfg = tiny_config();
  TaggerModel<double> model;
  model.config = cfg;
  model.params = zero_params<double>(cfg);

  Batch batch;
  batch.indices = Eigen::MatrixXi::Zero(2, cfg.seq_len);
  batch.labels = Eigen::MatrixXi::Zero(2, cfg.seq_len);
  const auto cache = forward(model, batch, false, nullptr);
  for (const auto& probs : cache.probs)
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
      for (int c = 0; c < 3; ++c) CHECK(probs(i, c) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one for 1000 random inputs") {
  const auto cfg = tiny_config();
  const auto model = init_model<double>(cfg, 2);
  Rng rng(3);
  for (int k = 0; k < 1000 / 25; ++k) {
    const auto batch = random_batch(cfg, 25, rng);
    const auto cache = forward(model, batch, false, nullptr);
    for (const auto& probs : cache.probs)
      for (Eigen::Index i = 0; i < probs.rows(); ++i)
        CHECK(std::abs(probs.row(i).sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("forward rejects out-of-vocabulary indices") {
  const auto cfg = tiny_config();
  const auto model = init_model<double>(cfg, 2);
  Batch batch;
  batch.indices = Eigen::MatrixXi::Zero(1, cfg.seq_len);
  batch.labels = Eigen::MatrixXi::Zero(1, cfg.seq_len);
  batch.indices(0, 3) = cfg.vocab_size;
  CHECK_THROWS_AS(forward(model, batch, false, nullptr), IndexOutOfVocab);
}

TEST_CASE("loss has the analytic fixed points") {
  std::vector<int> labels{0, 1, 2, 1};
  CHECK(sequence_loss(one_hot(labels), labels) == doctest::Approx(0.0).epsilon(1e-9));

  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(4, 3, 1.0 / 3.0);
  CHECK(sequence_loss(uniform, labels) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  Eigen::MatrixXd half(1, 3);
  half << 0.5, 0.3, 0.2;
  CHECK(sequence_loss(half, {0}) == doctest::Approx(0.6931471805599453).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central differences") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    auto cfg = tiny_config();
    cfg.mask_padding_loss = seed == 4;  // the padding-masked loss variant
    auto model = init_model<double>(cfg, seed);
    Rng rng(seed * 100 + 9);
    auto batch = random_batch(model.config, 2, rng);
    if (cfg.mask_padding_loss)
      for (int t = model.config.seq_len - 3; t < model.config.seq_len; ++t)
        batch.indices(1, t) = Vocabulary::kPadIndex;  // give one row real padding

    Rng dropout_rng(seed * 100 + 55);
    const auto cache = forward(model, batch, true, &dropout_rng);
    REQUIRE(!cache.dropout_mask.empty());
    auto analytic = backward(model, cache, batch.labels);
    const auto fd = finite_difference_grads(model, batch, cache.dropout_mask, 1e-5);

    std::map<std::string, double> num, den_a, den_f;
    for (auto& ref : param_refs(analytic)) {
      const auto& g_fd = fd.at(ref.name);
      const std::string group = group_of(ref.name);
      for (Eigen::Index r = 0; r < ref.mat->rows(); ++r)
        for (Eigen::Index c = 0; c < ref.mat->cols(); ++c) {
          const double d = (*ref.mat)(r, c) - g_fd(r, c);
          num[group] += d * d;
          den_a[group] += (*ref.mat)(r, c) * (*ref.mat)(r, c);
          den_f[group] += g_fd(r, c) * g_fd(r, c);
        }
    }
    for (const auto& [group, nq] : num) {
      const double rel =
          std::sqrt(nq) / std::max(1e-30, std::max(std::sqrt(den_a[group]), std::sqrt(den_f[group])));
      INFO("group " << group << " seed " << seed);
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("unused embedding rows get exactly zero gradient") {
  auto model = init_model<double>(tiny_config(), 4);
  Batch batch;
  batch.indices = Eigen::MatrixXi::Constant(1, model.config.seq_len, 5);
  batch.labels = Eigen::MatrixXi::Zero(1, model.config.seq_len);
  Rng rng(1);
  const auto cache = forward(model, batch, true, &rng);
  const auto grads = backward(model, cache, batch.labels);
  for (int row = 0; row < model.config.vocab_size; ++row) {
    if (row == 5) continue;
    CHECK(grads.embedding.row(row).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(grads.embedding.row(5).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("dense bias gradient is the mean softmax residual") {
  auto model = init_model<double>(tiny_config(), 6);
  Rng rng(8);
  const auto batch = random_batch(model.config, 1, rng);
  Rng dropout_rng(9);
  const auto cache = forward(model, batch, true, &dropout_rng);
  const auto grads = backward(model, cache, batch.labels);

  Eigen::RowVector3d expected = Eigen::RowVector3d::Zero();
  for (int t = 0; t < model.config.seq_len; ++t) {
    for (int c = 0; c < 3; ++c) {
      const double onehot = batch.labels(0, t) == c ? 1.0 : 0.0;
      expected(c) += (cache.probs[static_cast<std::size_t>(t)](0, c) - onehot) /
                     static_cast<double>(model.config.seq_len);
    }
  }
  for (int c = 0; c < 3; ++c)
    CHECK(grads.dense_b(0, c) == doctest::Approx(expected(c)).epsilon(1e-12));
}

TEST_CASE("backward rejects a cache from an older model revision") {
  auto model = init_model<double>(tiny_config(), 5);
  Rng rng(2);
  const auto batch = random_batch(model.config, 2, rng);
  Rng dropout_rng(3);
  const auto cache = forward(model, batch, true, &dropout_rng);
  auto grads = backward(model, cache, batch.labels);

  auto adam = AdamState<double>::for_config(model.config);
  adam_step(model, grads, adam);
  CHECK_THROWS_AS(backward(model, cache, batch.labels), StaleCache);
}

TEST_CASE("adam first step moves by almost exactly -lr") {
  const auto cfg = tiny_config(4);
  auto params = zero_params<double>(cfg);
  auto grads = zero_params<double>(cfg);
  for (auto& ref : param_refs(grads)) ref.mat->setConstant(2.0);
  auto state = AdamState<double>::for_config(cfg);

  adam_step(params, grads, state);
  CHECK(state.t == 1);
  // bias-corrected m = g, v = g^2 -> delta = -lr * g / (|g| + eps)
  CHECK(params.embedding(0, 0) == doctest::Approx(-0.003).epsilon(1e-8));
  CHECK(std::abs(params.embedding(0, 0) + 0.003) < 1e-9);
}

TEST_CASE("adam with zero gradients leaves parameters, advances time") {
  const auto cfg = tiny_config(4);
  auto model = init_model<double>(cfg, 3);
  const auto before = model.params.dense_w;
  auto state = AdamState<double>::for_config(cfg);
  adam_step(model.params, zero_params<double>(cfg), state);
  adam_step(model.params, zero_params<double>(cfg), state);
  CHECK(state.t == 2);
  CHECK(model.params.dense_w == before);
}

TEST_CASE("equal gradients produce equal updates") {
  const auto cfg = tiny_config(4);
  auto params = zero_params<double>(cfg);
  params.dense_w.setConstant(1.0);
  auto grads = zero_params<double>(cfg);
  grads.dense_w.setConstant(0.7);
  auto state = AdamState<double>::for_config(cfg);
  adam_step(params, grads, state);
  CHECK(params.dense_w(0, 0) == params.dense_w(1, 2));
}

TEST_CASE("adam rejects mismatched gradient shapes") {
  const auto cfg = tiny_config(4);
  auto params = zero_params<double>(cfg);
  auto grads = zero_params<double>(cfg);
  grads.dense_w = MatX<double>::Zero(1, 1);
  auto state = AdamState<double>::for_config(cfg);
  CHECK_THROWS_AS(adam_step(params, grads, state), ShapeMismatch);
}

TEST_CASE("swapping directions on a reversed input mirrors the outputs") {
  const auto cfg = tiny_config();
  const auto model = init_model<double>(cfg, 12);
  const int T = 7, B = 2, D = cfg.embed_dim, H = cfg.hidden_dim;

  Rng rng(21);
  std::vector<MatX<double>> xs(T, MatX<double>(B, D));
  for (auto& x : xs)
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < D; ++j) x(i, j) = rng.uniform(-1.0, 1.0);

  std::vector<MatX<double>> reversed(xs.rbegin(), xs.rend());
  GruLayerParams<double> swapped{model.params.layer1.bwd, model.params.layer1.fwd};

  const auto out = bidirectional_outputs(model.params.layer1, xs);
  const auto mirrored = bidirectional_outputs(swapped, reversed);

  for (int t = 0; t < T; ++t) {
    // forward half of the mirrored run is the backward half, reversed
    CHECK(mirrored[static_cast<std::size_t>(t)].leftCols(H) ==
          out[static_cast<std::size_t>(T - 1 - t)].rightCols(H));
    CHECK(mirrored[static_cast<std::size_t>(t)].rightCols(H) ==
          out[static_cast<std::size_t>(T - 1 - t)].leftCols(H));
  }
}

TEST_CASE("inference is a pure function of its input") {
  const auto cfg = tiny_config();
  const auto model = init_model<float>(cfg, 31);
  std::vector<int> indices(static_cast<std::size_t>(cfg.seq_len));
  std::iota(indices.begin(), indices.end(), 1);
  const auto a = infer(model, indices);
  const auto b = infer(model, indices);
  CHECK(a == b);
}

TEST_CASE("training is bitwise deterministic under a fixed seed") {
  auto cfg = tiny_config();
  auto split = pattern_split(cfg, 24, 5);

  TrainOptions options;
  options.epochs = 3;
  options.batch_size = 8;
  options.seed = 17;
  options.eval_val = false;

  auto model_a = init_model<double>(cfg, 40);
  auto model_b = init_model<double>(cfg, 40);
  const auto hist_a = train(model_a, split, options);
  const auto hist_b = train(model_b, split, options);

  REQUIRE(hist_a.size() == 3);
  for (std::size_t e = 0; e < hist_a.size(); ++e)
    CHECK(hist_a[e].train_loss == hist_b[e].train_loss);
  CHECK(model_a.params.dense_w == model_b.params.dense_w);
  CHECK(model_a.params.embedding == model_b.params.embedding);

  options.seed = 18;
  auto model_c = init_model<double>(cfg, 40);
  const auto hist_c = train(model_c, split, options);
  CHECK(hist_a[2].train_loss != hist_c[2].train_loss);
}

TEST_CASE("training reduces the loss on a learnable pattern") {
  auto cfg = tiny_config();
  auto split = pattern_split(cfg, 32, 6);

  TrainOptions options;
  options.epochs = 8;
  options.batch_size = 8;
  options.seed = 3;
  options.eval_val = false;

  auto model = init_model<double>(cfg, 2);
  const auto history = train(model, split, options);
  CHECK(history.back().train_loss < history.front().train_loss);
}

TEST_CASE("train rejects an empty split") {
  auto model = init_model<double>(tiny_config(), 2);
  DatasetSplit split;
  CHECK_THROWS_AS(train(model, split, TrainOptions{}), EmptySplit);
}

TEST_CASE("parameter count matches the closed form") {
  ModelConfig cfg;
  cfg.seq_len = 50;
  cfg.embed_dim = 128;
  cfg.hidden_dim = 128;
  cfg.vocab_size = 120;
  const auto model = init_model<float>(cfg, 0);
  std::int64_t total = 0;
  for (auto& ref : param_refs(const_cast<ParamSet<float>&>(model.params))) total += ref.mat->size();
  CHECK(total == parameter_count(cfg));
  // embedding + 2 bi-GRU layers + dense, written out
  const std::int64_t expected = 120 * 128 + 2 * (3 * 128 * 128 + 3 * 128 * 128 + 3 * 128) +
                                2 * (3 * 256 * 128 + 3 * 128 * 128 + 3 * 128) + 256 * 3 + 3;
  CHECK(total == expected);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "numex_tagger_tests";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ckpt";

  const auto cfg = tiny_config();
  auto model = init_model<double>(cfg, 77);
  save_checkpoint(model, path, 0xabcdef12u);

  auto back = load_checkpoint_as<double>(path, 0xabcdef12u);
  CHECK(back.config == model.config);
  auto refs_a = param_refs(model.params);
  auto refs_b = param_refs(back.params);
  for (std::size_t i = 0; i < refs_a.size(); ++i) CHECK(*refs_a[i].mat == *refs_b[i].mat);

  SUBCASE("vocabulary hash mismatches are rejected") {
    CHECK_THROWS_AS(load_checkpoint(path, 0x1111u), ConfigMismatch);
  }
  SUBCASE("precision mismatches are rejected") {
    CHECK_THROWS_AS(load_checkpoint_as<float>(path, 0xabcdef12u), ConfigMismatch);
  }
  SUBCASE("truncated checkpoints are rejected") {
    const auto clipped = dir / "clipped.ckpt";
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(clipped, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(clipped, std::nullopt), CorruptCheckpoint);
  }
  SUBCASE("garbage files are rejected") {
    const auto garbage = dir / "garbage.ckpt";
    std::ofstream(garbage, std::ios::binary) << "not a checkpoint at all";
    CHECK_THROWS_AS(load_checkpoint(garbage, std::nullopt), CorruptCheckpoint);
  }
  SUBCASE("float checkpoints round-trip too") {
    auto fmodel = init_model<float>(cfg, 78);
    const auto fpath = dir / "model32.ckpt";
    save_checkpoint(fmodel, fpath, 5u);
    auto fback = load_checkpoint_as<float>(fpath, 5u);
    auto fa = param_refs(fmodel.params);
    auto fb = param_refs(fback.params);
    for (std::size_t i = 0; i < fa.size(); ++i) CHECK(*fa[i].mat == *fb[i].mat);
  }
}

TEST_SUITE_END();
