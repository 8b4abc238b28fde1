#include "numex/tagger.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace numex {

namespace {

constexpr double kLogClamp = 1e-12;

template <class S>
MatX<S> sigmoid(const MatX<S>& x) {
  return (S(1) + (-x.array()).exp()).inverse().matrix();
}

template <class S>
void dir_refs(GruDirParams<S>& d, const std::string& prefix, std::vector<ParamRef<S>>& out) {
  out.push_back({prefix + ".W_z", &d.W_z});
  out.push_back({prefix + ".W_r", &d.W_r});
  out.push_back({prefix + ".W_h", &d.W_h});
  out.push_back({prefix + ".U_z", &d.U_z});
  out.push_back({prefix + ".U_r", &d.U_r});
  out.push_back({prefix + ".U_h", &d.U_h});
  out.push_back({prefix + ".b_z", &d.b_z});
  out.push_back({prefix + ".b_r", &d.b_r});
  out.push_back({prefix + ".b_h", &d.b_h});
}

template <class S>
void fill_uniform(MatX<S>& m, double lo, double hi, Rng& rng) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<S>(rng.uniform(lo, hi));
}

template <class S>
void glorot_init(MatX<S>& m, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  fill_uniform(m, -s, s, rng);
}

template <class S>
GruDirParams<S> zero_dir(int input_dim, int hidden) {
  GruDirParams<S> d;
  d.W_z = MatX<S>::Zero(input_dim, hidden);
  d.W_r = MatX<S>::Zero(input_dim, hidden);
  d.W_h = MatX<S>::Zero(input_dim, hidden);
  d.U_z = MatX<S>::Zero(hidden, hidden);
  d.U_r = MatX<S>::Zero(hidden, hidden);
  d.U_h = MatX<S>::Zero(hidden, hidden);
  d.b_z = MatX<S>::Zero(1, hidden);
  d.b_r = MatX<S>::Zero(1, hidden);
  d.b_h = MatX<S>::Zero(1, hidden);
  return d;
}

// One GRU direction over the whole batch. `reverse` processes t = T-1..0;
// outputs land in out[t].middleCols(col_offset, H).
template <class S>
void gru_dir_forward(const GruDirParams<S>& p, const std::vector<MatX<S>>& xs, bool reverse,
                     GruDirCache<S>& cache, std::vector<MatX<S>>& out, int col_offset) {
  const int T = static_cast<int>(xs.size());
  const auto B = xs[0].rows();
  const auto H = p.U_z.rows();

  cache.h.assign(static_cast<std::size_t>(T) + 1, MatX<S>());
  cache.z.assign(static_cast<std::size_t>(T), MatX<S>());
  cache.r.assign(static_cast<std::size_t>(T), MatX<S>());
  cache.c.assign(static_cast<std::size_t>(T), MatX<S>());
  cache.h[0] = MatX<S>::Zero(B, H);

  for (int k = 0; k < T; ++k) {
    const int t = reverse ? T - 1 - k : k;
    GruStep<S> step =
        gru_cell(p, xs[static_cast<std::size_t>(t)], cache.h[static_cast<std::size_t>(k)]);
    out[static_cast<std::size_t>(t)].middleCols(col_offset, H) = step.h;
    cache.h[static_cast<std::size_t>(k) + 1] = std::move(step.h);
    cache.z[static_cast<std::size_t>(k)] = std::move(step.z);
    cache.r[static_cast<std::size_t>(k)] = std::move(step.r);
    cache.c[static_cast<std::size_t>(k)] = std::move(step.c);
  }
}

template <class S>
void gru_dir_backward(const GruDirParams<S>& p, const GruDirCache<S>& cache,
                      const std::vector<MatX<S>>& xs, bool reverse, int col_offset,
                      const std::vector<MatX<S>>& d_out, GruDirParams<S>& grad,
                      std::vector<MatX<S>>& d_xs) {
  const int T = static_cast<int>(xs.size());
  const auto B = xs[0].rows();
  const auto H = p.U_z.rows();

  MatX<S> d_h_carry = MatX<S>::Zero(B, H);
  for (int k = T - 1; k >= 0; --k) {
    const int t = reverse ? T - 1 - k : k;
    const MatX<S>& x = xs[static_cast<std::size_t>(t)];
    const MatX<S>& h_prev = cache.h[static_cast<std::size_t>(k)];
    const MatX<S>& z = cache.z[static_cast<std::size_t>(k)];
    const MatX<S>& r = cache.r[static_cast<std::size_t>(k)];
    const MatX<S>& c = cache.c[static_cast<std::size_t>(k)];

    MatX<S> d_h = d_out[static_cast<std::size_t>(t)].middleCols(col_offset, H) + d_h_carry;

    // h = (1-z) .* h_prev + z .* c
    MatX<S> d_a_z =
        (d_h.array() * (c.array() - h_prev.array()) * z.array() * (S(1) - z.array())).matrix();
    MatX<S> d_a_c = (d_h.array() * z.array() * (S(1) - c.array() * c.array())).matrix();

    MatX<S> d_h_prev = (d_h.array() * (S(1) - z.array())).matrix();
    MatX<S> d_rh(B, H);
    d_rh.noalias() = d_a_c * p.U_h.transpose();
    MatX<S> d_a_r = (d_rh.array() * h_prev.array() * r.array() * (S(1) - r.array())).matrix();
    d_h_prev.array() += d_rh.array() * r.array();
    d_h_prev.noalias() += d_a_z * p.U_z.transpose();
    d_h_prev.noalias() += d_a_r * p.U_r.transpose();

    MatX<S>& dx = d_xs[static_cast<std::size_t>(t)];
    dx.noalias() += d_a_z * p.W_z.transpose();
    dx.noalias() += d_a_r * p.W_r.transpose();
    dx.noalias() += d_a_c * p.W_h.transpose();

    grad.W_z.noalias() += x.transpose() * d_a_z;
    grad.W_r.noalias() += x.transpose() * d_a_r;
    grad.W_h.noalias() += x.transpose() * d_a_c;
    grad.U_z.noalias() += h_prev.transpose() * d_a_z;
    grad.U_r.noalias() += h_prev.transpose() * d_a_r;
    grad.U_h.noalias() += (r.array() * h_prev.array()).matrix().transpose() * d_a_c;
    grad.b_z.row(0) += d_a_z.colwise().sum();
    grad.b_r.row(0) += d_a_r.colwise().sum();
    grad.b_h.row(0) += d_a_c.colwise().sum();

    d_h_carry = std::move(d_h_prev);
  }
}

// loss positions for one batch row; the whole row when padding counts
inline int counted_positions(const ModelConfig& cfg, const Eigen::MatrixXi& indices,
                             Eigen::Index row) {
  if (!cfg.mask_padding_loss) return static_cast<int>(indices.cols());
  int n = 0;
  for (Eigen::Index t = 0; t < indices.cols(); ++t)
    if (indices(row, t) != Vocabulary::kPadIndex) ++n;
  return n;
}

}  // namespace

template <class S>
GruStep<S> gru_cell(const GruDirParams<S>& p, const MatX<S>& x, const MatX<S>& h_prev) {
  const auto B = x.rows();
  const auto H = p.U_z.rows();
  MatX<S> a_z(B, H), a_r(B, H), a_c(B, H);
  a_z.noalias() = x * p.W_z;
  a_z.noalias() += h_prev * p.U_z;
  a_z.rowwise() += p.b_z.row(0);
  a_r.noalias() = x * p.W_r;
  a_r.noalias() += h_prev * p.U_r;
  a_r.rowwise() += p.b_r.row(0);

  GruStep<S> step;
  step.z = sigmoid(a_z);
  step.r = sigmoid(a_r);

  a_c.noalias() = x * p.W_h;
  a_c.noalias() += (step.r.array() * h_prev.array()).matrix() * p.U_h;
  a_c.rowwise() += p.b_h.row(0);
  step.c = a_c.array().tanh().matrix();
  step.h = ((S(1) - step.z.array()) * h_prev.array() + step.z.array() * step.c.array()).matrix();
  return step;
}

template <class S>
std::vector<MatX<S>> bidirectional_outputs(const GruLayerParams<S>& layer,
                                           const std::vector<MatX<S>>& xs) {
  const auto B = xs.at(0).rows();
  const auto H = layer.fwd.U_z.rows();
  std::vector<MatX<S>> out(xs.size(), MatX<S>(B, 2 * H));
  GruDirCache<S> scratch;
  gru_dir_forward(layer.fwd, xs, false, scratch, out, 0);
  gru_dir_forward(layer.bwd, xs, true, scratch, out, static_cast<int>(H));
  return out;
}

std::int64_t parameter_count(const ModelConfig& c) {
  const std::int64_t d = c.embed_dim, h = c.hidden_dim, v = c.vocab_size, k = c.num_classes;
  const std::int64_t gru1 = 2 * (3 * d * h + 3 * h * h + 3 * h);
  const std::int64_t gru2 = 2 * (3 * (2 * h) * h + 3 * h * h + 3 * h);
  return v * d + gru1 + gru2 + 2 * h * k + k;
}

template <class S>
std::vector<ParamRef<S>> param_refs(ParamSet<S>& p) {
  std::vector<ParamRef<S>> out;
  out.push_back({"embedding", &p.embedding});
  dir_refs(p.layer1.fwd, "layer1.fwd", out);
  dir_refs(p.layer1.bwd, "layer1.bwd", out);
  dir_refs(p.layer2.fwd, "layer2.fwd", out);
  dir_refs(p.layer2.bwd, "layer2.bwd", out);
  out.push_back({"dense.W", &p.dense_w});
  out.push_back({"dense.b", &p.dense_b});
  return out;
}

template <class S>
ParamSet<S> zero_params(const ModelConfig& c) {
  ParamSet<S> p;
  p.embedding = MatX<S>::Zero(c.vocab_size, c.embed_dim);
  p.layer1 = {zero_dir<S>(c.embed_dim, c.hidden_dim), zero_dir<S>(c.embed_dim, c.hidden_dim)};
  p.layer2 = {zero_dir<S>(2 * c.hidden_dim, c.hidden_dim),
              zero_dir<S>(2 * c.hidden_dim, c.hidden_dim)};
  p.dense_w = MatX<S>::Zero(2 * c.hidden_dim, c.num_classes);
  p.dense_b = MatX<S>::Zero(1, c.num_classes);
  return p;
}

template <class S>
TaggerModel<S> init_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.vocab_size < 1 || config.seq_len < 1 || config.embed_dim < 1 ||
      config.hidden_dim < 1 || config.num_classes < 1)
    throw ShapeMismatch("model config dimensions must be >= 1");

  TaggerModel<S> model;
  model.config = config;
  model.params = zero_params<S>(config);

  Rng rng(mix_seed(seed, 0x1417));
  fill_uniform(model.params.embedding, -0.05, 0.05, rng);
  for (auto& ref : param_refs(model.params)) {
    if (ref.name == "embedding" || ref.name.ends_with(".b_z") || ref.name.ends_with(".b_r") ||
        ref.name.ends_with(".b_h") || ref.name == "dense.b")
      continue;  // biases stay zero
    glorot_init(*ref.mat, rng);
  }

  std::int64_t total = 0;
  for (auto& ref : param_refs(model.params)) total += ref.mat->size();
  if (total != parameter_count(config))
    throw ShapeMismatch("parameter count does not match the closed form");
  return model;
}

Batch make_batch(const std::vector<TrainingInstance>& instances,
                 const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                 int seq_len) {
  const auto b = static_cast<Eigen::Index>(end - begin);
  Batch batch;
  batch.indices.resize(b, seq_len);
  batch.labels.resize(b, seq_len);
  for (std::size_t i = begin; i < end; ++i) {
    const TrainingInstance& inst = instances[order[i]];
    if (static_cast<int>(inst.indices.size()) != seq_len ||
        static_cast<int>(inst.labels.size()) != seq_len)
      throw ShapeMismatch("instance " + inst.meta.doc_id + " is not encoded to length " +
                          std::to_string(seq_len));
    for (int t = 0; t < seq_len; ++t) {
      batch.indices(static_cast<Eigen::Index>(i - begin), t) =
          inst.indices[static_cast<std::size_t>(t)];
      batch.labels(static_cast<Eigen::Index>(i - begin), t) =
          inst.labels[static_cast<std::size_t>(t)];
    }
  }
  return batch;
}

template <class S>
ForwardCache<S> forward(const TaggerModel<S>& model, const Batch& batch, bool train_mode,
                        Rng* rng, const std::vector<MatX<S>>* fixed_mask) {
  const ModelConfig& cfg = model.config;
  const auto B = batch.indices.rows();
  const int T = static_cast<int>(batch.indices.cols());
  if (T != cfg.seq_len) throw ShapeMismatch("batch length != config.seq_len");

  for (Eigen::Index i = 0; i < B; ++i)
    for (int t = 0; t < T; ++t) {
      const int idx = batch.indices(i, t);
      if (idx < 0 || idx >= cfg.vocab_size)
        throw IndexOutOfVocab("index " + std::to_string(idx) + " outside vocabulary of size " +
                              std::to_string(cfg.vocab_size));
    }

  ForwardCache<S> cache;
  cache.indices = batch.indices;
  cache.train_mode = train_mode;
  cache.model_revision = model.revision;

  cache.embedded.assign(static_cast<std::size_t>(T), MatX<S>(B, cfg.embed_dim));
  for (int t = 0; t < T; ++t)
    for (Eigen::Index i = 0; i < B; ++i)
      cache.embedded[static_cast<std::size_t>(t)].row(i) =
          model.params.embedding.row(batch.indices(i, t));

  const auto H2 = 2 * cfg.hidden_dim;
  cache.l1.out.assign(static_cast<std::size_t>(T), MatX<S>(B, H2));
  gru_dir_forward(model.params.layer1.fwd, cache.embedded, false, cache.l1.fwd, cache.l1.out, 0);
  gru_dir_forward(model.params.layer1.bwd, cache.embedded, true, cache.l1.bwd, cache.l1.out,
                  cfg.hidden_dim);

  cache.l2.out.assign(static_cast<std::size_t>(T), MatX<S>(B, H2));
  gru_dir_forward(model.params.layer2.fwd, cache.l1.out, false, cache.l2.fwd, cache.l2.out, 0);
  gru_dir_forward(model.params.layer2.bwd, cache.l1.out, true, cache.l2.bwd, cache.l2.out,
                  cfg.hidden_dim);

  const bool apply_dropout = train_mode && (cfg.dropout_rate > 0.0 || fixed_mask != nullptr);
  if (apply_dropout) {
    if (fixed_mask) {
      cache.dropout_mask = *fixed_mask;
    } else {
      if (!rng) throw Error("train-mode forward needs an rng for dropout");
      const double keep = 1.0 - cfg.dropout_rate;
      const S scale = static_cast<S>(1.0 / keep);
      cache.dropout_mask.assign(static_cast<std::size_t>(T), MatX<S>(B, H2));
      for (int t = 0; t < T; ++t)
        for (Eigen::Index i = 0; i < B; ++i)
          for (Eigen::Index j = 0; j < H2; ++j)
            cache.dropout_mask[static_cast<std::size_t>(t)](i, j) =
                rng->uniform() < keep ? scale : S(0);
    }
    cache.dropped.assign(static_cast<std::size_t>(T), MatX<S>());
    for (int t = 0; t < T; ++t)
      cache.dropped[static_cast<std::size_t>(t)] =
          (cache.l2.out[static_cast<std::size_t>(t)].array() *
           cache.dropout_mask[static_cast<std::size_t>(t)].array())
              .matrix();
  } else {
    cache.dropped = cache.l2.out;
  }

  cache.probs.assign(static_cast<std::size_t>(T), MatX<S>(B, cfg.num_classes));
  MatX<S> logits(B, cfg.num_classes);
  for (int t = 0; t < T; ++t) {
    logits.noalias() = cache.dropped[static_cast<std::size_t>(t)] * model.params.dense_w;
    logits.rowwise() += model.params.dense_b.row(0);
    MatX<S>& p = cache.probs[static_cast<std::size_t>(t)];
    for (Eigen::Index i = 0; i < B; ++i) {
      const S max_logit = logits.row(i).maxCoeff();
      S sum = 0;
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        p(i, c) = std::exp(logits(i, c) - max_logit);
        sum += p(i, c);
      }
      p.row(i) /= sum;
    }
  }
  return cache;
}

template <class S>
double batch_loss(const TaggerModel<S>& model, const ForwardCache<S>& cache,
                  const Eigen::MatrixXi& labels) {
  const auto B = cache.indices.rows();
  const int T = static_cast<int>(cache.indices.cols());
  if (labels.rows() != B || labels.cols() != T)
    throw ShapeMismatch("labels shape differs from the forward batch");

  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const int counted = counted_positions(model.config, cache.indices, i);
    if (counted == 0) continue;
    double row_loss = 0.0;
    for (int t = 0; t < T; ++t) {
      if (model.config.mask_padding_loss && cache.indices(i, t) == Vocabulary::kPadIndex) continue;
      const double p =
          static_cast<double>(cache.probs[static_cast<std::size_t>(t)](i, labels(i, t)));
      row_loss -= std::log(std::max(p, kLogClamp));
    }
    total += row_loss / counted;
  }
  return total / static_cast<double>(B);
}

double sequence_loss(const Eigen::MatrixXd& probs, const std::vector<int>& labels) {
  if (probs.rows() != static_cast<Eigen::Index>(labels.size()))
    throw ShapeMismatch("probability rows != label count");
  double loss = 0.0;
  for (Eigen::Index t = 0; t < probs.rows(); ++t)
    loss -= std::log(std::max(probs(t, labels[static_cast<std::size_t>(t)]), kLogClamp));
  return loss / static_cast<double>(probs.rows());
}

template <class S>
ParamSet<S> backward(const TaggerModel<S>& model, const ForwardCache<S>& cache,
                     const Eigen::MatrixXi& labels) {
  if (cache.model_revision != model.revision)
    throw StaleCache("forward cache was taken at model revision " +
                     std::to_string(cache.model_revision) + ", model is now at " +
                     std::to_string(model.revision));
  if (!cache.train_mode && model.config.dropout_rate > 0.0)
    throw StaleCache("backward needs a train-mode forward cache");
  const auto B = cache.indices.rows();
  const int T = static_cast<int>(cache.indices.cols());
  if (labels.rows() != B || labels.cols() != T)
    throw ShapeMismatch("labels shape differs from the forward batch");

  const ModelConfig& cfg = model.config;
  const auto H2 = 2 * cfg.hidden_dim;
  ParamSet<S> grad = zero_params<S>(cfg);

  // softmax + cross-entropy: d_logits = (p - onehot) / (counted * B)
  std::vector<MatX<S>> d_dropped(static_cast<std::size_t>(T), MatX<S>(B, H2));
  MatX<S> d_logits(B, cfg.num_classes);
  std::vector<S> row_scale(static_cast<std::size_t>(B));
  for (Eigen::Index i = 0; i < B; ++i) {
    const int counted = counted_positions(cfg, cache.indices, i);
    row_scale[static_cast<std::size_t>(i)] =
        counted == 0 ? S(0) : S(1) / (static_cast<S>(counted) * static_cast<S>(B));
  }
  for (int t = 0; t < T; ++t) {
    const MatX<S>& p = cache.probs[static_cast<std::size_t>(t)];
    for (Eigen::Index i = 0; i < B; ++i) {
      const bool skip =
          cfg.mask_padding_loss && cache.indices(i, t) == Vocabulary::kPadIndex;
      for (Eigen::Index c = 0; c < cfg.num_classes; ++c) {
        const S onehot = labels(i, t) == static_cast<int>(c) ? S(1) : S(0);
        d_logits(i, c) = skip ? S(0) : (p(i, c) - onehot) * row_scale[static_cast<std::size_t>(i)];
      }
    }
    grad.dense_w.noalias() += cache.dropped[static_cast<std::size_t>(t)].transpose() * d_logits;
    grad.dense_b.row(0) += d_logits.colwise().sum();
    d_dropped[static_cast<std::size_t>(t)].noalias() = d_logits * model.params.dense_w.transpose();
  }

  // dropout
  std::vector<MatX<S>> d_l2_out(static_cast<std::size_t>(T));
  if (!cache.dropout_mask.empty()) {
    for (int t = 0; t < T; ++t)
      d_l2_out[static_cast<std::size_t>(t)] =
          (d_dropped[static_cast<std::size_t>(t)].array() *
           cache.dropout_mask[static_cast<std::size_t>(t)].array())
              .matrix();
  } else {
    d_l2_out = std::move(d_dropped);
  }

  // layer 2
  std::vector<MatX<S>> d_l1_out(static_cast<std::size_t>(T), MatX<S>::Zero(B, H2));
  gru_dir_backward(model.params.layer2.fwd, cache.l2.fwd, cache.l1.out, false, 0, d_l2_out,
                   grad.layer2.fwd, d_l1_out);
  gru_dir_backward(model.params.layer2.bwd, cache.l2.bwd, cache.l1.out, true, cfg.hidden_dim,
                   d_l2_out, grad.layer2.bwd, d_l1_out);

  // layer 1
  std::vector<MatX<S>> d_embedded(static_cast<std::size_t>(T),
                                  MatX<S>::Zero(B, cfg.embed_dim));
  gru_dir_backward(model.params.layer1.fwd, cache.l1.fwd, cache.embedded, false, 0, d_l1_out,
                   grad.layer1.fwd, d_embedded);
  gru_dir_backward(model.params.layer1.bwd, cache.l1.bwd, cache.embedded, true, cfg.hidden_dim,
                   d_l1_out, grad.layer1.bwd, d_embedded);

  // embedding scatter, fixed (t, row) order
  for (int t = 0; t < T; ++t)
    for (Eigen::Index i = 0; i < B; ++i)
      grad.embedding.row(cache.indices(i, t)) += d_embedded[static_cast<std::size_t>(t)].row(i);

  return grad;
}

template <class S>
Eigen::MatrixXd infer(const TaggerModel<S>& model, const std::vector<int>& indices) {
  Batch batch;
  batch.indices.resize(1, static_cast<Eigen::Index>(indices.size()));
  batch.labels = Eigen::MatrixXi::Zero(1, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t t = 0; t < indices.size(); ++t)
    batch.indices(0, static_cast<Eigen::Index>(t)) = indices[t];
  const ForwardCache<S> cache = forward(model, batch, /*train_mode=*/false, nullptr);

  Eigen::MatrixXd probs(static_cast<Eigen::Index>(indices.size()), model.config.num_classes);
  for (std::size_t t = 0; t < indices.size(); ++t)
    for (int c = 0; c < model.config.num_classes; ++c)
      probs(static_cast<Eigen::Index>(t), c) = static_cast<double>(cache.probs[t](0, c));
  return probs;
}

template <class S>
AdamState<S> AdamState<S>::for_config(const ModelConfig& config, double lr) {
  AdamState<S> state;
  state.lr = lr;
  state.m = zero_params<S>(config);
  state.v = zero_params<S>(config);
  return state;
}

template <class S>
void adam_step(ParamSet<S>& params, const ParamSet<S>& grads, AdamState<S>& state) {
  auto p_refs = param_refs(params);
  auto g_refs = param_refs(const_cast<ParamSet<S>&>(grads));
  auto m_refs = param_refs(state.m);
  auto v_refs = param_refs(state.v);

  for (std::size_t k = 0; k < p_refs.size(); ++k) {
    if (g_refs[k].mat->rows() != p_refs[k].mat->rows() ||
        g_refs[k].mat->cols() != p_refs[k].mat->cols())
      throw ShapeMismatch("gradient shape differs from parameter " + p_refs[k].name);
  }

  state.t += 1;
  const S b1 = static_cast<S>(state.beta1);
  const S b2 = static_cast<S>(state.beta2);
  const S lr = static_cast<S>(state.lr);
  const S eps = static_cast<S>(state.epsilon);
  const S m_corr = S(1) / static_cast<S>(1.0 - std::pow(state.beta1, static_cast<double>(state.t)));
  const S v_corr = S(1) / static_cast<S>(1.0 - std::pow(state.beta2, static_cast<double>(state.t)));

  for (std::size_t k = 0; k < p_refs.size(); ++k) {
    auto& p = *p_refs[k].mat;
    const auto& g = *g_refs[k].mat;
    auto& m = *m_refs[k].mat;
    auto& v = *v_refs[k].mat;
    m = (b1 * m.array() + (S(1) - b1) * g.array()).matrix();
    v = (b2 * v.array() + (S(1) - b2) * g.array() * g.array()).matrix();
    p.array() -= lr * (m.array() * m_corr) / ((v.array() * v_corr).sqrt() + eps);
  }
}

template <class S>
void adam_step(TaggerModel<S>& model, const ParamSet<S>& grads, AdamState<S>& state) {
  adam_step(model.params, grads, state);
  ++model.revision;
}

template <class S>
std::vector<EpochStats> train(TaggerModel<S>& model, const DatasetSplit& split,
                              const TrainOptions& options) {
  if (split.train.empty()) throw EmptySplit("training split is empty");
  if (options.batch_size < 1 || options.epochs < 0) throw Error("bad training options");

  AdamState<S> adam = AdamState<S>::for_config(model.config, options.learning_rate);
  Rng dropout_rng(mix_seed(options.seed, 0xd509));

  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochStats> history;
  history.reserve(static_cast<std::size_t>(options.epochs));

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(options.seed, 0x50f1 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(options.batch_size));
      const Batch batch = make_batch(split.train, order, begin, end, model.config.seq_len);
      ForwardCache<S> cache = forward(model, batch, /*train_mode=*/true, &dropout_rng);
      loss_sum += batch_loss(model, cache, batch.labels) * static_cast<double>(end - begin);
      const ParamSet<S> grads = backward(model, cache, batch.labels);
      adam_step(model, grads, adam);
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_dice = evaluate(model, split.train).dice;
    if (options.eval_val && !split.test.empty()) {
      std::vector<std::size_t> val_order(split.test.size());
      std::iota(val_order.begin(), val_order.end(), std::size_t{0});
      double val_loss_sum = 0.0;
      for (std::size_t begin = 0; begin < val_order.size();
           begin += static_cast<std::size_t>(options.batch_size)) {
        const std::size_t end =
            std::min(val_order.size(), begin + static_cast<std::size_t>(options.batch_size));
        const Batch batch = make_batch(split.test, val_order, begin, end, model.config.seq_len);
        const ForwardCache<S> cache = forward(model, batch, /*train_mode=*/false, nullptr);
        val_loss_sum += batch_loss(model, cache, batch.labels) * static_cast<double>(end - begin);
      }
      stats.val_loss = val_loss_sum / static_cast<double>(val_order.size());
      stats.val_dice = evaluate(model, split.test).dice;
    }
    history.push_back(stats);
  }
  return history;
}

void write_history_jsonl(const std::vector<EpochStats>& history,
                         const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& e : history) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    if (e.val_loss) j["val_loss"] = *e.val_loss;
    j["train_dice"] = e.train_dice;
    if (e.val_dice) j["val_dice"] = *e.val_dice;
    f << j.dump() << '\n';
  }
}

template <class S>
EvalReport evaluate(const TaggerModel<S>& model, const std::vector<TrainingInstance>& instances,
                    bool pooled, double eps) {
  if (instances.empty()) throw EmptyEvalSet("no instances to evaluate");

  constexpr std::size_t kEvalBatch = 64;
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<Eigen::MatrixXd> probs;
  std::vector<const std::vector<int>*> labels;
  probs.reserve(instances.size());
  labels.reserve(instances.size());

  for (std::size_t begin = 0; begin < instances.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(instances.size(), begin + kEvalBatch);
    const Batch batch = make_batch(instances, order, begin, end, model.config.seq_len);
    const ForwardCache<S> cache = forward(model, batch, /*train_mode=*/false, nullptr);
    for (std::size_t i = begin; i < end; ++i) {
      Eigen::MatrixXd p(model.config.seq_len, model.config.num_classes);
      for (int t = 0; t < model.config.seq_len; ++t)
        for (int c = 0; c < model.config.num_classes; ++c)
          p(t, c) = static_cast<double>(
              cache.probs[static_cast<std::size_t>(t)](static_cast<Eigen::Index>(i - begin), c));
      probs.push_back(std::move(p));
      labels.push_back(&instances[i].labels);
    }
  }
  return aggregate_eval(probs, labels, pooled, eps);
}

// --- checkpoints ---

namespace {

constexpr char kCheckpointMagic[8] = {'N', 'U', 'M', 'E', 'X', 'C', 'P', '1'};

template <class S>
constexpr const char* precision_tag() {
  if constexpr (std::is_same_v<S, float>)
    return "f32";
  else
    return "f64";
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  return {{"seq_len", c.seq_len},
          {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"num_classes", c.num_classes},
          {"dropout_rate", c.dropout_rate},
          {"vocab_size", c.vocab_size},
          {"mask_padding_loss", c.mask_padding_loss}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  j.at("seq_len").get_to(c.seq_len);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("num_classes").get_to(c.num_classes);
  j.at("dropout_rate").get_to(c.dropout_rate);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("mask_padding_loss").get_to(c.mask_padding_loss);
  return c;
}

template <class S>
TaggerModel<S> read_model(std::ifstream& f, const nlohmann::json& manifest,
                          const std::filesystem::path& path) {
  TaggerModel<S> model;
  model.config = config_from_json(manifest.at("config"));
  model.params = zero_params<S>(model.config);

  auto refs = param_refs(model.params);
  const auto& params_json = manifest.at("params");
  if (params_json.size() != refs.size())
    throw CorruptCheckpoint(path.string() + ": unexpected parameter list");

  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto& entry = params_json.at(k);
    if (entry.at("name").get<std::string>() != refs[k].name ||
        entry.at("rows").get<Eigen::Index>() != refs[k].mat->rows() ||
        entry.at("cols").get<Eigen::Index>() != refs[k].mat->cols())
      throw CorruptCheckpoint(path.string() + ": parameter manifest mismatch at " + refs[k].name);
    const std::streamsize bytes =
        static_cast<std::streamsize>(sizeof(S)) * refs[k].mat->size();
    if (!f.read(reinterpret_cast<char*>(refs[k].mat->data()), bytes))
      throw CorruptCheckpoint(path.string() + ": truncated at parameter " + refs[k].name);
  }
  if (f.peek() != std::ifstream::traits_type::eof())
    throw CorruptCheckpoint(path.string() + ": trailing bytes after parameters");
  return model;
}

}  // namespace

template <class S>
void save_checkpoint(const TaggerModel<S>& model, const std::filesystem::path& path,
                     std::uint64_t vocab_hash) {
  nlohmann::ordered_json manifest;
  manifest["format_version"] = 1;
  manifest["precision"] = precision_tag<S>();
  manifest["vocab_hash"] = hash_hex(vocab_hash);
  manifest["config"] = config_to_json(model.config);

  auto refs = param_refs(const_cast<ParamSet<S>&>(model.params));
  auto& params_json = manifest["params"] = nlohmann::ordered_json::array();
  for (const auto& ref : refs)
    params_json.push_back(
        {{"name", ref.name}, {"rows", ref.mat->rows()}, {"cols", ref.mat->cols()}});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string text = manifest.dump();
  const std::uint64_t len = text.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& ref : refs)
    f.write(reinterpret_cast<const char*>(ref.mat->data()),
            static_cast<std::streamsize>(sizeof(S)) * ref.mat->size());
  if (!f) throw IoError("short write to " + path.string());
}

LoadedTagger load_checkpoint(const std::filesystem::path& path,
                             std::optional<std::uint64_t> expected_vocab_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());

  char magic[sizeof(kCheckpointMagic)];
  if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw CorruptCheckpoint(path.string() + ": bad magic");
  std::uint64_t len = 0;
  if (!f.read(reinterpret_cast<char*>(&len), sizeof(len)) || len == 0 || len > (1u << 26))
    throw CorruptCheckpoint(path.string() + ": bad manifest length");
  std::string text(len, '\0');
  if (!f.read(text.data(), static_cast<std::streamsize>(len)))
    throw CorruptCheckpoint(path.string() + ": truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw CorruptCheckpoint(path.string() + ": manifest is not valid JSON");
  }
  try {
    if (manifest.at("format_version").get<int>() != 1)
      throw CorruptCheckpoint(path.string() + ": unsupported format version");
    if (expected_vocab_hash &&
        manifest.at("vocab_hash").get<std::string>() != hash_hex(*expected_vocab_hash))
      throw ConfigMismatch(path.string() + ": checkpoint was built with a different vocabulary");

    const std::string precision = manifest.at("precision").get<std::string>();
    if (precision == "f32") return read_model<float>(f, manifest, path);
    if (precision == "f64") return read_model<double>(f, manifest, path);
    throw CorruptCheckpoint(path.string() + ": unknown precision " + precision);
  } catch (const nlohmann::json::exception&) {
    throw CorruptCheckpoint(path.string() + ": manifest is missing fields");
  }
}

template <class S>
TaggerModel<S> load_checkpoint_as(const std::filesystem::path& path,
                                  std::optional<std::uint64_t> expected_vocab_hash) {
  LoadedTagger loaded = load_checkpoint(path, expected_vocab_hash);
  if (!std::holds_alternative<TaggerModel<S>>(loaded))
    throw ConfigMismatch(path.string() + ": checkpoint precision is not " +
                         std::string(precision_tag<S>()));
  return std::get<TaggerModel<S>>(std::move(loaded));
}

// --- explicit instantiations ---

template GruStep<float> gru_cell(const GruDirParams<float>&, const MatX<float>&,
                                 const MatX<float>&);
template GruStep<double> gru_cell(const GruDirParams<double>&, const MatX<double>&,
                                  const MatX<double>&);
template std::vector<MatX<float>> bidirectional_outputs(const GruLayerParams<float>&,
                                                        const std::vector<MatX<float>>&);
template std::vector<MatX<double>> bidirectional_outputs(const GruLayerParams<double>&,
                                                         const std::vector<MatX<double>>&);
template void adam_step(TaggerModel<float>&, const ParamSet<float>&, AdamState<float>&);
template void adam_step(TaggerModel<double>&, const ParamSet<double>&, AdamState<double>&);
template std::vector<ParamRef<float>> param_refs(ParamSet<float>&);
template std::vector<ParamRef<double>> param_refs(ParamSet<double>&);
template ParamSet<float> zero_params(const ModelConfig&);
template ParamSet<double> zero_params(const ModelConfig&);
template TaggerModel<float> init_model(const ModelConfig&, std::uint64_t);
template TaggerModel<double> init_model(const ModelConfig&, std::uint64_t);
template ForwardCache<float> forward(const TaggerModel<float>&, const Batch&, bool, Rng*,
                                     const std::vector<MatX<float>>*);
template ForwardCache<double> forward(const TaggerModel<double>&, const Batch&, bool, Rng*,
                                      const std::vector<MatX<double>>*);
template double batch_loss(const TaggerModel<float>&, const ForwardCache<float>&,
                           const Eigen::MatrixXi&);
template double batch_loss(const TaggerModel<double>&, const ForwardCache<double>&,
                           const Eigen::MatrixXi&);
template ParamSet<float> backward(const TaggerModel<float>&, const ForwardCache<float>&,
                                  const Eigen::MatrixXi&);
template ParamSet<double> backward(const TaggerModel<double>&, const ForwardCache<double>&,
                                   const Eigen::MatrixXi&);
template Eigen::MatrixXd infer(const TaggerModel<float>&, const std::vector<int>&);
template Eigen::MatrixXd infer(const TaggerModel<double>&, const std::vector<int>&);
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParamSet<float>&, const ParamSet<float>&, AdamState<float>&);
template void adam_step(ParamSet<double>&, const ParamSet<double>&, AdamState<double>&);
template std::vector<EpochStats> train(TaggerModel<float>&, const DatasetSplit&,
                                       const TrainOptions&);
template std::vector<EpochStats> train(TaggerModel<double>&, const DatasetSplit&,
                                       const TrainOptions&);
template EvalReport evaluate(const TaggerModel<float>&, const std::vector<TrainingInstance>&,
                             bool, double);
template EvalReport evaluate(const TaggerModel<double>&, const std::vector<TrainingInstance>&,
                             bool, double);
template void save_checkpoint(const TaggerModel<float>&, const std::filesystem::path&,
                              std::uint64_t);
template void save_checkpoint(const TaggerModel<double>&, const std::filesystem::path&,
                              std::uint64_t);
template TaggerModel<float> load_checkpoint_as(const std::filesystem::path&,
                                               std::optional<std::uint64_t>);
template TaggerModel<double> load_checkpoint_as(const std::filesystem::path&,
                                                std::optional<std::uint64_t>);

}  // namespace numex
