#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "npd/detail/binary_io.hpp"
#include "npd/detail/random.hpp"
#include "npd/error.hpp"
#include "npd/features.hpp"

namespace npd::mlp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr int kSentimentOutputs = 3;
/// Marks a row without an opinion label.
inline constexpr int kNoLabel = -1;

struct Architecture {
  int input_dim = 0;
  std::array<int, 2> hidden{64, 32};
  double dropout_rate = 0.2;
  double batch_norm_epsilon = 1e-5;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct TrainConfig {
  double learning_rate = 0.01;
  int batch_size = 64;
  int epochs = 100;
  double opinion_loss_weight = 1.0;
  double batch_norm_momentum = 0.9;
};

inline void validate(const Architecture& a) {
  if (a.input_dim < 1) throw ValueError("mlp: input_dim must be >= 1");
  if (a.hidden[0] < 1 || a.hidden[1] < 1) throw ValueError("mlp: hidden sizes must be >= 1");
  if (!(a.dropout_rate >= 0.0 && a.dropout_rate < 1.0)) throw ValueError("mlp: dropout_rate must lie in [0,1)");
  if (!(a.batch_norm_epsilon > 0.0)) throw ValueError("mlp: batch_norm_epsilon must be > 0");
}

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0)) throw ValueError("mlp: learning_rate must be > 0");
  if (c.batch_size < 1) throw ValueError("mlp: batch_size must be >= 1");
  if (c.epochs < 1) throw ValueError("mlp: epochs must be >= 1");
  if (!(c.opinion_loss_weight >= 0.0)) throw ValueError("mlp: opinion_loss_weight must be >= 0");
  if (!(c.batch_norm_momentum >= 0.0 && c.batch_norm_momentum < 1.0)) {
    throw ValueError("mlp: batch_norm_momentum must lie in [0,1)");
  }
}

/// Affine -> ReLU -> dropout -> batch norm.
struct HiddenLayer {
  Matrix weight;  // fan_in x units
  Vector bias;
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
};

struct MlpModel {
  Architecture arch;
  std::array<HiddenLayer, 2> hidden;
  Matrix sentiment_weight;  // h2 x 3
  Vector sentiment_bias;
  Matrix opinion_weight;  // h2 x 1
  Vector opinion_bias;
  std::uint64_t seed = 0;
};

namespace detail {

inline Matrix he_normal(int fan_in, int fan_out, npd::detail::Rng& rng) {
  const double scale = std::sqrt(2.0 / fan_in);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.normal() * scale;
  return w;
}

}  // namespace detail

inline MlpModel init_model(const Architecture& arch, std::uint64_t seed) {
  validate(arch);
  npd::detail::Rng rng(seed);
  MlpModel m;
  m.arch = arch;
  m.seed = seed;
  int fan_in = arch.input_dim;
  for (std::size_t l = 0; l < 2; ++l) {
    const int units = arch.hidden[l];
    auto& layer = m.hidden[l];
    layer.weight = detail::he_normal(fan_in, units, rng);
    layer.bias = Vector::Zero(units);
    layer.gamma = Vector::Ones(units);
    layer.beta = Vector::Zero(units);
    layer.running_mean = Vector::Zero(units);
    layer.running_var = Vector::Ones(units);
    fan_in = units;
  }
  m.sentiment_weight = detail::he_normal(fan_in, kSentimentOutputs, rng);
  m.sentiment_bias = Vector::Zero(kSentimentOutputs);
  m.opinion_weight = detail::he_normal(fan_in, 1, rng);
  m.opinion_bias = Vector::Zero(1);
  return m;
}

enum class Mode { Train, Infer };

/// Inverted-dropout mask: each entry is 0 with probability p, else 1/(1-p).
inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, npd::detail::Rng& rng) {
  Matrix mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) mask(r, c) = rng.uniform() < p ? 0.0 : keep_scale;
  return mask;
}

struct LayerCache {
  Matrix input;       // activations entering the affine map
  Matrix pre;         // affine output
  Matrix mask;        // dropout mask (empty in infer mode or p = 0)
  Matrix dropped;     // ReLU output after dropout
  RowVector mean;     // batch-norm statistics used
  RowVector var;
  Matrix normalized;  // before gamma/beta
};

struct ForwardResult {
  Matrix sentiment;  // batch x 3, rows sum to 1
  Vector opinion;    // batch, in (0,1)
  std::array<LayerCache, 2> layers;
  Matrix features;   // last hidden output, shared by both heads
  Mode mode = Mode::Infer;
};

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    double total = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) total += (out(r, c) = std::exp(logits(r, c) - mx));
    out.row(r) /= total;
  }
  return out;
}

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline ForwardResult forward(const MlpModel& model, const Matrix& X, Mode mode, std::uint64_t rng_seed = 0) {
  if (X.cols() != model.arch.input_dim) {
    throw ValueError("mlp forward: expected " + std::to_string(model.arch.input_dim) + " columns, got " +
                     std::to_string(X.cols()));
  }
  if (X.rows() < 1) throw ValueError("mlp forward: empty batch");
  ForwardResult out;
  out.mode = mode;
  npd::detail::Rng rng(rng_seed);
  const double p = model.arch.dropout_rate;
  const double eps = model.arch.batch_norm_epsilon;
  const auto batch = static_cast<double>(X.rows());

  Matrix a = X;
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& layer = model.hidden[l];
    auto& c = out.layers[l];
    c.input = std::move(a);
    c.pre = (c.input * layer.weight).rowwise() + layer.bias.transpose();
    c.dropped = c.pre.cwiseMax(0.0);
    if (mode == Mode::Train && p > 0.0) {
      c.mask = dropout_mask(c.dropped.rows(), c.dropped.cols(), p, rng);
      c.dropped = c.dropped.cwiseProduct(c.mask);
    }
    if (mode == Mode::Train) {
      c.mean = c.dropped.colwise().mean();
      c.var = (c.dropped.rowwise() - c.mean).array().square().colwise().sum() / batch;
    } else {
      c.mean = layer.running_mean.transpose();
      c.var = layer.running_var.transpose();
    }
    const RowVector inv_std = (c.var.array() + eps).rsqrt();
    c.normalized = ((c.dropped.rowwise() - c.mean).array().rowwise() * inv_std.array()).matrix();
    a = ((c.normalized.array().rowwise() * layer.gamma.transpose().array()).rowwise() +
         layer.beta.transpose().array())
            .matrix();
  }
  out.features = std::move(a);
  out.sentiment = softmax_rows((out.features * model.sentiment_weight).rowwise() + model.sentiment_bias.transpose());
  const Vector logits = out.features * model.opinion_weight + Vector::Constant(X.rows(), model.opinion_bias(0));
  out.opinion = logits.unaryExpr([](double z) { return sigmoid(z); });
  return out;
}

/// Mean sentiment cross-entropy plus `weight` x mean binary cross-entropy over
/// the rows that carry an opinion label (kNoLabel rows are excluded).
inline double loss(const Matrix& sentiment_probs, const Vector& opinion_probs, std::span<const int> y_sent,
                   std::span<const int> y_op, double weight) {
  const auto batch = static_cast<std::size_t>(sentiment_probs.rows());
  if (y_sent.size() != batch || y_op.size() != batch || static_cast<std::size_t>(opinion_probs.size()) != batch) {
    throw ValueError("mlp loss: batch shapes disagree");
  }
  static constexpr double lo = 1e-12, hi = 1.0 - 1e-12;
  // NaN must survive the clamp so that divergence is detected upstream.
  auto clamp = [](double v) { return std::isnan(v) ? v : std::min(hi, std::max(lo, v)); };
  double ce = 0;
  for (std::size_t i = 0; i < batch; ++i) ce -= std::log(clamp(sentiment_probs(static_cast<Eigen::Index>(i), y_sent[i])));
  ce /= static_cast<double>(batch);
  double bce = 0;
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < batch; ++i) {
    if (y_op[i] == kNoLabel) continue;
    const double q = clamp(opinion_probs(static_cast<Eigen::Index>(i)));
    bce -= y_op[i] ? std::log(q) : std::log(1.0 - q);
    ++labeled;
  }
  return labeled ? ce + weight * bce / static_cast<double>(labeled) : ce;
}

struct Gradients {
  std::array<Matrix, 2> weight;
  std::array<Vector, 2> bias;
  std::array<Vector, 2> gamma;
  std::array<Vector, 2> beta;
  Matrix sentiment_weight;
  Vector sentiment_bias;
  Matrix opinion_weight;
  Vector opinion_bias;
};

/// Backpropagation through a train-mode forward pass of the same batch.
inline Gradients backward(const MlpModel& model, const ForwardResult& cache, std::span<const int> y_sent,
                          std::span<const int> y_op, double opinion_weight) {
  const auto B = cache.sentiment.rows();
  if (static_cast<Eigen::Index>(y_sent.size()) != B || static_cast<Eigen::Index>(y_op.size()) != B) {
    throw ValueError("mlp backward: target sizes disagree with the batch");
  }
  Gradients g;
  Matrix d_logits = cache.sentiment;
  for (Eigen::Index i = 0; i < B; ++i) d_logits(i, y_sent[static_cast<std::size_t>(i)]) -= 1.0;
  d_logits /= static_cast<double>(B);

  Vector d_op = Vector::Zero(B);
  const auto labeled = std::count_if(y_op.begin(), y_op.end(), [](int v) { return v != kNoLabel; });
  if (labeled) {
    for (Eigen::Index i = 0; i < B; ++i) {
      const int t = y_op[static_cast<std::size_t>(i)];
      if (t != kNoLabel) d_op(i) = opinion_weight * (cache.opinion(i) - t) / static_cast<double>(labeled);
    }
  }

  g.sentiment_weight = cache.features.transpose() * d_logits;
  g.sentiment_bias = d_logits.colwise().sum().transpose();
  g.opinion_weight = cache.features.transpose() * d_op;
  g.opinion_bias = Vector::Constant(1, d_op.sum());
  Matrix d_a = d_logits * model.sentiment_weight.transpose() + d_op * model.opinion_weight.transpose();

  const double eps = model.arch.batch_norm_epsilon;
  for (int l = 1; l >= 0; --l) {
    const auto& layer = model.hidden[static_cast<std::size_t>(l)];
    const auto& c = cache.layers[static_cast<std::size_t>(l)];
    g.gamma[static_cast<std::size_t>(l)] = d_a.cwiseProduct(c.normalized).colwise().sum().transpose();
    g.beta[static_cast<std::size_t>(l)] = d_a.colwise().sum().transpose();

    const Matrix d_norm = (d_a.array().rowwise() * layer.gamma.transpose().array()).matrix();
    const RowVector inv_std = (c.var.array() + eps).rsqrt();
    const RowVector sum_d = d_norm.colwise().sum();
    const RowVector sum_dx = d_norm.cwiseProduct(c.normalized).colwise().sum();
    Matrix d_drop(c.dropped.rows(), c.dropped.cols());
    const double b = static_cast<double>(B);
    for (Eigen::Index j = 0; j < d_drop.cols(); ++j) {
      d_drop.col(j) = (inv_std(j) / b) *
                      (b * d_norm.col(j).array() - sum_d(j) - c.normalized.col(j).array() * sum_dx(j)).matrix();
    }
    Matrix d_relu = c.mask.size() ? d_drop.cwiseProduct(c.mask) : d_drop;
    const Matrix d_pre = d_relu.cwiseProduct((c.pre.array() > 0.0).cast<double>().matrix());
    g.weight[static_cast<std::size_t>(l)] = c.input.transpose() * d_pre;
    g.bias[static_cast<std::size_t>(l)] = d_pre.colwise().sum().transpose();
    if (l > 0) d_a = d_pre * layer.weight.transpose();
  }
  return g;
}

inline void update_running_stats(MlpModel& model, const ForwardResult& cache, double momentum) {
  for (std::size_t l = 0; l < 2; ++l) {
    auto& layer = model.hidden[l];
    layer.running_mean = momentum * layer.running_mean + (1.0 - momentum) * cache.layers[l].mean.transpose();
    layer.running_var = momentum * layer.running_var + (1.0 - momentum) * cache.layers[l].var.transpose();
  }
}

inline void apply_gradients(MlpModel& model, const Gradients& g, double lr) {
  for (std::size_t l = 0; l < 2; ++l) {
    auto& layer = model.hidden[l];
    layer.weight -= lr * g.weight[l];
    layer.bias -= lr * g.bias[l];
    layer.gamma -= lr * g.gamma[l];
    layer.beta -= lr * g.beta[l];
  }
  model.sentiment_weight -= lr * g.sentiment_weight;
  model.sentiment_bias -= lr * g.sentiment_bias;
  model.opinion_weight -= lr * g.opinion_weight;
  model.opinion_bias -= lr * g.opinion_bias;
}

inline Matrix to_matrix(const FeatureMatrix& X) {
  Matrix m(static_cast<Eigen::Index>(X.rows()), static_cast<Eigen::Index>(X.cols()));
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = 0; c < X.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = X(r, c);
  return m;
}

/// Plain mini-batch gradient descent. Rows are reshuffled each epoch. When
/// `loss_history` is given, the inference-mode loss over the whole training
/// set is appended after each epoch (dropout noise would otherwise dominate
/// the curve near convergence).
inline MlpModel train_mlp(const FeatureMatrix& X, std::span<const int> y_sent, std::span<const int> y_op,
                          const Architecture& arch, const TrainConfig& cfg, std::uint64_t seed,
                          std::vector<double>* loss_history = nullptr) {
  validate(arch);
  validate(cfg);
  if (X.rows() == 0) throw ValueError("train_mlp: no rows");
  if (static_cast<int>(X.cols()) != arch.input_dim) throw ValueError("train_mlp: input_dim does not match X");
  if (y_sent.size() != X.rows() || y_op.size() != X.rows()) throw ValueError("train_mlp: label sizes disagree");
  for (int y : y_sent)
    if (y < 0 || y >= kSentimentOutputs) throw ValueError("train_mlp: sentiment label out of range");
  for (int y : y_op)
    if (y != kNoLabel && y != 0 && y != 1) throw ValueError("train_mlp: opinion label must be 0, 1 or -1");

  MlpModel model = init_model(arch, npd::detail::sub_seed(seed, 0));
  model.seed = seed;
  const Matrix all = to_matrix(X);
  const auto n = X.rows();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> ys, yo;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    npd::detail::Rng shuffle_rng(npd::detail::sub_seed(seed, 1 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(std::span(order));
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += batch, ++batches) {
      const auto len = std::min(batch, n - start);
      Matrix xb(static_cast<Eigen::Index>(len), all.cols());
      ys.resize(len);
      yo.resize(len);
      for (std::size_t i = 0; i < len; ++i) {
        const auto row = order[start + i];
        xb.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(row));
        ys[i] = y_sent[row];
        yo[i] = y_op[row];
      }
      const auto dropout_seed =
          npd::detail::sub_seed(seed, (static_cast<std::uint64_t>(epoch + 1) << 32) | batches);
      const auto fwd = forward(model, xb, Mode::Train, dropout_seed);
      const double l = loss(fwd.sentiment, fwd.opinion, ys, yo, cfg.opinion_loss_weight);
      if (!std::isfinite(l)) throw DivergenceError(epoch, batches);
      const auto grads = backward(model, fwd, ys, yo, cfg.opinion_loss_weight);
      apply_gradients(model, grads, cfg.learning_rate);
      update_running_stats(model, fwd, cfg.batch_norm_momentum);
    }
    if (loss_history) {
      const auto full = forward(model, all, Mode::Infer);
      loss_history->push_back(loss(full.sentiment, full.opinion, y_sent, y_op, cfg.opinion_loss_weight));
    }
  }
  return model;
}

struct Prediction {
  Matrix sentiment;
  Vector opinion;
};

inline Prediction predict(const MlpModel& model, const FeatureMatrix& X) {
  auto fwd = forward(model, to_matrix(X), Mode::Infer);
  return {std::move(fwd.sentiment), std::move(fwd.opinion)};
}

// ---------------------------------------------------------------------------
// MLP1 container: magic, architecture block, then row-major float64 tensors
// each prefixed by (rows, cols).

namespace detail {

inline void put_tensor(npd::detail::ByteWriter& w, const Matrix& m) {
  w.put(static_cast<std::uint32_t>(m.rows()));
  w.put(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.put(m(r, c));
}

inline Matrix get_tensor(npd::detail::ByteReader& r, Eigen::Index rows, Eigen::Index cols) {
  const auto at = r.offset();
  const auto got_rows = r.get<std::uint32_t>();
  const auto got_cols = r.get<std::uint32_t>();
  if (got_rows != rows || got_cols != cols) {
    throw FormatError(at, "tensor shape " + std::to_string(got_rows) + "x" + std::to_string(got_cols) +
                              " does not match the architecture");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = r.get<double>();
  return m;
}

}  // namespace detail

inline std::string save(const MlpModel& m) {
  npd::detail::ByteWriter w;
  w.put_bytes("MLP1");
  w.put(static_cast<std::uint32_t>(m.arch.input_dim));
  w.put(static_cast<std::uint32_t>(m.arch.hidden[0]));
  w.put(static_cast<std::uint32_t>(m.arch.hidden[1]));
  w.put(m.arch.dropout_rate);
  w.put(m.arch.batch_norm_epsilon);
  w.put(m.seed);
  for (const auto& layer : m.hidden) {
    detail::put_tensor(w, layer.weight);
    detail::put_tensor(w, layer.bias.transpose());
    detail::put_tensor(w, layer.gamma.transpose());
    detail::put_tensor(w, layer.beta.transpose());
    detail::put_tensor(w, layer.running_mean.transpose());
    detail::put_tensor(w, layer.running_var.transpose());
  }
  detail::put_tensor(w, m.sentiment_weight);
  detail::put_tensor(w, m.sentiment_bias.transpose());
  detail::put_tensor(w, m.opinion_weight);
  detail::put_tensor(w, m.opinion_bias.transpose());
  return w.take();
}

inline MlpModel load(std::string_view bytes) {
  npd::detail::ByteReader r(bytes);
  r.expect_magic("MLP1");
  MlpModel m;
  m.arch.input_dim = static_cast<int>(r.get<std::uint32_t>());
  m.arch.hidden[0] = static_cast<int>(r.get<std::uint32_t>());
  m.arch.hidden[1] = static_cast<int>(r.get<std::uint32_t>());
  m.arch.dropout_rate = r.get<double>();
  m.arch.batch_norm_epsilon = r.get<double>();
  m.seed = r.get<std::uint64_t>();
  try {
    validate(m.arch);
  } catch (const ValueError& e) {
    throw FormatError(4, e.what());
  }
  Eigen::Index fan_in = m.arch.input_dim;
  for (std::size_t l = 0; l < 2; ++l) {
    const Eigen::Index units = m.arch.hidden[l];
    auto& layer = m.hidden[l];
    layer.weight = detail::get_tensor(r, fan_in, units);
    layer.bias = detail::get_tensor(r, 1, units).transpose();
    layer.gamma = detail::get_tensor(r, 1, units).transpose();
    layer.beta = detail::get_tensor(r, 1, units).transpose();
    layer.running_mean = detail::get_tensor(r, 1, units).transpose();
    const auto at = r.offset();
    layer.running_var = detail::get_tensor(r, 1, units).transpose();
    if ((layer.running_var.array() < 0.0).any()) throw FormatError(at, "negative running variance");
    fan_in = units;
  }
  m.sentiment_weight = detail::get_tensor(r, fan_in, kSentimentOutputs);
  m.sentiment_bias = detail::get_tensor(r, 1, kSentimentOutputs).transpose();
  m.opinion_weight = detail::get_tensor(r, fan_in, 1);
  m.opinion_bias = detail::get_tensor(r, 1, 1).transpose();
  if (!r.done()) throw FormatError(r.offset(), "trailing bytes after MLP1 model");
  return m;
}

}  // namespace npd::mlp
