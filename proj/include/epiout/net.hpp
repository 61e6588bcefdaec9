// Dense feedforward regression network with three output heads:
// mean (identity), aleatoric scale (softplus + floor, heteroscedastic mode
// only) and an epistemic probability (sigmoid). Reverse-mode gradients,
// Adam trainer, flat little-endian serialization ("epiout-net-v1").
//
// The final linear layer stacks the heads:
//   [mean_0..mean_{dm-1} | scale logits (hetero) | epistemic logit]
#pragma once

#include "epiout/core.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <optional>
#include <string>
#include <vector>

namespace epiout {

enum class Activation { relu, identity, sigmoid, softplus };

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softplus: return "softplus";
  }
  throw std::logic_error("unknown activation");
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "softplus") return Activation::softplus;
  throw std::invalid_argument("unknown activation: " + s);
}

struct LayerSpec {
  int input_dim = 0;
  int output_dim = 0;
  Activation activation = Activation::identity;
};

struct HeadOutputs {
  Vector mean;
  Vector scale;  // empty in mean_only mode
  double eta = 0.0;
};

struct NetworkParams {
  std::vector<LayerSpec> spec;   // per layer, final layer is the head stack
  std::vector<Matrix> weights;   // out x in
  std::vector<Vector> biases;
  int d_mean = 1;
  bool heteroscedastic = false;

  int input_dim() const { return spec.front().input_dim; }
  int head_dim() const { return d_mean * (heteroscedastic ? 2 : 1) + 1; }
  int num_layers() const { return static_cast<int>(spec.size()); }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      n += static_cast<std::size_t>(weights[l].size()) + biases[l].size();
    return n;
  }
};

// Fan-based uniform init, biases zero.
inline NetworkParams make_network(int input_dim, const std::vector<int>& hidden,
                                  int d_mean, bool heteroscedastic,
                                  std::uint64_t seed,
                                  Activation hidden_act = Activation::relu) {
  require(input_dim >= 1 && d_mean >= 1, "make_network: dims must be >= 1");
  NetworkParams p;
  p.d_mean = d_mean;
  p.heteroscedastic = heteroscedastic;
  int in = input_dim;
  for (int h : hidden) {
    require(h >= 1, "make_network: hidden width must be >= 1");
    p.spec.push_back({in, h, hidden_act});
    in = h;
  }
  p.spec.push_back({in, p.head_dim(), Activation::identity});
  Rng rng(seed);
  for (const auto& ls : p.spec) {
    const double a = std::sqrt(6.0 / (ls.input_dim + ls.output_dim));
    std::uniform_real_distribution<double> u(-a, a);
    Matrix w(ls.output_dim, ls.input_dim);
    for (int j = 0; j < w.cols(); ++j)
      for (int i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(ls.output_dim));
  }
  return p;
}

struct DropoutSetting {
  double probability = 0.0;  // in [0,1)
  Rng* rng = nullptr;
};

namespace detail {

inline Matrix apply_activation(Activation act, const Matrix& z) {
  switch (act) {
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::identity: return z;
    case Activation::sigmoid: return z.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::softplus: return z.unaryExpr([](double v) { return softplus(v); });
  }
  throw std::logic_error("unknown activation");
}

inline Matrix activation_derivative(Activation act, const Matrix& z, const Matrix& a) {
  switch (act) {
    case Activation::relu:
      return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::identity: return Matrix::Ones(z.rows(), z.cols());
    case Activation::sigmoid: return a.array() * (1.0 - a.array());
    case Activation::softplus:
      return z.unaryExpr([](double v) { return sigmoid(v); });
  }
  throw std::logic_error("unknown activation");
}

struct ForwardCache {
  std::vector<Matrix> pre;    // z per layer
  std::vector<Matrix> post;   // activation(z), masked
  std::vector<Matrix> masks;  // dropout masks per hidden layer (may be empty)
};

// Columns are samples.
inline Matrix forward_batch(const NetworkParams& p, const Matrix& x_cols,
                            const DropoutSetting& dropout, ForwardCache* cache) {
  require(x_cols.rows() == p.input_dim(), "forward: input dimension mismatch");
  require(all_finite(x_cols), "forward: non-finite input");
  require(dropout.probability >= 0.0 && dropout.probability < 1.0,
          "forward: dropout probability must be in [0,1)");
  const int L = p.num_layers();
  Matrix a = x_cols;
  if (cache) {
    cache->pre.resize(L);
    cache->post.resize(L);
    cache->masks.assign(L, Matrix());
  }
  for (int l = 0; l < L; ++l) {
    Matrix z = (p.weights[l] * a).colwise() + p.biases[l];
    Matrix act = apply_activation(p.spec[l].activation, z);
    const bool hidden = l + 1 < L;
    if (hidden && dropout.probability > 0.0) {
      require(dropout.rng != nullptr, "forward: dropout requires an rng");
      const double keep = 1.0 - dropout.probability;
      std::bernoulli_distribution bern(keep);
      Matrix mask(act.rows(), act.cols());
      for (int j = 0; j < mask.cols(); ++j)
        for (int i = 0; i < mask.rows(); ++i)
          mask(i, j) = bern(*dropout.rng) ? 1.0 / keep : 0.0;
      act = act.cwiseProduct(mask);
      if (cache) cache->masks[l] = std::move(mask);
    }
    if (cache) {
      cache->pre[l] = std::move(z);
      cache->post[l] = act;
    }
    a = std::move(act);
  }
  return a;
}

}  // namespace detail

// Splits the raw head vector into (mean, scale, eta).
inline HeadOutputs split_heads(const NetworkParams& p, const Vector& raw) {
  HeadOutputs out;
  out.mean = raw.head(p.d_mean);
  if (p.heteroscedastic) {
    out.scale = raw.segment(p.d_mean, p.d_mean)
                    .unaryExpr([](double v) { return softplus(v) + kScaleFloor; });
  }
  out.eta = sigmoid(raw(raw.size() - 1));
  return out;
}

inline HeadOutputs forward(const NetworkParams& p, const Vector& x,
                           std::optional<DropoutSetting> dropout = std::nullopt) {
  DropoutSetting ds = dropout.value_or(DropoutSetting{});
  Matrix raw = detail::forward_batch(p, x, ds, nullptr);
  return split_heads(p, raw.col(0));
}

// 0.5*ln(2*pi*scale^2) + (y-mean)^2 / (2*scale^2). Scales below the floor
// are clamped; pass a counter to observe how often that happened.
inline double gaussian_nll(double mean, double scale, double y,
                           long* clamp_count = nullptr) {
  if (scale < kScaleFloor) {
    scale = kScaleFloor;
    if (clamp_count) ++*clamp_count;
  }
  return 0.5 * std::log(2.0 * M_PI * scale * scale) + sq(y - mean) / (2.0 * scale * scale);
}

inline double bce(double eta, int label) {
  require(label == 0 || label == 1, "bce: label must be 0 or 1");
  eta = std::clamp(eta, kBceEps, 1.0 - kBceEps);
  return label ? -std::log(eta) : -std::log(1.0 - eta);
}

enum class TrainMode { mean_only, heteroscedastic };

struct TrainConfig {
  int epochs = 2000;
  int batch_size = 0;  // 0 = full batch
  double learning_rate = 1e-3;
  double lambda_epi = 1.0;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::mean_only;
  double dropout_probability = 0.0;  // train-time dropout (MC-dropout baseline)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

struct AdamState {
  long step = 0;
  std::vector<Matrix> m_w, v_w;
  std::vector<Vector> m_b, v_b;

  static AdamState zeros_like(const NetworkParams& p) {
    AdamState s;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      s.m_w.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
      s.v_w.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
      s.m_b.push_back(Vector::Zero(p.biases[l].size()));
      s.v_b.push_back(Vector::Zero(p.biases[l].size()));
    }
    return s;
  }
};

struct Gradients {
  std::vector<Matrix> w;
  std::vector<Vector> b;

  static Gradients zeros_like(const NetworkParams& p) {
    Gradients g;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      g.w.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
      g.b.push_back(Vector::Zero(p.biases[l].size()));
    }
    return g;
  }
};

struct TrainResult {
  std::vector<double> loss_history;  // one total-loss value per epoch
  std::vector<std::string> warnings;
  long scale_clamp_count = 0;
};

namespace detail {

// Loss and gradients for one combined batch. Regression rows drive the
// mean/scale heads, epi rows drive only the epistemic logit.
// x_* hold samples as rows; pass n_reg = 0 or n_epi = 0 to drop a term.
struct BatchLoss {
  double total = 0.0;
  double regression = 0.0;
  double bce_term = 0.0;
};

inline BatchLoss loss_and_gradients(const NetworkParams& p, const Matrix& x_reg,
                                    const Matrix& y_reg, const Matrix& x_epi,
                                    const Vector& epi_labels, const TrainConfig& cfg,
                                    Gradients* grads, Rng* dropout_rng,
                                    long* clamp_count = nullptr) {
  const int n_reg = static_cast<int>(x_reg.rows());
  const int n_epi = static_cast<int>(x_epi.rows());
  const int n = n_reg + n_epi;
  require(n > 0, "loss_and_gradients: empty batch");
  const bool hetero = cfg.mode == TrainMode::heteroscedastic;
  require(!hetero || p.heteroscedastic,
          "train: heteroscedastic mode needs a network with a scale head");

  Matrix x_cols(p.input_dim(), n);
  if (n_reg) x_cols.leftCols(n_reg) = x_reg.transpose();
  if (n_epi) x_cols.rightCols(n_epi) = x_epi.transpose();

  DropoutSetting ds;
  if (cfg.dropout_probability > 0.0) {
    ds.probability = cfg.dropout_probability;
    ds.rng = dropout_rng;
  }
  ForwardCache cache;
  Matrix raw = forward_batch(p, x_cols, ds, &cache);

  BatchLoss loss;
  Matrix delta = Matrix::Zero(raw.rows(), raw.cols());  // dL/d(raw head)
  const int dm = p.d_mean;
  const int eta_row = static_cast<int>(raw.rows()) - 1;

  for (int i = 0; i < n_reg; ++i) {
    for (int d = 0; d < dm; ++d) {
      const double mu = raw(d, i);
      const double y = y_reg(i, d);
      if (hetero) {
        const double zs = raw(dm + d, i);
        double s = softplus(zs) + kScaleFloor;
        loss.regression += gaussian_nll(mu, s, y, clamp_count) / n_reg;
        const double dmu = (mu - y) / (s * s) / n_reg;
        const double dsdz = sigmoid(zs);
        const double dLds = (1.0 / s - sq(y - mu) / (s * s * s)) / n_reg;
        delta(d, i) += dmu;
        delta(dm + d, i) += dLds * dsdz;
      } else {
        loss.regression += sq(y - mu) / n_reg;
        delta(d, i) += 2.0 * (mu - y) / n_reg;
      }
    }
  }
  if (n_epi && cfg.lambda_epi > 0.0) {
    for (int i = 0; i < n_epi; ++i) {
      const int col = n_reg + i;
      const double eta = sigmoid(raw(eta_row, col));
      const int label = static_cast<int>(epi_labels(i));
      loss.bce_term += bce(eta, label) / n_epi;
      delta(eta_row, col) += cfg.lambda_epi * (eta - label) / n_epi;
    }
  }
  loss.total = loss.regression + cfg.lambda_epi * loss.bce_term;

  if (grads) {
    for (int l = p.num_layers() - 1; l >= 0; --l) {
      if (l + 1 < p.num_layers()) {
        // delta currently holds dL/d(post activation of layer l)
        if (cache.masks[l].size()) delta = delta.cwiseProduct(cache.masks[l]);
        delta = delta.cwiseProduct(
            activation_derivative(p.spec[l].activation, cache.pre[l], cache.post[l]));
      }
      const Matrix& a_prev = l == 0 ? x_cols : cache.post[l - 1];
      grads->w[l] = delta * a_prev.transpose();
      grads->b[l] = delta.rowwise().sum();
      if (l > 0) delta = p.weights[l].transpose() * delta;
    }
  }
  return loss;
}

inline void adam_step(NetworkParams& p, AdamState& adam, const Gradients& g,
                      const TrainConfig& cfg) {
  ++adam.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    adam.m_w[l] = cfg.beta1 * adam.m_w[l] + (1.0 - cfg.beta1) * g.w[l];
    adam.v_w[l] = cfg.beta2 * adam.v_w[l] + (1.0 - cfg.beta2) * g.w[l].cwiseProduct(g.w[l]);
    p.weights[l].array() -= cfg.learning_rate * (adam.m_w[l].array() / bc1) /
                            ((adam.v_w[l].array() / bc2).sqrt() + cfg.adam_epsilon);
    adam.m_b[l] = cfg.beta1 * adam.m_b[l] + (1.0 - cfg.beta1) * g.b[l];
    adam.v_b[l] = cfg.beta2 * adam.v_b[l] + (1.0 - cfg.beta2) * g.b[l].cwiseProduct(g.b[l]);
    p.biases[l].array() -= cfg.learning_rate * (adam.m_b[l].array() / bc1) /
                           ((adam.v_b[l].array() / bc2).sqrt() + cfg.adam_epsilon);
  }
}

}  // namespace detail

// Trains in place. Total loss per step is
//   mean regression loss over the d_tr batch
//   + lambda_epi * mean BCE over the d_epi batch.
// Runs are bit-reproducible for a fixed seed.
inline TrainResult train(NetworkParams& params, const Matrix& x_tr, const Matrix& y_tr,
                         const Matrix& x_epi, const Vector& epi_labels,
                         const TrainConfig& cfg, AdamState& adam) {
  require(x_tr.rows() >= 1, "train: empty training set");
  require(x_tr.rows() == y_tr.rows(), "train: x/y row mismatch");
  require(cfg.epochs >= 1, "train: epochs must be >= 1");
  require(cfg.lambda_epi >= 0.0, "train: lambda_epi must be >= 0");
  require(x_epi.rows() == epi_labels.size(), "train: epi rows/labels mismatch");
  for (int i = 0; i < epi_labels.size(); ++i)
    require(epi_labels(i) == 0.0 || epi_labels(i) == 1.0, "train: epi labels must be 0/1");

  TrainResult result;
  const bool use_epi = x_epi.rows() > 0;
  if (!use_epi && cfg.lambda_epi > 0.0)
    result.warnings.push_back("empty epi set: epistemic term skipped");

  const int n_tr = static_cast<int>(x_tr.rows());
  const int n_epi = static_cast<int>(x_epi.rows());
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  Gradients grads = Gradients::zeros_like(params);

  std::vector<int> tr_idx(n_tr), epi_idx(n_epi);
  std::iota(tr_idx.begin(), tr_idx.end(), 0);
  std::iota(epi_idx.begin(), epi_idx.end(), 0);

  const int batch = cfg.batch_size <= 0 ? n_tr : std::min(cfg.batch_size, n_tr);
  const int steps_per_epoch = (n_tr + batch - 1) / batch;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    if (batch < n_tr) {
      std::shuffle(tr_idx.begin(), tr_idx.end(), shuffle_rng);
      if (use_epi) std::shuffle(epi_idx.begin(), epi_idx.end(), shuffle_rng);
    }
    for (int s = 0; s < steps_per_epoch; ++s) {
      const int lo = s * batch;
      const int hi = std::min(lo + batch, n_tr);
      const int nb = hi - lo;
      Matrix xb(nb, x_tr.cols()), yb(nb, y_tr.cols());
      for (int i = 0; i < nb; ++i) {
        xb.row(i) = x_tr.row(tr_idx[lo + i]);
        yb.row(i) = y_tr.row(tr_idx[lo + i]);
      }
      Matrix xe(0, x_tr.cols());
      Vector le(0);
      if (use_epi) {
        // Epi batch scaled so both sets finish an epoch together.
        const int eb = batch >= n_tr
                           ? n_epi
                           : std::max(1, static_cast<int>(
                                             static_cast<long>(n_epi) * nb / n_tr));
        xe.resize(eb, x_epi.cols());
        le.resize(eb);
        for (int i = 0; i < eb; ++i) {
          const int j = epi_idx[(s * eb + i) % n_epi];
          xe.row(i) = x_epi.row(j);
          le(i) = epi_labels(j);
        }
      }
      auto loss = detail::loss_and_gradients(params, xb, yb, xe, le, cfg, &grads,
                                             &dropout_rng, &result.scale_clamp_count);
      detail::adam_step(params, adam, grads, cfg);
      epoch_loss += loss.total;
    }
    result.loss_history.push_back(epoch_loss / steps_per_epoch);
  }
  return result;
}

// --- serialization: "epiout-net-v1" ------------------------------------
// [u32 header length LE][JSON header][payload: f64 LE, per layer W row-major
// then b].

namespace detail {

inline void store_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void store_f64_le(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double load_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

inline std::string serialize_network(const NetworkParams& p) {
  nlohmann::json header;
  header["format"] = "epiout-net-v1";
  header["d_mean"] = p.d_mean;
  header["heteroscedastic"] = p.heteroscedastic;
  auto& layers = header["layers"] = nlohmann::json::array();
  for (const auto& ls : p.spec)
    layers.push_back({{"in", ls.input_dim},
                      {"out", ls.output_dim},
                      {"activation", activation_name(ls.activation)}});
  const std::string h = header.dump();
  std::string out;
  detail::store_u32_le(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const Matrix& w = p.weights[l];
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) detail::store_f64_le(out, w(i, j));
    for (int i = 0; i < p.biases[l].size(); ++i)
      detail::store_f64_le(out, p.biases[l](i));
  }
  return out;
}

inline NetworkParams deserialize_network(const std::string& buf) {
  require(buf.size() >= 4, "deserialize: truncated buffer");
  const auto* bytes = reinterpret_cast<const unsigned char*>(buf.data());
  std::uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i) hlen |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  require(buf.size() >= 4 + hlen, "deserialize: truncated header");
  auto header = nlohmann::json::parse(buf.substr(4, hlen));
  require(header.at("format") == "epiout-net-v1", "deserialize: unknown format tag");
  NetworkParams p;
  p.d_mean = header.at("d_mean");
  p.heteroscedastic = header.at("heteroscedastic");
  for (const auto& jl : header.at("layers"))
    p.spec.push_back({jl.at("in"), jl.at("out"),
                      activation_from_name(jl.at("activation"))});
  std::size_t off = 4 + hlen;
  for (const auto& ls : p.spec) {
    const std::size_t need = static_cast<std::size_t>(ls.input_dim) * ls.output_dim + ls.output_dim;
    require(buf.size() >= off + 8 * need, "deserialize: truncated payload");
    Matrix w(ls.output_dim, ls.input_dim);
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j, off += 8)
        w(i, j) = detail::load_f64_le(bytes + off);
    Vector b(ls.output_dim);
    for (int i = 0; i < b.size(); ++i, off += 8) b(i) = detail::load_f64_le(bytes + off);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  require(off == buf.size(), "deserialize: trailing bytes");
  return p;
}

}  // namespace epiout
