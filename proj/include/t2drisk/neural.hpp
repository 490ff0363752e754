#pragma once

// Feedforward Cox network: hidden blocks of Linear -> activation ->
// batch norm -> dropout, then a bias-free linear output giving a scalar
// log-risk. Trained on the negative log partial likelihood with risk sets
// formed inside each minibatch.

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "t2drisk/cohort.hpp"
#include "t2drisk/error.hpp"
#include "t2drisk/evaluation.hpp"
#include "t2drisk/random.hpp"

namespace t2drisk {

enum class Activation { LeakyRelu, Relu, Selu, Identity };
enum class Optimizer { SgdMomentum, Adam };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Relu: return "relu";
    case Activation::Selu: return "selu";
    case Activation::Identity: break;
  }
  return "identity";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "leaky_relu") return Activation::LeakyRelu;
  if (s == "relu") return Activation::Relu;
  if (s == "selu") return Activation::Selu;
  if (s == "identity") return Activation::Identity;
  throw UsageError("unknown activation '" + std::string(s) + "'");
}

inline std::string_view to_string(Optimizer o) {
  return o == Optimizer::Adam ? "adam" : "sgd_momentum";
}

inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "adam") return Optimizer::Adam;
  if (s == "sgd_momentum") return Optimizer::SgdMomentum;
  throw UsageError("unknown optimizer '" + std::string(s) + "'");
}

/// Defaults are the tuned optimum for the reduced feature set: SELU,
/// 64x64x64, dropout 0.04809, weight decay 0.00101, batch norm, Adam,
/// learning rate 0.00169. Batch size and epoch count are not part of that
/// optimum; 1024 and 50 are this project's choice. `batch_size` 0 trains
/// full-batch with exact risk sets. `momentum` only applies to SGD.
struct NetConfig {
  std::vector<int> topology{64, 64, 64};
  Activation activation = Activation::Selu;
  double dropout = 0.04809;
  double weight_decay = 0.00101;
  bool batch_norm = true;
  Optimizer optimizer = Optimizer::Adam;
  double momentum = 0.9;
  double learning_rate = 0.00169;
  std::size_t batch_size = 1024;
  int epochs = 50;
  std::uint64_t seed = 0;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

inline void validate(const NetConfig& c) {
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw UsageError("dropout must lie in [0,1)");
  if (!(c.learning_rate >= 0.0)) throw UsageError("learning rate must be >= 0");
  if (!(c.weight_decay >= 0.0)) throw UsageError("weight decay must be >= 0");
  if (!(c.momentum >= 0.0 && c.momentum <= 1.0)) throw UsageError("momentum must lie in [0,1]");
  if (c.epochs < 0) throw UsageError("epochs must be >= 0");
  for (int w : c.topology)
    if (w < 1) throw UsageError("layer widths must be >= 1");
}

inline nlohmann::json to_json(const NetConfig& c) {
  return {{"topology", c.topology},         {"activation", to_string(c.activation)},
          {"dropout", c.dropout},           {"weight_decay", c.weight_decay},
          {"batch_norm", c.batch_norm},     {"optimizer", to_string(c.optimizer)},
          {"momentum", c.momentum},         {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},     {"epochs", c.epochs},
          {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline NetConfig net_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "topology",  "activation",    "dropout",    "weight_decay", "batch_norm", "optimizer",
      "momentum",  "learning_rate", "batch_size", "epochs",       "seed"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw UsageError("unknown network config key '" + key + "'");
  NetConfig c;
  try {
    if (j.contains("topology")) c.topology = j.at("topology").get<std::vector<int>>();
    if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("batch_norm")) c.batch_norm = j.at("batch_norm").get<bool>();
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed network config: ") + e.what());
  }
  validate(c);
  return c;
}

/// Trainable tensors. Also used, with identical shapes, to hold gradients.
struct NetParams {
  std::vector<Eigen::MatrixXd> weights;  // in x out
  std::vector<Eigen::VectorXd> biases;
  std::vector<Eigen::VectorXd> bn_gamma;
  std::vector<Eigen::VectorXd> bn_beta;
  Eigen::VectorXd output;  // last width x 1, no bias

  NetParams zeros_like() const {
    NetParams z = *this;
    for (auto& m : z.weights) m.setZero();
    for (auto& v : z.biases) v.setZero();
    for (auto& v : z.bn_gamma) v.setZero();
    for (auto& v : z.bn_beta) v.setZero();
    z.output.setZero();
    return z;
  }

  /// Flat views over every tensor, in a fixed order.
  template <class Self>
  static auto tensors_of(Self& self) {
    using T = std::conditional_t<std::is_const_v<Self>, const double, double>;
    std::vector<std::span<T>> out;
    for (std::size_t l = 0; l < self.weights.size(); ++l) {
      out.emplace_back(self.weights[l].data(), static_cast<std::size_t>(self.weights[l].size()));
      out.emplace_back(self.biases[l].data(), static_cast<std::size_t>(self.biases[l].size()));
      if (l < self.bn_gamma.size()) {
        out.emplace_back(self.bn_gamma[l].data(), static_cast<std::size_t>(self.bn_gamma[l].size()));
        out.emplace_back(self.bn_beta[l].data(), static_cast<std::size_t>(self.bn_beta[l].size()));
      }
    }
    out.emplace_back(self.output.data(), static_cast<std::size_t>(self.output.size()));
    return out;
  }
  std::vector<std::span<double>> tensors() { return tensors_of(*this); }
  std::vector<std::span<const double>> tensors() const { return tensors_of(*this); }
};

struct NeuralCoxModel {
  NetConfig config;
  std::vector<std::string> feature_names;
  std::vector<ColumnScaling> scaling;  // input standardization
  NetParams params;
  std::vector<Eigen::VectorXd> running_mean;
  std::vector<Eigen::VectorXd> running_var;
  double output_offset = 0.0;  // training-set mean log-risk, subtracted at inference

  std::size_t input_dim() const { return feature_names.size(); }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kLeakySlope = 0.01;

namespace nn_detail {

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::LeakyRelu: return z > 0.0 ? z : kLeakySlope * z;
    case Activation::Selu: return z > 0.0 ? kSeluLambda * z : kSeluLambda * kSeluAlpha * std::expm1(z);
    case Activation::Identity: break;
  }
  return z;
}

inline double activate_grad(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::LeakyRelu: return z > 0.0 ? 1.0 : kLeakySlope;
    case Activation::Selu: return z > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(z);
    case Activation::Identity: break;
  }
  return 1.0;
}

}  // namespace nn_detail

/// Variance-scaled initialization by fan-in (gain 2 for rectifiers, 1
/// otherwise), zero biases, identity batch norm.
inline NeuralCoxModel init_network(std::size_t input_dim, const NetConfig& config,
                                   std::uint64_t seed) {
  validate(config);
  NeuralCoxModel m;
  m.config = config;
  Rng rng = derive_rng(seed, 0x1417);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double gain =
      config.activation == Activation::Relu || config.activation == Activation::LeakyRelu ? 2.0 : 1.0;
  auto fill = [&](Eigen::MatrixXd& w) {
    const double sd = std::sqrt(gain / static_cast<double>(w.rows()));
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = sd * normal(rng);
  };
  Eigen::Index in = static_cast<Eigen::Index>(input_dim);
  for (int width : config.topology) {
    Eigen::MatrixXd w(in, width);
    fill(w);
    m.params.weights.push_back(std::move(w));
    m.params.biases.push_back(Eigen::VectorXd::Zero(width));
    if (config.batch_norm) {
      m.params.bn_gamma.push_back(Eigen::VectorXd::Ones(width));
      m.params.bn_beta.push_back(Eigen::VectorXd::Zero(width));
      m.running_mean.push_back(Eigen::VectorXd::Zero(width));
      m.running_var.push_back(Eigen::VectorXd::Ones(width));
    }
    in = width;
  }
  Eigen::MatrixXd out(in, 1);
  fill(out);
  m.params.output = out.col(0);
  return m;
}

/// Cox loss over one batch: negative log partial likelihood (Breslow ties,
/// risk sets restricted to the batch) divided by the number of events, and
/// its gradient with respect to every log-risk output.
struct CoxBatchLoss {
  double value = 0.0;
  Eigen::VectorXd grad;
  std::size_t events = 0;
};

inline CoxBatchLoss cox_batch_loss(const Eigen::VectorXd& eta, std::span<const double> times,
                                   std::span<const std::uint8_t> events) {
  const auto n = static_cast<std::size_t>(eta.size());
  CoxBatchLoss out;
  out.grad = Eigen::VectorXd::Zero(eta.size());
  out.events = static_cast<std::size_t>(std::count(events.begin(), events.end(), 1));
  if (out.events == 0) return out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });
  const double shift = eta.maxCoeff();
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(eta[static_cast<Eigen::Index>(i)] - shift);

  struct Run {
    std::size_t begin, end;
    double increment;
  };
  std::vector<Run> runs;
  double s0 = 0.0;
  for (std::size_t k = 0; k < n;) {
    std::size_t e = k, d = 0;
    for (; e < n && times[order[e]] == times[order[k]]; ++e) s0 += w[order[e]], d += events[order[e]];
    for (std::size_t m = k; m < e; ++m)
      if (events[order[m]]) out.value -= eta[static_cast<Eigen::Index>(order[m])];
    if (d > 0) out.value += static_cast<double>(d) * (std::log(s0) + shift);
    runs.push_back({k, e, d > 0 ? static_cast<double>(d) / s0 : 0.0});
    k = e;
  }
  double acc = 0.0;
  for (std::size_t r = runs.size(); r-- > 0;) {
    acc += runs[r].increment;
    for (std::size_t m = runs[r].begin; m < runs[r].end; ++m) {
      const std::size_t i = order[m];
      out.grad[static_cast<Eigen::Index>(i)] = w[i] * acc - (events[i] ? 1.0 : 0.0);
    }
  }
  const double scale = 1.0 / static_cast<double>(out.events);
  out.value *= scale;
  out.grad *= scale;
  return out;
}

struct BatchResult {
  double loss = 0.0;  // Cox loss + weight-decay penalty
  std::size_t events = 0;
  NetParams grad;
};

/// Training-mode forward and backward pass over one batch. Dropout masks are
/// drawn from `dropout_rng` in a fixed order; batch norm uses batch
/// statistics and updates the running estimates when `update_running` is set.
inline BatchResult train_step_gradient(NeuralCoxModel& model, const Eigen::MatrixXd& x,
                                       std::span<const double> times,
                                       std::span<const std::uint8_t> events, Rng& dropout_rng,
                                       bool update_running) {
  const auto& cfg = model.config;
  const auto layers = model.params.weights.size();
  const auto batch = x.rows();
  std::vector<Eigen::MatrixXd> inputs(layers + 1), pre(layers), xhat(layers), masks(layers);
  std::vector<Eigen::RowVectorXd> inv_std(layers);
  inputs[0] = x;
  std::bernoulli_distribution keep(1.0 - cfg.dropout);
  for (std::size_t l = 0; l < layers; ++l) {
    pre[l] = inputs[l] * model.params.weights[l];
    pre[l].rowwise() += model.params.biases[l].transpose();
    Eigen::MatrixXd h = pre[l].unaryExpr([&](double z) { return nn_detail::activate(cfg.activation, z); });
    if (cfg.batch_norm) {
      const Eigen::RowVectorXd mean = h.colwise().mean();
      const Eigen::MatrixXd centered = h.rowwise() - mean;
      const Eigen::RowVectorXd var = centered.colwise().squaredNorm() / static_cast<double>(batch);
      inv_std[l] = (var.array() + kBatchNormEps).rsqrt().matrix();
      xhat[l] = centered.array().rowwise() * inv_std[l].array();
      h = (xhat[l].array().rowwise() * model.params.bn_gamma[l].transpose().array()).rowwise() +
          model.params.bn_beta[l].transpose().array();
      if (update_running) {
        const double unbias = batch > 1 ? static_cast<double>(batch) / static_cast<double>(batch - 1) : 1.0;
        model.running_mean[l] = (1.0 - kBatchNormMomentum) * model.running_mean[l] +
                                kBatchNormMomentum * mean.transpose();
        model.running_var[l] = (1.0 - kBatchNormMomentum) * model.running_var[l] +
                               kBatchNormMomentum * unbias * var.transpose();
      }
    }
    if (cfg.dropout > 0.0) {
      masks[l].resize(h.rows(), h.cols());
      const double inv_keep = 1.0 / (1.0 - cfg.dropout);
      for (Eigen::Index k = 0; k < masks[l].size(); ++k)
        masks[l].data()[k] = keep(dropout_rng) ? inv_keep : 0.0;
      h.array() *= masks[l].array();
    }
    inputs[l + 1] = std::move(h);
  }
  const Eigen::VectorXd eta = inputs[layers] * model.params.output;
  const CoxBatchLoss loss = cox_batch_loss(eta, times, events);

  BatchResult r;
  r.events = loss.events;
  r.loss = loss.value;
  r.grad = model.params.zeros_like();
  r.grad.output = inputs[layers].transpose() * loss.grad;
  Eigen::MatrixXd upstream = loss.grad * model.params.output.transpose();  // batch x width
  for (std::size_t l = layers; l-- > 0;) {
    if (cfg.dropout > 0.0) upstream.array() *= masks[l].array();
    if (cfg.batch_norm) {
      r.grad.bn_gamma[l] = (upstream.array() * xhat[l].array()).colwise().sum().transpose();
      r.grad.bn_beta[l] = upstream.colwise().sum().transpose();
      const Eigen::MatrixXd dxhat = upstream.array().rowwise() * model.params.bn_gamma[l].transpose().array();
      const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
      const Eigen::RowVectorXd sum_dx = (dxhat.array() * xhat[l].array()).colwise().sum();
      const double b = static_cast<double>(batch);
      Eigen::MatrixXd t = (dxhat * b).rowwise() - sum_d;
      t -= (xhat[l].array().rowwise() * sum_dx.array()).matrix();
      upstream = (t.array().rowwise() * inv_std[l].array()) / b;
    }
    upstream.array() *= pre[l].unaryExpr([&](double z) { return nn_detail::activate_grad(cfg.activation, z); }).array();
    r.grad.weights[l] = inputs[l].transpose() * upstream;
    r.grad.biases[l] = upstream.colwise().sum().transpose();
    if (l > 0) upstream = upstream * model.params.weights[l].transpose();
  }

  if (cfg.weight_decay > 0.0) {
    auto params = model.params.tensors();
    auto grads = r.grad.tensors();
    double sq = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t)
      for (std::size_t k = 0; k < params[t].size(); ++k) {
        sq += params[t][k] * params[t][k];
        grads[t][k] += cfg.weight_decay * params[t][k];
      }
    r.loss += 0.5 * cfg.weight_decay * sq;
  }
  return r;
}

/// Evaluation-mode log-risk for a batch of standardized rows (dropout off,
/// batch norm from running statistics, training offset removed).
inline Eigen::VectorXd forward(const NeuralCoxModel& model, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != model.input_dim())
    throw UsageError("input has " + std::to_string(x.cols()) + " columns, network expects " +
                     std::to_string(model.input_dim()));
  const auto& cfg = model.config;
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < model.params.weights.size(); ++l) {
    Eigen::MatrixXd z = h * model.params.weights[l];
    z.rowwise() += model.params.biases[l].transpose();
    h = z.unaryExpr([&](double v) { return nn_detail::activate(cfg.activation, v); });
    if (cfg.batch_norm) {
      const Eigen::ArrayXd scale =
          model.params.bn_gamma[l].array() / (model.running_var[l].array() + kBatchNormEps).sqrt();
      const Eigen::ArrayXd shift = model.params.bn_beta[l].array() - model.running_mean[l].array() * scale;
      h = (h.array().rowwise() * scale.transpose()).rowwise() + shift.transpose();
    }
  }
  Eigen::VectorXd out = h * model.params.output;
  out.array() -= model.output_offset;
  return out;
}

inline double forward(const NeuralCoxModel& model, std::span<const double> x) {
  Eigen::MatrixXd row(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) row(0, static_cast<Eigen::Index>(j)) = x[j];
  return forward(model, row)[0];
}

/// Rows of `cohort` re-expressed in the network's input standardization.
inline Eigen::MatrixXd network_inputs(const NeuralCoxModel& model, const EncodedCohort& cohort) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(cohort.rows()), static_cast<Eigen::Index>(model.input_dim()));
  for (std::size_t j = 0; j < model.input_dim(); ++j) {
    const auto idx = cohort.column_index(model.feature_names[j]);
    if (!idx) throw UsageError("cohort lacks network input " + model.feature_names[j]);
    const auto& src = cohort.scaling[*idx];
    const auto& dst = model.scaling[j];
    x.col(static_cast<Eigen::Index>(j)) =
        ((cohort.matrix.col(static_cast<Eigen::Index>(*idx)).array() * src.scale + src.center) - dst.center) /
        dst.scale;
  }
  return x;
}

inline std::vector<double> predict_log_risk(const NeuralCoxModel& model, const EncodedCohort& cohort) {
  const Eigen::VectorXd out = forward(model, network_inputs(model, cohort));
  return {out.data(), out.data() + out.size()};
}

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;  // mean training loss over non-skipped batches
  std::size_t skipped_batches = 0;
};

struct TrainResult {
  NeuralCoxModel model;
  std::vector<EpochStats> trace;
  std::size_t skipped_batches = 0;
};

/// Minibatch training with per-epoch shuffles drawn from the config seed.
/// Batches without an event carry no partial-likelihood information and are
/// skipped (and counted).
inline TrainResult train(const EncodedCohort& cohort, const NetConfig& config) {
  validate(config);
  if (cohort.rows() == 0) throw DataError("cannot train on an empty cohort");
  TrainResult out;
  out.model = init_network(cohort.cols(), config, config.seed);
  NeuralCoxModel& model = out.model;
  model.feature_names = cohort.feature_names;
  model.scaling = cohort.scaling;

  const std::size_t n = cohort.rows();
  const std::size_t batch = config.batch_size == 0 ? n : std::min(config.batch_size, n);
  auto params = model.params.tensors();
  std::vector<std::vector<double>> m1, m2;
  for (const auto& t : params) {
    m1.emplace_back(t.size(), 0.0);
    m2.emplace_back(t.size(), 0.0);
  }
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t step = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng dropout_rng = derive_rng(config.seed, 0xD809);
  std::size_t used_batches = 0;
  Eigen::MatrixXd xb;
  std::vector<double> tb;
  std::vector<std::uint8_t> eb;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (batch < n) {
      Rng shuffle_rng = derive_rng(config.seed, 0x5000 + static_cast<std::uint64_t>(epoch));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
    }
    EpochStats stats;
    stats.epoch = epoch;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const auto rows = static_cast<Eigen::Index>(end - start);
      xb.resize(rows, cohort.matrix.cols());
      tb.resize(end - start);
      eb.resize(end - start);
      for (std::size_t k = start; k < end; ++k) {
        xb.row(static_cast<Eigen::Index>(k - start)) = cohort.matrix.row(static_cast<Eigen::Index>(order[k]));
        tb[k - start] = cohort.times[order[k]];
        eb[k - start] = cohort.events[order[k]];
      }
      if (std::find(eb.begin(), eb.end(), std::uint8_t{1}) == eb.end()) {
        ++stats.skipped_batches;
        continue;
      }
      BatchResult r = train_step_gradient(model, xb, tb, eb, dropout_rng, true);
      stats.loss += r.loss;
      ++counted;
      ++step;
      auto grads = r.grad.tensors();
      const double lr = config.learning_rate;
      for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t k = 0; k < params[t].size(); ++k) {
          const double g = grads[t][k];
          if (config.optimizer == Optimizer::Adam) {
            m1[t][k] = beta1 * m1[t][k] + (1.0 - beta1) * g;
            m2[t][k] = beta2 * m2[t][k] + (1.0 - beta2) * g * g;
            const double mhat = m1[t][k] / (1.0 - std::pow(beta1, static_cast<double>(step)));
            const double vhat = m2[t][k] / (1.0 - std::pow(beta2, static_cast<double>(step)));
            params[t][k] -= lr * mhat / (std::sqrt(vhat) + adam_eps);
          } else {
            m1[t][k] = config.momentum * m1[t][k] + g;
            params[t][k] -= lr * m1[t][k];
          }
        }
      }
    }
    used_batches += counted;
    out.skipped_batches += stats.skipped_batches;
    stats.loss = counted > 0 ? stats.loss / static_cast<double>(counted) : 0.0;
    out.trace.push_back(stats);
  }
  if (config.epochs > 0 && used_batches == 0)
    throw DataError("every training batch lacked events; increase the batch size");

  // Centre the exported log-risk on the training set.
  model.output_offset = 0.0;
  const Eigen::VectorXd train_out = forward(model, cohort.matrix);
  model.output_offset = train_out.mean();
  return out;
}

// ---------------------------------------------------------------------------
// Hyperparameter search

struct Range {
  double low = 0.0;
  double high = 0.0;
};

struct SearchSpace {
  std::vector<Activation> activations;
  std::vector<std::vector<int>> topologies;
  Range dropout;
  Range weight_decay;
  std::vector<bool> batch_norm;
  std::vector<Optimizer> optimizers;
  Range momentum;
  Range learning_rate;  // sampled log-uniformly
  std::size_t batch_size = 1024;
  int epochs = 50;
};

inline SearchSpace default_search_space() {
  SearchSpace s;
  s.activations = {Activation::LeakyRelu, Activation::Relu, Activation::Selu};
  s.topologies = {{8}, {32}, {256}, {32, 32}, {64, 64}, {128, 128}, {64, 16}, {256, 32}, {32, 32, 32}, {64, 64, 64}};
  s.dropout = {0.0, 0.9};
  s.weight_decay = {0.0, 20.0};
  s.batch_norm = {true, false};
  s.optimizers = {Optimizer::SgdMomentum, Optimizer::Adam};
  s.momentum = {0.0, 1.0};
  s.learning_rate = {1e-5, 1.0};
  return s;
}

struct TrialRecord {
  std::size_t trial = 0;
  NetConfig config;
  double validation_c_index = 0.0;
  bool failed = false;
  std::string error;
};

struct SearchResult {
  NetConfig best;
  double best_c_index = 0.0;
  std::vector<TrialRecord> ledger;
};

/// Random search: each trial draws a config from the space with its own
/// stream, trains on a stratified 80% of the cohort and is scored by
/// c-index on the remaining 20%.
inline SearchResult hyperparameter_search(const EncodedCohort& cohort, const SearchSpace& space,
                                          std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw UsageError("hyperparameter search needs at least one trial");
  if (space.activations.empty() || space.topologies.empty() || space.batch_norm.empty() ||
      space.optimizers.empty())
    throw UsageError("search space has an empty choice list");
  if (!(space.learning_rate.low > 0.0) || space.learning_rate.high < space.learning_rate.low)
    throw UsageError("learning-rate range must be positive and ordered");
  const auto [train_part, valid_part] = stratified_split(cohort, 0.2, seed);

  SearchResult out;
  bool have_best = false;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = derive_rng(seed, 0x7000 + t);
    auto pick = [&](const auto& v) {
      std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
      return v[d(rng)];
    };
    auto uniform = [&](Range r) { return r.low + (r.high - r.low) * uniform_open(rng); };
    NetConfig c;
    c.activation = pick(space.activations);
    c.topology = pick(space.topologies);
    c.dropout = std::min(uniform(space.dropout), 0.999);
    c.weight_decay = uniform(space.weight_decay);
    c.batch_norm = pick(space.batch_norm);
    c.optimizer = pick(space.optimizers);
    c.momentum = uniform(space.momentum);
    c.learning_rate = std::exp(uniform({std::log(space.learning_rate.low), std::log(space.learning_rate.high)}));
    if (space.learning_rate.low == space.learning_rate.high) c.learning_rate = space.learning_rate.low;
    if (space.dropout.low == space.dropout.high) c.dropout = space.dropout.low;
    if (space.weight_decay.low == space.weight_decay.high) c.weight_decay = space.weight_decay.low;
    if (space.momentum.low == space.momentum.high) c.momentum = space.momentum.low;
    c.batch_size = space.batch_size;
    c.epochs = space.epochs;
    c.seed = derive_rng(seed, 0x8000 + t)();

    TrialRecord rec;
    rec.trial = t;
    rec.config = c;
    try {
      const TrainResult trained = train(train_part, c);
      const auto scores = predict_log_risk(trained.model, valid_part);
      for (double s : scores)
        if (!std::isfinite(s)) throw NumericError("non-finite validation output");
      rec.validation_c_index = concordance_index(valid_part.times, valid_part.events, scores);
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
    }
    if (!rec.failed && (!have_best || rec.validation_c_index > out.best_c_index)) {
      out.best = c;
      out.best_c_index = rec.validation_c_index;
      have_best = true;
    }
    out.ledger.push_back(std::move(rec));
  }
  if (!have_best) throw NumericError("every hyperparameter trial failed");
  return out;
}

inline nlohmann::json to_json(const TrialRecord& r) {
  nlohmann::json j = {{"trial", r.trial}, {"config", to_json(r.config)}, {"failed", r.failed}};
  if (r.failed)
    j["error"] = r.error;
  else
    j["validation_c_index"] = r.validation_c_index;
  return j;
}

// ---------------------------------------------------------------------------
// Weights container

/// Binary layout (all integers and floats little-endian):
///   8 bytes  magic "T2DNNCOX"
///   u32      format version (1)
///   u32      byte-order marker 0x01020304 as written by the producer
///   u64      header length H, then H bytes of UTF-8 JSON header
///   tensors  in header order, each rows*cols f64 values, row-major
inline constexpr char kWeightsMagic[8] = {'T', '2', 'D', 'N', 'N', 'C', 'O', 'X'};
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace nn_detail {

template <class T>
void put_le(std::ostream& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U u = std::bit_cast<U>(v);
  unsigned char b[sizeof(U)];
  for (std::size_t k = 0; k < sizeof(U); ++k) b[k] = static_cast<unsigned char>(u >> (8 * k));
  out.write(reinterpret_cast<const char*>(b), sizeof b);
}

template <class T>
T get_le(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof b)) throw DataError("truncated weights file");
  U u = 0;
  for (std::size_t k = 0; k < sizeof(U); ++k) u |= static_cast<U>(b[k]) << (8 * k);
  return std::bit_cast<T>(u);
}

struct TensorRef {
  std::string name;
  Eigen::Index rows, cols;
  double* data;  // column-major storage
};

inline std::vector<TensorRef> tensor_refs(NeuralCoxModel& m) {
  std::vector<TensorRef> out;
  for (std::size_t l = 0; l < m.params.weights.size(); ++l) {
    const auto s = std::to_string(l);
    auto& w = m.params.weights[l];
    out.push_back({"hidden." + s + ".weight", w.rows(), w.cols(), w.data()});
    out.push_back({"hidden." + s + ".bias", 1, m.params.biases[l].size(), m.params.biases[l].data()});
    if (m.config.batch_norm) {
      out.push_back({"bn." + s + ".gamma", 1, m.params.bn_gamma[l].size(), m.params.bn_gamma[l].data()});
      out.push_back({"bn." + s + ".beta", 1, m.params.bn_beta[l].size(), m.params.bn_beta[l].data()});
      out.push_back({"bn." + s + ".running_mean", 1, m.running_mean[l].size(), m.running_mean[l].data()});
      out.push_back({"bn." + s + ".running_var", 1, m.running_var[l].size(), m.running_var[l].data()});
    }
  }
  out.push_back({"output.weight", m.params.output.size(), 1, m.params.output.data()});
  return out;
}

}  // namespace nn_detail

inline void save_weights(std::ostream& out, const NeuralCoxModel& model) {
  NeuralCoxModel copy = model;
  const auto refs = nn_detail::tensor_refs(copy);
  nlohmann::json header;
  header["config"] = to_json(model.config);
  header["feature_names"] = model.feature_names;
  nlohmann::json scaling = nlohmann::json::array();
  for (const auto& s : model.scaling) scaling.push_back({s.center, s.scale});
  header["scaling"] = scaling;
  header["output_offset"] = model.output_offset;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& r : refs) tensors.push_back({{"name", r.name}, {"shape", {r.rows, r.cols}}});
  header["tensors"] = tensors;
  const std::string text = header.dump();

  out.write(kWeightsMagic, sizeof kWeightsMagic);
  nn_detail::put_le<std::uint32_t>(out, kWeightsVersion);
  nn_detail::put_le<std::uint32_t>(out, 0x01020304u);
  nn_detail::put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& r : refs)
    for (Eigen::Index i = 0; i < r.rows; ++i)
      for (Eigen::Index j = 0; j < r.cols; ++j) nn_detail::put_le<double>(out, r.data[j * r.rows + i]);
}

inline NeuralCoxModel load_weights(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kWeightsMagic, 8) != 0)
    throw DataError("not a network weights file");
  if (nn_detail::get_le<std::uint32_t>(in) != kWeightsVersion) throw DataError("unsupported weights version");
  if (nn_detail::get_le<std::uint32_t>(in) != 0x01020304u) throw DataError("byte-order marker mismatch");
  const auto len = nn_detail::get_le<std::uint64_t>(in);
  if (len > (std::uint64_t{1} << 30)) throw DataError("implausible weights header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw DataError("truncated weights header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt weights header: ") + e.what());
  }
  const NetConfig config = net_config_from_json(header.at("config"));
  const auto names = header.at("feature_names").get<std::vector<std::string>>();
  NeuralCoxModel model = init_network(names.size(), config, 0);
  model.feature_names = names;
  for (const auto& s : header.at("scaling")) model.scaling.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
  model.output_offset = header.at("output_offset").get<double>();
  const auto refs = nn_detail::tensor_refs(model);
  const auto& listed = header.at("tensors");
  if (listed.size() != refs.size()) throw DataError("tensor count does not match the network shape");
  for (std::size_t t = 0; t < refs.size(); ++t) {
    const auto& r = refs[t];
    if (listed[t].at("name").get<std::string>() != r.name ||
        listed[t].at("shape").at(0).get<Eigen::Index>() != r.rows ||
        listed[t].at("shape").at(1).get<Eigen::Index>() != r.cols)
      throw DataError("tensor " + r.name + " has unexpected name or shape");
    for (Eigen::Index i = 0; i < r.rows; ++i)
      for (Eigen::Index j = 0; j < r.cols; ++j) r.data[j * r.rows + i] = nn_detail::get_le<double>(in);
  }
  return model;
}

inline void save_weights(const std::string& path, const NeuralCoxModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  save_weights(out, model);
}

inline NeuralCoxModel load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return load_weights(in);
}

}  // namespace t2drisk
