#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "canfp/tensor.hpp"

namespace canfp {

enum class Mode { train, infer };
enum class Activation { none, relu, tanh, sigmoid };
enum class HeadKind { binary, multiclass };

using Rng = std::mt19937_64;

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// ---- single-series convolution -------------------------------------------

/// out[i] = sum_j f[n-1-j] * T[i*stride + j] over valid positions, i.e. the
/// convolution of T with f evaluated without padding.
std::vector<double> conv1d(std::span<const double> series, std::span<const double> filter, std::size_t stride = 1);

struct Conv1dGrads {
  std::vector<double> d_series;
  std::vector<double> d_filter;
  double d_bias = 0.0;
};
Conv1dGrads conv1d_backward(std::span<const double> upstream, std::span<const double> series,
                            std::span<const double> filter, std::size_t stride = 1);

// ---- layers ---------------------------------------------------------------

/// Multi-channel version of conv1d: [N, Cin, L] -> [N, Cout, Lout] with
/// weight [Cout, Cin, K] and a per-filter bias.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride);

  static std::size_t output_length(std::size_t length, std::size_t kernel, std::size_t stride);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void init(Rng& rng);

  Parameter weight;
  Parameter bias;
  std::size_t stride = 1;

 private:
  Tensor x_;
};

class Relu {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  Tensor y_;
};

/// Non-overlapping max pooling over the last axis of [N, C, L]; a shorter
/// tail window is pooled too. Gradient flows to the first maximum.
class MaxPool1d {
 public:
  explicit MaxPool1d(std::size_t pool = 1) : pool_(pool) {}
  static std::size_t output_length(std::size_t length, std::size_t pool) { return (length + pool - 1) / pool; }

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;
  std::size_t pool() const { return pool_; }

 private:
  std::size_t pool_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Per-channel normalization over [N, C, L] (or [N, C]).
class BatchNorm1d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.9;

  BatchNorm1d() = default;
  BatchNorm1d(std::string name, std::size_t channels);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);

  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  Mode mode_ = Mode::infer;
  Shape shape_;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

/// y = act(x W^T + b), x [N, in], W [out, in].
class Dense {
 public:
  Dense() = default;
  Dense(std::string name, std::size_t in, std::size_t out, Activation act);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void init(Rng& rng);

  std::size_t in_features() const { return weight.value.dim(1); }
  std::size_t out_features() const { return weight.value.dim(0); }

  Parameter weight;
  Parameter bias;
  Activation act = Activation::none;

 private:
  Tensor x_;
  Tensor y_;
};

struct LstmState {
  std::vector<double> h;
  std::vector<double> c;
};

/// Gate layout in the stacked weights: input, forget, candidate, output.
class Lstm {
 public:
  Lstm() = default;
  Lstm(std::string name, std::size_t in, std::size_t hidden);

  /// One step: gates via sigmoid, candidate via tanh,
  /// c = f*c_prev + i*g, h = o*tanh(c).
  LstmState cell(std::span<const double> x, const LstmState& prev) const;

  /// [B, T, in] -> hidden states [B, T, H], zero initial state.
  Tensor forward(const Tensor& x);
  /// Takes the gradient for every hidden state, returns d input.
  Tensor backward(const Tensor& dh);
  void init(Rng& rng, double forget_bias = 1.0);

  std::size_t hidden() const { return hidden_; }
  std::size_t input_size() const { return in_; }

  Parameter w_input;
  Parameter w_recurrent;
  Parameter bias;

 private:
  std::size_t in_ = 0;
  std::size_t hidden_ = 0;
  Tensor x_;
  Tensor gates_;  // [B, T, 4H] post-activation
  Tensor cells_;  // [B, T, H]
  Tensor hiddens_;
};

/// u_i = tanh(w.h_i + b), alpha = softmax(u), a = sum alpha_i h_i.
class Attention {
 public:
  Attention() = default;
  Attention(std::string name, std::size_t hidden);

  Tensor forward(const Tensor& h);  // [B, T, H] -> [B, H]
  Tensor backward(const Tensor& da);
  void init(Rng& rng);

  const Tensor& weights() const { return alpha_; }  // [B, T]

  Parameter w;
  Parameter b;

 private:
  Tensor h_;
  Tensor u_;
  Tensor alpha_;
};

/// Inverted dropout with its own seeded stream.
class Dropout {
 public:
  Dropout() = default;
  Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {}

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy) const;
  double rate() const { return rate_; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

 private:
  double rate_ = 0.0;
  Rng rng_;
  std::vector<double> mask_;
  bool active_ = false;
};

Tensor dropout(const Tensor& x, double rate, Mode mode, std::uint64_t seed);

// ---- heads and losses -----------------------------------------------------

double sigmoid(double z);
std::vector<double> softmax(std::span<const double> z);

/// Row-wise head activation: sigmoid for [N,1] binary logits, softmax else.
Tensor head_probabilities(const Tensor& logits, HeadKind kind);

struct LossResult {
  double loss = 0.0;    // mean over the batch
  Tensor d_logits;      // gradient of the mean loss
};

/// Negative log-likelihood of probabilities clamped at 1e-12.
double cross_entropy(std::span<const double> probs, int label, HeadKind kind);
LossResult cross_entropy(const Tensor& logits, std::span<const int> labels, HeadKind kind);

/// Predicted class per row (threshold 0.5 for binary heads).
std::vector<int> predict_labels(const Tensor& probs, HeadKind kind);

// ---- optimizer ------------------------------------------------------------

struct OptimizerConfig {
  double learning_rate = 0.001;
  double rho = 0.9;
  double epsilon = 1e-7;
};

void validate(const OptimizerConfig& cfg);
void rmsprop_step(std::span<Parameter* const> params, const OptimizerConfig& cfg);

}  // namespace canfp
