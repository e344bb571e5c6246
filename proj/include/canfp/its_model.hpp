#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canfp/channels.hpp"
#include "canfp/nn.hpp"
#include "canfp/sampling.hpp"
#include "canfp/training.hpp"

namespace canfp {

inline constexpr int kModelFormatVersion = 1;

struct Head {
  HeadKind kind = HeadKind::binary;
  std::size_t classes = 2;

  std::size_t outputs() const { return kind == HeadKind::binary ? 1 : classes; }
  static Head binary() { return {HeadKind::binary, 2}; }
  static Head multiclass(std::size_t c) { return {HeadKind::multiclass, c}; }
  bool operator==(const Head&) const = default;
};

/// Hyperparameters of the per-channel classifier. Durations are in seconds
/// and get converted to points at the channel's rate.
struct ItsConfig {
  double seg_len_s = 3.0;
  double kernel_s = 0.5;
  double conv_stride_s = 0.05;
  std::size_t filters1 = 20;
  std::size_t filters2 = 40;
  std::size_t pool = 5;
  std::size_t fc_units = 64;
  std::size_t lstm_hidden = 16;
  double dropout_rate = 0.25;
  Head head;
};

/// Point-level layer sizes for one channel rate.
struct ItsGeometry {
  double rate_hz = 0.0;
  std::size_t seg_points = 0;
  std::size_t conv1_kernel = 0;
  std::size_t conv1_stride = 0;
  std::size_t conv1_len = 0;
  std::size_t pooled_len = 0;
  std::size_t conv2_kernel = 0;
  std::size_t conv2_stride = 0;
  std::size_t conv2_len = 0;
  std::size_t flat_features = 0;
};

/// Throws config_infeasible when a layer would shrink below one point.
ItsGeometry its_geometry(const ItsConfig& cfg, double rate_hz);

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs_run = 0;
  double val_accuracy = 0.0;
};

/// Individual time series classifier: one shared CNN per segment, an LSTM
/// over the segment features, attention pooling, a tanh dense layer and the
/// output head.
class ItsModel {
 public:
  ItsModel(const ItsConfig& cfg, ChannelId channel, double rate_hz, double sample_duration_s, std::uint64_t seed);

  const ItsConfig& config() const { return cfg_; }
  const ItsGeometry& geometry() const { return geo_; }
  ChannelId channel() const { return channel_; }
  double rate_hz() const { return geo_.rate_hz; }
  double sample_duration_s() const { return duration_s_; }
  std::size_t segments() const { return k_; }
  Shape input_shape(std::size_t batch) const { return {batch, k_, geo_.seg_points}; }

  /// x [B, k, seg_points] -> class probabilities [B, outputs].
  Tensor forward(const Tensor& x, Mode mode);
  /// Output of the post-attention tanh layer, [B, fc_units].
  Tensor features(const Tensor& x, Mode mode);
  /// Per-segment CNN representation [B, k, fc_units] (no dropout).
  Tensor segment_features(const Tensor& x, Mode mode);

  const Tensor& logits() const { return logits_; }
  const Tensor& attention_weights() const { return attention_.weights(); }

  /// Backpropagates the gradient of the loss w.r.t. the logits of the last
  /// forward call, accumulating into every parameter's grad.
  void backward(const Tensor& d_logits);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  nlohmann::json to_json() const;
  static ItsModel from_json(const nlohmann::json& j);
  /// Canonical compact JSON text.
  std::string serialize() const;

  TrainingMeta meta;

 private:
  Tensor cnn_forward(const Tensor& x, Mode mode);  // [B*k, fc]
  Tensor cnn_backward(const Tensor& d);

  ItsConfig cfg_;
  ItsGeometry geo_;
  ChannelId channel_;
  double duration_s_ = 0.0;
  std::size_t k_ = 0;

  Conv1d conv1_;
  Relu relu1_;
  MaxPool1d pool_;
  Conv1d conv2_;
  Relu relu2_;
  BatchNorm1d bn_;
  Dense cnn_fc_;
  Dropout cnn_drop_;
  Lstm lstm_;
  Attention attention_;
  Dense fc_;
  Dropout fc_drop_;
  Dense head_;

  std::size_t batch_ = 0;
  Tensor features_;
  Tensor logits_;
};

/// Windows of one channel across all drivers.
struct ChannelData {
  const std::vector<DriverSeries>* drivers = nullptr;
  ChannelId channel;
  double duration_s = 0.0;
  double seg_len_s = 0.0;

  double rate_hz() const;
  /// [B, k, seg_points] for the given samples; throws missing_channel.
  Tensor batch(std::span<const SampleRef> refs) const;
};

/// Probabilities for `refs`, evaluated in inference mode in chunks.
Tensor predict(ItsModel& model, const ChannelData& data, std::span<const SampleRef> refs,
               std::size_t batch_size = 128);

/// Trains with RMSprop and early stopping on validation accuracy, keeping
/// the best snapshot. Labels come from the refs.
FitResult train_its(ItsModel& model, const ChannelData& data, const std::vector<SampleRef>& train,
                    const std::vector<SampleRef>& validation, const TrainConfig& cfg);

nlohmann::json to_json(const ItsConfig& cfg);
ItsConfig its_config_from_json(const nlohmann::json& j, ItsConfig defaults = {});
nlohmann::json to_json(const Head& h);
Head head_from_json(const nlohmann::json& j);
nlohmann::json tensor_to_json(const std::string& name, const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace canfp
