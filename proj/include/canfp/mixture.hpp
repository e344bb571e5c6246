#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "canfp/its_model.hpp"

namespace canfp {

struct RankEntry {
  ChannelId channel;
  double val_accuracy = 0.0;
};

/// Descending by validation accuracy, ties by channel id ascending.
std::vector<RankEntry> rank_experts(std::vector<RankEntry> entries);
std::vector<RankEntry> rank_experts(const std::vector<ItsModel>& models);
/// The first min(k, size) channels of a ranking.
std::vector<ChannelId> top_k(const std::vector<RankEntry>& ranking, std::size_t k);

/// An ITS model without its output head, always run in inference mode.
/// Holds its own copy, so the source model is never touched.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(const ItsModel& model) : model_(model) {}

  /// [B, k, seg] -> [B, fc_units].
  Tensor operator()(const Tensor& x) { return model_.features(x, Mode::infer); }
  std::size_t output_size() const { return model_.config().fc_units; }
  const ItsModel& model() const { return model_; }

 private:
  ItsModel model_;
};

FeatureExtractor strip_head(const ItsModel& model);

/// Ordered frozen experts sharing one sample duration and segment length.
class ExpertBundle {
 public:
  /// Throws inconsistent_experts for an empty list, mismatched segmentation
  /// or feature widths, or a repeated channel.
  explicit ExpertBundle(const std::vector<ItsModel>& experts);

  std::size_t size() const { return experts_.size(); }
  std::size_t feature_size() const { return feature_size_; }
  std::size_t width() const { return feature_size_ * experts_.size(); }
  double sample_duration_s() const { return duration_s_; }
  double seg_len_s() const { return seg_len_s_; }
  std::vector<ChannelId> channels() const;
  const ItsModel& expert(std::size_t i) const { return experts_[i].model(); }

  /// Concatenated features [B, K * fc_units] for the given samples.
  Tensor features(const std::vector<DriverSeries>& drivers, std::span<const SampleRef> refs,
                  std::size_t batch_size = 128);

 private:
  std::vector<FeatureExtractor> experts_;
  std::size_t feature_size_ = 0;
  double duration_s_ = 0.0;
  double seg_len_s_ = 0.0;
};

/// Concatenated expert features computed once for a pool of samples and
/// looked up by (driver, start time). Labels are not part of the key.
class FeatureCache {
 public:
  FeatureCache(ExpertBundle& bundle, const std::vector<DriverSeries>& drivers, std::span<const SampleRef> refs,
               std::size_t batch_size = 128);

  std::size_t width() const { return width_; }
  std::size_t rows() const { return index_.size(); }
  bool contains(const SampleRef& ref) const;
  /// Throws invalid_argument for a sample that was never cached.
  Tensor gather(std::span<const SampleRef> refs) const;

 private:
  std::size_t width_ = 0;
  std::map<std::pair<std::size_t, std::int64_t>, std::size_t> index_;
  std::vector<double> values_;
};

struct MixtureConfig {
  std::size_t k = 10;
  double dropout_rate = 0.25;
};

/// A single trainable dense layer from concatenated expert features to
/// class scores. The experts themselves live outside the model.
class MixtureModel {
 public:
  MixtureModel(std::vector<ChannelId> experts, std::size_t feature_size, Head head, double dropout_rate,
               std::uint64_t seed);

  const std::vector<ChannelId>& experts() const { return experts_; }
  std::size_t feature_size() const { return feature_size_; }
  std::size_t input_size() const { return feature_size_ * experts_.size(); }
  const Head& head() const { return head_; }
  double dropout_rate() const { return dropout_.rate(); }

  /// features [B, K * fc_units] -> probabilities [B, outputs].
  Tensor forward(const Tensor& features, Mode mode);
  const Tensor& logits() const { return logits_; }
  void backward(const Tensor& d_logits);

  std::vector<Parameter*> parameters() { return {&layer_.weight, &layer_.bias}; }
  const Dense& layer() const { return layer_; }
  void zero_grad();

  TrainingMeta meta;

  /// `expert_refs` holds one {file, sha256} object per expert, in order.
  nlohmann::json to_json(const nlohmann::json& expert_refs) const;
  static MixtureModel from_json(const nlohmann::json& j);

 private:
  std::vector<ChannelId> experts_;
  std::size_t feature_size_ = 0;
  Head head_;
  Dropout dropout_;
  Dense layer_;
  Tensor logits_;
};

/// Builds an untrained mixture over the bundle's experts; throws
/// inconsistent_experts when the head cannot be formed.
MixtureModel build_mixture(const ExpertBundle& bundle, Head head, double dropout_rate, std::uint64_t seed);

/// Probabilities for cached samples in inference mode.
Tensor predict(MixtureModel& model, const FeatureCache& cache, std::span<const SampleRef> refs);

/// Trains only the mixture layer on cached expert features.
FitResult train_mixture(MixtureModel& model, const FeatureCache& cache, const std::vector<SampleRef>& train,
                        const std::vector<SampleRef>& validation, const TrainConfig& cfg);

/// Same, computing expert features on the fly; throws missing_channel when
/// a driver lacks one of the expert channels.
FitResult train_mixture(MixtureModel& model, ExpertBundle& bundle, const std::vector<DriverSeries>& drivers,
                        const std::vector<SampleRef>& train, const std::vector<SampleRef>& validation,
                        const TrainConfig& cfg);

// ---- files ----------------------------------------------------------------

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// "its_00c4_0.json"
std::string expert_file_name(const ChannelId& id);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

void save_its(const ItsModel& model, const std::filesystem::path& path);
ItsModel load_its(const std::filesystem::path& path);

/// Writes the mixture next to its expert files, recording their hashes.
void save_mixture(const MixtureModel& model, const std::filesystem::path& path);

struct LoadedMixture {
  MixtureModel model;
  std::vector<ItsModel> experts;
};

/// Loads the mixture and every referenced expert, verifying content hashes
/// (hash_mismatch on any difference).
LoadedMixture load_mixture(const std::filesystem::path& path);

}  // namespace canfp
