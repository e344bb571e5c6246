#include "canfp/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "canfp/error.hpp"

namespace canfp {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<RankEntry> rank_experts(std::vector<RankEntry> entries) {
  std::stable_sort(entries.begin(), entries.end(), [](const RankEntry& a, const RankEntry& b) {
    if (a.val_accuracy != b.val_accuracy) return a.val_accuracy > b.val_accuracy;
    return a.channel < b.channel;
  });
  return entries;
}

std::vector<RankEntry> rank_experts(const std::vector<ItsModel>& models) {
  std::vector<RankEntry> entries;
  entries.reserve(models.size());
  for (const auto& m : models) entries.push_back({m.channel(), m.meta.val_accuracy});
  return rank_experts(std::move(entries));
}

std::vector<ChannelId> top_k(const std::vector<RankEntry>& ranking, std::size_t k) {
  std::vector<ChannelId> out;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) out.push_back(ranking[i].channel);
  return out;
}

FeatureExtractor strip_head(const ItsModel& model) { return FeatureExtractor(model); }

// ---- bundle and cache ------------------------------------------------------

ExpertBundle::ExpertBundle(const std::vector<ItsModel>& experts) {
  if (experts.empty()) throw Error(Errc::inconsistent_experts, "a mixture needs at least one expert");
  const auto& first = experts.front();
  duration_s_ = first.sample_duration_s();
  seg_len_s_ = first.config().seg_len_s;
  feature_size_ = first.config().fc_units;
  std::vector<ChannelId> seen;
  for (const auto& e : experts) {
    if (e.sample_duration_s() != duration_s_ || e.config().seg_len_s != seg_len_s_ ||
        e.config().fc_units != feature_size_) {
      throw Error(Errc::inconsistent_experts, "expert " + to_string(e.channel()) + " uses a different segmentation");
    }
    if (std::find(seen.begin(), seen.end(), e.channel()) != seen.end()) {
      throw Error(Errc::inconsistent_experts, "channel " + to_string(e.channel()) + " appears twice");
    }
    seen.push_back(e.channel());
    experts_.push_back(strip_head(e));
  }
}

std::vector<ChannelId> ExpertBundle::channels() const {
  std::vector<ChannelId> out;
  for (const auto& e : experts_) out.push_back(e.model().channel());
  return out;
}

Tensor ExpertBundle::features(const std::vector<DriverSeries>& drivers, std::span<const SampleRef> refs,
                              std::size_t batch_size) {
  const auto w = width();
  Tensor out({refs.size(), w});
  for (std::size_t e = 0; e < experts_.size(); ++e) {
    const ChannelData data{&drivers, experts_[e].model().channel(), duration_s_, seg_len_s_};
    for (std::size_t i = 0; i < refs.size(); i += batch_size) {
      const auto n = std::min(batch_size, refs.size() - i);
      const Tensor f = experts_[e](data.batch(refs.subspan(i, n)));
      for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(f.data() + r * feature_size_, feature_size_, out.data() + (i + r) * w + e * feature_size_);
      }
    }
  }
  return out;
}

FeatureCache::FeatureCache(ExpertBundle& bundle, const std::vector<DriverSeries>& drivers,
                           std::span<const SampleRef> refs, std::size_t batch_size)
    : width_(bundle.width()) {
  std::vector<SampleRef> unique;
  for (const auto& r : refs) {
    if (index_.emplace(std::pair{r.driver, r.t_start_us}, unique.size()).second) unique.push_back(r);
  }
  values_ = bundle.features(drivers, unique, batch_size).storage();
}

bool FeatureCache::contains(const SampleRef& ref) const { return index_.count({ref.driver, ref.t_start_us}) > 0; }

Tensor FeatureCache::gather(std::span<const SampleRef> refs) const {
  Tensor out({refs.size(), width_});
  for (std::size_t i = 0; i < refs.size(); ++i) {
    auto it = index_.find({refs[i].driver, refs[i].t_start_us});
    if (it == index_.end()) {
      throw Error(Errc::invalid_argument, "sample of driver " + std::to_string(refs[i].driver) + " at " +
                                              std::to_string(refs[i].t_start_us) + " us is not cached");
    }
    std::copy_n(values_.data() + it->second * width_, width_, out.data() + i * width_);
  }
  return out;
}

// ---- model -----------------------------------------------------------------

MixtureModel::MixtureModel(std::vector<ChannelId> experts, std::size_t feature_size, Head head, double dropout_rate,
                           std::uint64_t seed)
    : experts_(std::move(experts)),
      feature_size_(feature_size),
      head_(head),
      dropout_(dropout_rate, mix_seed(seed, 201)),
      layer_("mixture", feature_size_ * experts_.size(), head.outputs(), Activation::none) {
  if (experts_.empty() || feature_size_ == 0) throw Error(Errc::inconsistent_experts, "empty expert list");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error(Errc::config_infeasible, "dropout rate outside [0,1)");
  if (head.kind == HeadKind::multiclass && head.classes < 2) {
    throw Error(Errc::inconsistent_experts, "multiclass head needs at least two classes");
  }
  Rng rng(seed);
  layer_.init(rng);
  meta.seed = seed;
}

Tensor MixtureModel::forward(const Tensor& features, Mode mode) {
  if (features.rank() != 2 || features.dim(1) != input_size()) {
    throw Error(Errc::shape_mismatch, "mixture input " + shape_string(features.shape()) + ", expected [B," +
                                          std::to_string(input_size()) + "]");
  }
  logits_ = layer_.forward(dropout_.forward(features, mode));
  return head_probabilities(logits_, head_.kind);
}

void MixtureModel::backward(const Tensor& d_logits) { dropout_.backward(layer_.backward(d_logits)); }

void MixtureModel::zero_grad() {
  layer_.weight.zero_grad();
  layer_.bias.zero_grad();
}

json MixtureModel::to_json(const json& expert_refs) const {
  if (!expert_refs.is_array() || expert_refs.size() != experts_.size()) {
    throw Error(Errc::invalid_argument, "one file reference per expert is required");
  }
  json experts = json::array();
  for (std::size_t i = 0; i < experts_.size(); ++i) {
    json e = expert_refs[i];
    e["channel"] = {{"can_id", experts_[i].can_id}, {"byte_offset", experts_[i].byte_offset}};
    experts.push_back(std::move(e));
  }
  return json{{"format_version", kModelFormatVersion},
              {"kind", "mixture"},
              {"head", canfp::to_json(head_)},
              {"feature_size", feature_size_},
              {"dropout_rate", dropout_.rate()},
              {"experts", experts},
              {"metadata", {{"seed", meta.seed}, {"epochs_run", meta.epochs_run}, {"val_accuracy", meta.val_accuracy}}},
              {"layers", {tensor_to_json(layer_.weight.name, layer_.weight.value),
                          tensor_to_json(layer_.bias.name, layer_.bias.value)}}};
}

MixtureModel MixtureModel::from_json(const json& j) {
  if (j.value("format_version", 0) != kModelFormatVersion || j.value("kind", "") != "mixture") {
    throw Error(Errc::bad_format, "not a version-1 mixture document");
  }
  std::vector<ChannelId> experts;
  for (const auto& e : j.at("experts")) {
    experts.push_back({e.at("channel").at("can_id").get<std::uint32_t>(),
                       e.at("channel").at("byte_offset").get<std::uint8_t>()});
  }
  const auto& md = j.at("metadata");
  MixtureModel m(std::move(experts), j.at("feature_size").get<std::size_t>(), head_from_json(j.at("head")),
                 j.at("dropout_rate").get<double>(), md.at("seed").get<std::uint64_t>());
  m.meta.epochs_run = md.at("epochs_run").get<int>();
  m.meta.val_accuracy = md.at("val_accuracy").get<double>();
  const auto& layers = j.at("layers");
  if (layers.size() != 2) throw Error(Errc::bad_format, "mixture document must hold weight and bias");
  for (const auto& l : layers) {
    Tensor t = tensor_from_json(l);
    Parameter& p = l.at("name").get<std::string>() == m.layer_.weight.name ? m.layer_.weight : m.layer_.bias;
    if (t.shape() != p.value.shape()) throw Error(Errc::shape_mismatch, "mixture layer " + p.name);
    p.value = std::move(t);
  }
  return m;
}

MixtureModel build_mixture(const ExpertBundle& bundle, Head head, double dropout_rate, std::uint64_t seed) {
  return MixtureModel(bundle.channels(), bundle.feature_size(), head, dropout_rate, seed);
}

Tensor predict(MixtureModel& model, const FeatureCache& cache, std::span<const SampleRef> refs) {
  return model.forward(cache.gather(refs), Mode::infer);
}

namespace {

std::vector<int> labels_of(std::span<const SampleRef> refs) {
  std::vector<int> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(r.label);
  return out;
}

}  // namespace

FitResult train_mixture(MixtureModel& model, const FeatureCache& cache, const std::vector<SampleRef>& train,
                        const std::vector<SampleRef>& validation, const TrainConfig& cfg) {
  if (train.empty() || validation.empty()) throw Error(Errc::empty_dataset, "mixture training needs train and validation samples");
  validate(cfg.optimizer);
  const auto kind = model.head().kind;
  const Tensor x_train = cache.gather(train);
  const Tensor x_val = cache.gather(validation);
  const auto y_train = labels_of(train);
  const auto y_val = labels_of(validation);
  const auto width = x_train.dim(1);
  const auto params = model.parameters();
  Rng rng(cfg.seed);
  std::pair<Tensor, Tensor> best{params[0]->value, params[1]->value};

  auto run_epoch = [&](int) {
    for (const auto& idx : make_batches(train.size(), cfg.batch_size, rng)) {
      Tensor xb({idx.size(), width});
      std::vector<int> yb(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(x_train.data() + idx[r] * width, width, xb.data() + r * width);
        yb[r] = y_train[idx[r]];
      }
      model.zero_grad();
      model.forward(xb, Mode::train);
      const auto loss = cross_entropy(model.logits(), yb, kind);
      if (!std::isfinite(loss.loss)) throw Error(Errc::non_finite_value, "mixture loss diverged");
      model.backward(loss.d_logits);
      rmsprop_step(params, cfg.optimizer);
    }
  };
  auto val_accuracy = [&] {
    const Tensor probs = model.forward(x_val, Mode::infer);
    return ValScore{accuracy(predict_labels(probs, kind), y_val), mean_cross_entropy(probs, y_val, kind)};
  };
  const auto res = fit_with_early_stopping(
      cfg.max_epochs, cfg.patience, run_epoch, val_accuracy,
      [&] { best = {params[0]->value, params[1]->value}; },
      [&] {
        params[0]->value = best.first;
        params[1]->value = best.second;
      });
  model.meta.epochs_run = res.epochs_run;
  model.meta.val_accuracy = res.best_val_accuracy;
  return res;
}

FitResult train_mixture(MixtureModel& model, ExpertBundle& bundle, const std::vector<DriverSeries>& drivers,
                        const std::vector<SampleRef>& train, const std::vector<SampleRef>& validation,
                        const TrainConfig& cfg) {
  std::vector<SampleRef> all(train);
  all.insert(all.end(), validation.begin(), validation.end());
  const FeatureCache cache(bundle, drivers, all);
  return train_mixture(model, cache, train, validation, cfg);
}

// ---- files ------------------------------------------------------------------

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::io_failure, "SHA-256 computation failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string expert_file_name(const ChannelId& id) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "its_%04x_%u.json", id.can_id, static_cast<unsigned>(id.byte_offset));
  return buf;
}

void write_text_file(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_failure, "cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(Errc::io_failure, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

json parse_json(const std::string& text, const fs::path& path) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::bad_format, path.string() + ": " + e.what());
  }
}

}  // namespace

void save_its(const ItsModel& model, const fs::path& path) { write_text_file(path, model.serialize()); }

ItsModel load_its(const fs::path& path) {
  try {
    return ItsModel::from_json(parse_json(read_text_file(path), path));
  } catch (const json::exception& e) {
    throw Error(Errc::bad_format, path.string() + ": " + e.what());
  }
}

void save_mixture(const MixtureModel& model, const fs::path& path) {
  const fs::path dir = path.parent_path();
  json refs = json::array();
  for (const auto& ch : model.experts()) {
    const auto file = expert_file_name(ch);
    refs.push_back({{"file", file}, {"sha256", sha256_hex(read_text_file(dir / file))}});
  }
  write_text_file(path, model.to_json(refs).dump());
}

LoadedMixture load_mixture(const fs::path& path) {
  const json j = parse_json(read_text_file(path), path);
  try {
    LoadedMixture out{MixtureModel::from_json(j), {}};
    for (const auto& e : j.at("experts")) {
      const fs::path file = path.parent_path() / e.at("file").get<std::string>();
      const std::string text = read_text_file(file);
      if (sha256_hex(text) != e.at("sha256").get<std::string>()) {
        throw Error(Errc::hash_mismatch, file.string() + " changed since the mixture was trained");
      }
      out.experts.push_back(ItsModel::from_json(parse_json(text, file)));
    }
    ExpertBundle check(out.experts);
    if (check.channels() != out.model.experts() || check.feature_size() != out.model.feature_size()) {
      throw Error(Errc::inconsistent_experts, "expert files do not match the mixture layout");
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(Errc::bad_format, path.string() + ": " + e.what());
  }
}

}  // namespace canfp
