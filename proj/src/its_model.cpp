#include "canfp/its_model.hpp"

#include <algorithm>
#include <cmath>

#include "canfp/error.hpp"

namespace canfp {

using nlohmann::json;

ItsGeometry its_geometry(const ItsConfig& cfg, double rate_hz) {
  if (!(rate_hz > 0.0)) throw Error(Errc::config_infeasible, "channel rate must be positive");
  if (cfg.filters1 == 0 || cfg.filters2 == 0 || cfg.pool == 0 || cfg.fc_units == 0 || cfg.lstm_hidden == 0) {
    throw Error(Errc::config_infeasible, "layer sizes must be positive");
  }
  if (cfg.kernel_s > cfg.seg_len_s) throw Error(Errc::config_infeasible, "kernel longer than a segment");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) {
    throw Error(Errc::config_infeasible, "dropout rate must lie in [0,1)");
  }
  if (cfg.head.kind == HeadKind::multiclass && cfg.head.classes < 2) {
    throw Error(Errc::config_infeasible, "multiclass head needs at least two classes");
  }
  ItsGeometry g;
  g.rate_hz = rate_hz;
  g.seg_points = seconds_to_points(cfg.seg_len_s, rate_hz);
  g.conv1_kernel = seconds_to_points(cfg.kernel_s, rate_hz);
  g.conv1_stride = std::max<std::size_t>(1, seconds_to_points(cfg.conv_stride_s, rate_hz));
  if (g.conv1_kernel < 1) {
    throw Error(Errc::config_infeasible, "kernel of " + std::to_string(cfg.kernel_s) + " s is shorter than one point at " +
                                             std::to_string(rate_hz) + " Hz");
  }
  if (g.conv1_kernel > g.seg_points) throw Error(Errc::config_infeasible, "first kernel exceeds the segment");
  g.conv1_len = Conv1d::output_length(g.seg_points, g.conv1_kernel, g.conv1_stride);
  g.pooled_len = MaxPool1d::output_length(g.conv1_len, cfg.pool);

  // The second layer reuses the same kernel/stride durations, measured on the
  // time scale left after the first stride and the pooling.
  const double pooled_rate =
      rate_hz / static_cast<double>(g.conv1_stride) / static_cast<double>(cfg.pool);
  g.conv2_kernel = std::max<std::size_t>(1, seconds_to_points(cfg.kernel_s, pooled_rate));
  g.conv2_stride = std::max<std::size_t>(1, seconds_to_points(cfg.conv_stride_s, pooled_rate));
  if (g.pooled_len < g.conv2_kernel) {
    throw Error(Errc::config_infeasible, "pooled length " + std::to_string(g.pooled_len) + " < second kernel " +
                                             std::to_string(g.conv2_kernel));
  }
  g.conv2_len = Conv1d::output_length(g.pooled_len, g.conv2_kernel, g.conv2_stride);
  g.flat_features = cfg.filters2 * g.conv2_len;
  return g;
}

ItsModel::ItsModel(const ItsConfig& cfg, ChannelId channel, double rate_hz, double sample_duration_s,
                   std::uint64_t seed)
    : cfg_(cfg),
      geo_(its_geometry(cfg, rate_hz)),
      channel_(channel),
      duration_s_(sample_duration_s),
      k_(segment_count(sample_duration_s, cfg.seg_len_s)),
      conv1_("conv1", 1, cfg.filters1, geo_.conv1_kernel, geo_.conv1_stride),
      pool_(cfg.pool),
      conv2_("conv2", cfg.filters1, cfg.filters2, geo_.conv2_kernel, geo_.conv2_stride),
      bn_("bn", cfg.filters2),
      cnn_fc_("cnn_fc", geo_.flat_features, cfg.fc_units, Activation::tanh),
      cnn_drop_(cfg.dropout_rate, mix_seed(seed, 101)),
      lstm_("lstm", cfg.fc_units, cfg.lstm_hidden),
      attention_("attention", cfg.lstm_hidden),
      fc_("fc", cfg.lstm_hidden, cfg.fc_units, Activation::tanh),
      fc_drop_(cfg.dropout_rate, mix_seed(seed, 102)),
      head_("head", cfg.fc_units, cfg.head.outputs(), Activation::none) {
  Rng rng(seed);
  conv1_.init(rng);
  conv2_.init(rng);
  cnn_fc_.init(rng);
  lstm_.init(rng, 1.0);
  attention_.init(rng);
  fc_.init(rng);
  head_.init(rng);
  meta.seed = seed;
}

Tensor ItsModel::cnn_forward(const Tensor& x, Mode mode) {
  const auto n = x.dim(0) * x.dim(1);
  Tensor y = relu1_.forward(conv1_.forward(x.reshaped({n, 1, geo_.seg_points})));
  y = pool_.forward(y);
  y = relu2_.forward(conv2_.forward(y));
  y = bn_.forward(y, mode);
  y.reshape({n, geo_.flat_features});
  return cnn_fc_.forward(y);
}

Tensor ItsModel::cnn_backward(const Tensor& d) {
  const auto n = d.dim(0);
  Tensor g = cnn_fc_.backward(d);
  g.reshape({n, cfg_.filters2, geo_.conv2_len});
  g = bn_.backward(g);
  g = conv2_.backward(relu2_.backward(g));
  g = relu1_.backward(pool_.backward(g));
  return conv1_.backward(g);
}

Tensor ItsModel::segment_features(const Tensor& x, Mode mode) {
  if (x.rank() != 3 || x.dim(2) != geo_.seg_points) {
    throw Error(Errc::shape_mismatch, "segment input " + shape_string(x.shape()));
  }
  Tensor f = cnn_forward(x, mode);
  f.reshape({x.dim(0), x.dim(1), cfg_.fc_units});
  return f;
}

Tensor ItsModel::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 3 || x.dim(1) != k_ || x.dim(2) != geo_.seg_points || x.dim(0) == 0) {
    throw Error(Errc::shape_mismatch, "ITS input " + shape_string(x.shape()) + ", expected [B," +
                                          std::to_string(k_) + "," + std::to_string(geo_.seg_points) + "]");
  }
  batch_ = x.dim(0);
  Tensor seg = cnn_drop_.forward(cnn_forward(x, mode), mode);
  seg.reshape({batch_, k_, cfg_.fc_units});
  const Tensor pooled = attention_.forward(lstm_.forward(seg));
  features_ = fc_drop_.forward(fc_.forward(pooled), mode);
  logits_ = head_.forward(features_);
  return head_probabilities(logits_, cfg_.head.kind);
}

Tensor ItsModel::features(const Tensor& x, Mode mode) {
  forward(x, mode);
  return features_;
}

void ItsModel::backward(const Tensor& d_logits) {
  if (d_logits.shape() != logits_.shape()) throw Error(Errc::shape_mismatch, "logit gradient shape");
  Tensor g = fc_drop_.backward(head_.backward(d_logits));
  g = attention_.backward(fc_.backward(g));
  g = lstm_.backward(g);
  g.reshape({batch_ * k_, cfg_.fc_units});
  cnn_backward(cnn_drop_.backward(g));
}

std::vector<Parameter*> ItsModel::parameters() {
  return {&conv1_.weight, &conv1_.bias,    &conv2_.weight,      &conv2_.bias,     &bn_.gamma,
          &bn_.beta,      &cnn_fc_.weight, &cnn_fc_.bias,       &lstm_.w_input,   &lstm_.w_recurrent,
          &lstm_.bias,    &attention_.w,   &attention_.b,       &fc_.weight,      &fc_.bias,
          &head_.weight,  &head_.bias};
}

std::vector<const Parameter*> ItsModel::parameters() const {
  auto ps = const_cast<ItsModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::size_t ItsModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

void ItsModel::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

// ---- serialization ---------------------------------------------------------

json to_json(const Head& h) {
  return json{{"kind", h.kind == HeadKind::binary ? "binary" : "multiclass"}, {"classes", h.classes}};
}

Head head_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "binary") return Head::binary();
  if (kind == "multiclass") return Head::multiclass(j.at("classes").get<std::size_t>());
  throw Error(Errc::bad_format, "unknown head kind '" + kind + "'");
}

json to_json(const ItsConfig& c) {
  return json{{"seg_len_s", c.seg_len_s},   {"kernel_s", c.kernel_s},         {"conv_stride_s", c.conv_stride_s},
              {"filters1", c.filters1},     {"filters2", c.filters2},         {"pool", c.pool},
              {"fc_units", c.fc_units},     {"lstm_hidden", c.lstm_hidden},   {"dropout_rate", c.dropout_rate},
              {"head", to_json(c.head)}};
}

ItsConfig its_config_from_json(const json& j, ItsConfig c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("seg_len_s", c.seg_len_s);
  get("kernel_s", c.kernel_s);
  get("conv_stride_s", c.conv_stride_s);
  get("filters1", c.filters1);
  get("filters2", c.filters2);
  get("pool", c.pool);
  get("fc_units", c.fc_units);
  get("lstm_hidden", c.lstm_hidden);
  get("dropout_rate", c.dropout_rate);
  if (j.contains("head")) c.head = head_from_json(j.at("head"));
  return c;
}

json tensor_to_json(const std::string& name, const Tensor& t) {
  return json{{"name", name}, {"shape", t.shape()}, {"values", t.storage()}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

json ItsModel::to_json() const {
  json layers = json::array();
  for (const auto* p : parameters()) layers.push_back(tensor_to_json(p->name, p->value));
  layers.push_back(tensor_to_json("bn.running_mean", bn_.running_mean));
  layers.push_back(tensor_to_json("bn.running_var", bn_.running_var));
  return json{{"format_version", kModelFormatVersion},
              {"kind", "its"},
              {"channel", {{"can_id", channel_.can_id}, {"byte_offset", channel_.byte_offset}}},
              {"rate_hz", geo_.rate_hz},
              {"sample_duration_s", duration_s_},
              {"config", canfp::to_json(cfg_)},
              {"metadata", {{"seed", meta.seed}, {"epochs_run", meta.epochs_run}, {"val_accuracy", meta.val_accuracy}}},
              {"layers", layers}};
}

ItsModel ItsModel::from_json(const json& j) {
  if (j.value("format_version", 0) != kModelFormatVersion || j.value("kind", "") != "its") {
    throw Error(Errc::bad_format, "not a version-1 ITS model document");
  }
  const ChannelId ch{j.at("channel").at("can_id").get<std::uint32_t>(),
                     j.at("channel").at("byte_offset").get<std::uint8_t>()};
  const auto& md = j.at("metadata");
  ItsModel m(its_config_from_json(j.at("config")), ch, j.at("rate_hz").get<double>(),
             j.at("sample_duration_s").get<double>(), md.at("seed").get<std::uint64_t>());
  m.meta.epochs_run = md.at("epochs_run").get<int>();
  m.meta.val_accuracy = md.at("val_accuracy").get<double>();

  std::map<std::string, Tensor*> slots;
  for (auto* p : m.parameters()) slots[p->name] = &p->value;
  slots["bn.running_mean"] = &m.bn_.running_mean;
  slots["bn.running_var"] = &m.bn_.running_var;
  std::size_t seen = 0;
  for (const auto& layer : j.at("layers")) {
    const auto name = layer.at("name").get<std::string>();
    auto it = slots.find(name);
    if (it == slots.end()) throw Error(Errc::bad_format, "unexpected layer '" + name + "'");
    Tensor t = tensor_from_json(layer);
    if (t.shape() != it->second->shape()) {
      throw Error(Errc::shape_mismatch, "layer '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                                            shape_string(it->second->shape()));
    }
    *it->second = std::move(t);
    ++seen;
  }
  if (seen != slots.size()) throw Error(Errc::bad_format, "model document is missing layers");
  return m;
}

std::string ItsModel::serialize() const { return to_json().dump(); }

// ---- data and training -----------------------------------------------------

double ChannelData::rate_hz() const {
  for (const auto& d : *drivers) {
    if (auto it = d.series.find(channel); it != d.series.end()) return it->second.rate_hz;
  }
  throw Error(Errc::missing_channel, "no driver carries " + to_string(channel));
}

Tensor ChannelData::batch(std::span<const SampleRef> refs) const {
  const double rate = rate_hz();
  const auto k = segment_count(duration_s, seg_len_s);
  const auto seg = seconds_to_points(seg_len_s, rate);
  Tensor x({refs.size(), k, seg});
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& d = drivers->at(refs[i].driver);
    auto it = d.series.find(channel);
    if (it == d.series.end()) throw Error(Errc::missing_channel, d.driver + " lacks " + to_string(channel));
    fill_segments(it->second, refs[i].t_start_us, duration_s, seg_len_s, x.data() + i * k * seg);
  }
  return x;
}

Tensor predict(ItsModel& model, const ChannelData& data, std::span<const SampleRef> refs, std::size_t batch_size) {
  Tensor out({refs.size(), model.config().head.outputs()});
  for (std::size_t i = 0; i < refs.size(); i += batch_size) {
    const auto n = std::min(batch_size, refs.size() - i);
    const Tensor p = model.forward(data.batch(refs.subspan(i, n)), Mode::infer);
    std::copy(p.values().begin(), p.values().end(), out.data() + i * p.dim(1));
  }
  return out;
}

namespace {

std::vector<int> labels_of(std::span<const SampleRef> refs) {
  std::vector<int> labels(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) labels[i] = refs[i].label;
  return labels;
}

}  // namespace

FitResult train_its(ItsModel& model, const ChannelData& data, const std::vector<SampleRef>& train,
                    const std::vector<SampleRef>& validation, const TrainConfig& cfg) {
  if (train.empty() || validation.empty()) throw Error(Errc::empty_dataset, "ITS training needs train and validation samples");
  validate(cfg.optimizer);
  const auto kind = model.config().head.kind;
  const auto val_labels = labels_of(validation);
  const auto params = model.parameters();
  Rng rng(cfg.seed);
  ItsModel best = model;

  auto run_epoch = [&](int) {
    for (const auto& idx : make_batches(train.size(), cfg.batch_size, rng)) {
      std::vector<SampleRef> refs;
      refs.reserve(idx.size());
      for (auto i : idx) refs.push_back(train[i]);
      const auto labels = labels_of(refs);
      model.zero_grad();
      model.forward(data.batch(refs), Mode::train);
      const auto loss = cross_entropy(model.logits(), labels, kind);
      if (!std::isfinite(loss.loss)) throw Error(Errc::non_finite_value, "training loss diverged");
      model.backward(loss.d_logits);
      rmsprop_step(params, cfg.optimizer);
    }
  };
  auto val_accuracy = [&] {
    const Tensor probs = predict(model, data, validation);
    return ValScore{accuracy(predict_labels(probs, kind), val_labels), mean_cross_entropy(probs, val_labels, kind)};
  };
  const auto res = fit_with_early_stopping(
      cfg.max_epochs, cfg.patience, run_epoch, val_accuracy, [&] { best = model; }, [&] { model = best; });
  model.meta.epochs_run = res.epochs_run;
  model.meta.val_accuracy = res.best_val_accuracy;
  return res;
}

}  // namespace canfp
