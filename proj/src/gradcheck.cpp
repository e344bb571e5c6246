#include "canfp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "canfp/error.hpp"
#include "canfp/its_model.hpp"
#include "canfp/nn.hpp"

namespace canfp {

GradcheckReport gradcheck(const std::string& name, const std::function<double()>& loss,
                          const std::function<void()>& analytic, const std::vector<GradTarget>& targets,
                          const GradcheckOptions& opts) {
  GradcheckReport rep;
  rep.name = name;
  rep.tolerance = opts.tolerance;
  analytic();
  for (const auto& t : targets) {
    if (t.value == nullptr || t.grad == nullptr || t.value->size() != t.grad->size()) {
      throw Error(Errc::shape_mismatch, "gradcheck target '" + t.name + "' has no matching gradient");
    }
    for (std::size_t i = 0; i < t.value->size(); ++i) {
      const double a = (*t.grad)[i];
      double& v = (*t.value)[i];
      const double saved = v;
      v = saved + opts.step;
      const double up = loss();
      v = saved - opts.step;
      const double down = loss();
      v = saved;
      const double n = (up - down) / (2.0 * opts.step);
      if (!std::isfinite(a) || !std::isfinite(n)) {
        throw Error(Errc::non_finite_value, "non-finite gradient at " + t.name + "[" + std::to_string(i) + "]");
      }
      const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), opts.floor});
      if (rel > rep.max_rel_error || rep.entries_checked == 0) {
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
        rep.worst_entry = t.name + "[" + std::to_string(i) + "]";
      }
      ++rep.entries_checked;
    }
  }
  rep.passed = rep.max_rel_error <= opts.tolerance;
  return rep;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

// Checks a layer with loss = sum(r * layer(x)) over the input and the
// listed parameters.
template <class Fwd, class Bwd>
GradcheckReport layer_check(const std::string& name, Tensor& x, const Shape& out_shape, std::vector<Parameter*> params,
                            Fwd fwd, Bwd bwd, Rng& rng, const GradcheckOptions& opts = {}) {
  const Tensor r = random_tensor(out_shape, rng);
  Tensor dx;
  std::vector<GradTarget> targets{{"input", &x, &dx}};
  for (auto* p : params) targets.push_back({p->name, &p->value, &p->grad});
  auto loss = [&] { return weighted_sum(fwd(x), r); };
  auto analytic = [&] {
    for (auto* p : params) p->zero_grad();
    fwd(x);
    dx = bwd(r);
  };
  return gradcheck(name, loss, analytic, targets, opts);
}

}  // namespace

std::vector<GradcheckReport> run_layer_gradchecks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradcheckReport> out;

  {
    Conv1d conv("conv1d", 2, 3, 4, 2);
    conv.init(rng);
    conv.bias.value = random_tensor({3}, rng);
    Tensor x = random_tensor({2, 2, 11}, rng);
    out.push_back(layer_check(
        "conv1d", x, {2, 3, Conv1d::output_length(11, 4, 2)}, {&conv.weight, &conv.bias},
        [&](const Tensor& in) { return conv.forward(in); }, [&](const Tensor& d) { return conv.backward(d); }, rng));
  }
  {
    Relu relu;
    Tensor x = random_tensor({3, 7}, rng);
    for (auto& v : x.values()) v += v >= 0 ? 0.1 : -0.1;  // keep away from the kink
    out.push_back(layer_check(
        "relu", x, {3, 7}, {}, [&](const Tensor& in) { return relu.forward(in); },
        [&](const Tensor& d) { return relu.backward(d); }, rng));
  }
  {
    MaxPool1d pool(3);
    Tensor x = random_tensor({2, 2, 10}, rng);
    out.push_back(layer_check(
        "maxpool", x, {2, 2, MaxPool1d::output_length(10, 3)}, {}, [&](const Tensor& in) { return pool.forward(in); },
        [&](const Tensor& d) { return pool.backward(d); }, rng));
  }
  for (const Mode mode : {Mode::train, Mode::infer}) {
    BatchNorm1d bn("bn", 3);
    bn.gamma.value = random_tensor({3}, rng, 0.5, 1.5);
    bn.beta.value = random_tensor({3}, rng);
    bn.running_mean = random_tensor({3}, rng);
    bn.running_var = random_tensor({3}, rng, 0.5, 2.0);
    Tensor x = random_tensor({4, 3, 5}, rng);
    out.push_back(layer_check(
        mode == Mode::train ? "batchnorm_train" : "batchnorm_infer", x, {4, 3, 5}, {&bn.gamma, &bn.beta},
        [&](const Tensor& in) { return bn.forward(in, mode); }, [&](const Tensor& d) { return bn.backward(d); }, rng));
  }
  for (const auto& [act, label] : {std::pair{Activation::none, "dense_linear"}, std::pair{Activation::tanh, "dense_tanh"},
                                   std::pair{Activation::sigmoid, "dense_sigmoid"}, std::pair{Activation::relu, "dense_relu"}}) {
    Dense dense("dense", 5, 4, act);
    dense.init(rng);
    dense.bias.value = random_tensor({4}, rng, 0.2, 0.6);
    Tensor x = random_tensor({3, 5}, rng);
    out.push_back(layer_check(
        label, x, {3, 4}, {&dense.weight, &dense.bias}, [&](const Tensor& in) { return dense.forward(in); },
        [&](const Tensor& d) { return dense.backward(d); }, rng));
  }
  {
    Lstm lstm("lstm", 3, 4);
    lstm.init(rng, 1.0);
    Tensor x = random_tensor({2, 5, 3}, rng);
    out.push_back(layer_check(
        "lstm", x, {2, 5, 4}, {&lstm.w_input, &lstm.w_recurrent, &lstm.bias},
        [&](const Tensor& in) { return lstm.forward(in); }, [&](const Tensor& d) { return lstm.backward(d); }, rng));
  }
  {
    Attention att("attention", 4);
    att.init(rng);
    Tensor h = random_tensor({3, 6, 4}, rng);
    out.push_back(layer_check(
        "attention", h, {3, 4}, {&att.w, &att.b}, [&](const Tensor& in) { return att.forward(in); },
        [&](const Tensor& d) { return att.backward(d); }, rng));
  }
  for (const auto kind : {HeadKind::binary, HeadKind::multiclass}) {
    const std::size_t c = kind == HeadKind::binary ? 1 : 4;
    Tensor logits = random_tensor({5, c}, rng, -2.0, 2.0);
    std::vector<int> labels(5);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % (kind == HeadKind::binary ? 2 : c));
    Tensor d;
    out.push_back(gradcheck(
        kind == HeadKind::binary ? "loss_binary" : "loss_multiclass",
        [&] { return cross_entropy(logits, labels, kind).loss; },
        [&] { d = cross_entropy(logits, labels, kind).d_logits; }, {{"logits", &logits, &d}}));
  }

  // Whole classifier at a toy size: dropout off, batch norm in inference mode.
  {
    ItsConfig cfg;
    cfg.seg_len_s = 1.0;
    cfg.kernel_s = 0.3;
    cfg.conv_stride_s = 0.1;
    cfg.filters1 = 2;
    cfg.filters2 = 3;
    cfg.pool = 2;
    cfg.fc_units = 4;
    cfg.lstm_hidden = 3;
    cfg.dropout_rate = 0.0;
    cfg.head = Head::multiclass(3);
    ItsModel model(cfg, ChannelId{0x100, 0}, 10.0, 3.0, mix_seed(seed, 7));
    // Non-trivial running statistics so the inference path is exercised.
    for (auto* p : model.parameters()) {
      if (p->name == "bn.gamma") p->value = random_tensor(p->value.shape(), rng, 0.5, 1.5);
      if (p->name == "bn.beta") p->value = random_tensor(p->value.shape(), rng, -0.5, 0.5);
    }
    Tensor x = random_tensor(model.input_shape(4), rng, 0.0, 1.0);
    const std::vector<int> labels{0, 1, 2, 1};
    auto loss = [&] {
      model.forward(x, Mode::infer);
      return cross_entropy(model.logits(), labels, cfg.head.kind).loss;
    };
    auto analytic = [&] {
      model.zero_grad();
      model.forward(x, Mode::infer);
      model.backward(cross_entropy(model.logits(), labels, cfg.head.kind).d_logits);
    };
    std::vector<GradTarget> targets;
    for (auto* p : model.parameters()) targets.push_back({p->name, &p->value, &p->grad});
    GradcheckOptions opts;
    opts.tolerance = 1e-3;
    out.push_back(gradcheck("its_model", loss, analytic, targets, opts));
  }
  return out;
}

}  // namespace canfp
