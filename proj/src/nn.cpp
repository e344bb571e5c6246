#include "canfp/nn.hpp"

#include <algorithm>
#include <cmath>

#include "canfp/error.hpp"

namespace canfp {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::shape_mismatch, what);
}

double activate(double z, Activation act) {
  switch (act) {
    case Activation::none: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    case Activation::sigmoid: return sigmoid(z);
  }
  return z;
}

// Derivative expressed through the activation output y.
double activation_grad(double y, Activation act) {
  switch (act) {
    case Activation::none: return 1.0;
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::sigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

}  // namespace

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.values()) v = dist(rng);
}

// ---- single-series convolution -------------------------------------------

std::vector<double> conv1d(std::span<const double> series, std::span<const double> filter, std::size_t stride) {
  if (filter.empty() || stride == 0) throw Error(Errc::invalid_argument, "empty filter or zero stride");
  if (filter.size() > series.size()) {
    throw Error(Errc::filter_too_long, "filter of " + std::to_string(filter.size()) + " exceeds series of " +
                                           std::to_string(series.size()));
  }
  const auto n = filter.size();
  const auto out_len = Conv1d::output_length(series.size(), n, stride);
  std::vector<double> out(out_len, 0.0);
  for (std::size_t i = 0; i < out_len; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += filter[n - 1 - j] * series[i * stride + j];
    out[i] = acc;
  }
  return out;
}

Conv1dGrads conv1d_backward(std::span<const double> upstream, std::span<const double> series,
                            std::span<const double> filter, std::size_t stride) {
  const auto n = filter.size();
  if (n == 0 || n > series.size() || stride == 0 ||
      upstream.size() != Conv1d::output_length(series.size(), n, stride)) {
    throw Error(Errc::shape_mismatch, "conv1d_backward: upstream does not match the forward shapes");
  }
  Conv1dGrads g;
  g.d_series.assign(series.size(), 0.0);
  g.d_filter.assign(n, 0.0);
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    const double up = upstream[i];
    g.d_bias += up;
    for (std::size_t j = 0; j < n; ++j) {
      g.d_series[i * stride + j] += up * filter[n - 1 - j];
      g.d_filter[n - 1 - j] += up * series[i * stride + j];
    }
  }
  return g;
}

// ---- Conv1d ----------------------------------------------------------------

Conv1d::Conv1d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride_)
    : weight(name + ".weight", {out_channels, in_channels, kernel}), bias(name + ".bias", {out_channels}),
      stride(stride_) {}

std::size_t Conv1d::output_length(std::size_t length, std::size_t kernel, std::size_t stride) {
  if (kernel > length) return 0;
  return (length - kernel) / stride + 1;
}

void Conv1d::init(Rng& rng) {
  const auto cout = weight.value.dim(0), cin = weight.value.dim(1), k = weight.value.dim(2);
  glorot_uniform(weight.value, cin * k, cout * k, rng);
  bias.value.fill(0.0);
}

Tensor Conv1d::forward(const Tensor& x) {
  const auto cout = weight.value.dim(0), cin = weight.value.dim(1), k = weight.value.dim(2);
  require(x.rank() == 3 && x.dim(1) == cin, "conv1d input " + shape_string(x.shape()) + " vs weight " +
                                                shape_string(weight.value.shape()));
  const auto n = x.dim(0), len = x.dim(2);
  if (k > len) throw Error(Errc::filter_too_long, "kernel longer than the input");
  const auto out_len = output_length(len, k, stride);
  x_ = x;
  Tensor y({n, cout, out_len});
  const double* w = weight.value.data();
  const double* b = bias.value.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* yrow = y.data() + (s * cout + o) * out_len;
      std::fill(yrow, yrow + out_len, b[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double* wrow = w + (o * cin + c) * k;
        const double* xrow = x.data() + (s * cin + c) * len;
        for (std::size_t i = 0; i < out_len; ++i) {
          const double* xp = xrow + i * stride;
          double acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) acc += wrow[k - 1 - j] * xp[j];
          yrow[i] += acc;
        }
      }
    }
  }
  return y;
}

Tensor Conv1d::backward(const Tensor& dy) {
  const auto cout = weight.value.dim(0), cin = weight.value.dim(1), k = weight.value.dim(2);
  const auto n = x_.dim(0), len = x_.dim(2);
  const auto out_len = output_length(len, k, stride);
  require(dy.shape() == Shape({n, cout, out_len}), "conv1d upstream " + shape_string(dy.shape()));
  Tensor dx(x_.shape());
  const double* w = weight.value.data();
  double* dw = weight.grad.data();
  double* db = bias.grad.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < cout; ++o) {
      const double* dyrow = dy.data() + (s * cout + o) * out_len;
      for (std::size_t i = 0; i < out_len; ++i) db[o] += dyrow[i];
      for (std::size_t c = 0; c < cin; ++c) {
        const double* wrow = w + (o * cin + c) * k;
        double* dwrow = dw + (o * cin + c) * k;
        const double* xrow = x_.data() + (s * cin + c) * len;
        double* dxrow = dx.data() + (s * cin + c) * len;
        for (std::size_t i = 0; i < out_len; ++i) {
          const double up = dyrow[i];
          if (up == 0.0) continue;
          const double* xp = xrow + i * stride;
          double* dxp = dxrow + i * stride;
          for (std::size_t j = 0; j < k; ++j) {
            dwrow[k - 1 - j] += up * xp[j];
            dxp[j] += up * wrow[k - 1 - j];
          }
        }
      }
    }
  }
  return dx;
}

// ---- Relu ------------------------------------------------------------------

Tensor Relu::forward(const Tensor& x) {
  y_ = x;
  for (auto& v : y_.values()) v = v > 0.0 ? v : 0.0;
  return y_;
}

Tensor Relu::backward(const Tensor& dy) const {
  require(dy.shape() == y_.shape(), "relu upstream " + shape_string(dy.shape()));
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y_[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

// ---- MaxPool1d -------------------------------------------------------------

Tensor MaxPool1d::forward(const Tensor& x) {
  require(x.rank() == 3, "maxpool expects [N, C, L]");
  if (pool_ == 0) throw Error(Errc::invalid_argument, "pool must be >= 1");
  const auto rows = x.dim(0) * x.dim(1), len = x.dim(2);
  const auto out_len = output_length(len, pool_);
  in_shape_ = x.shape();
  Tensor y({x.dim(0), x.dim(1), out_len});
  argmax_.assign(y.size(), 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xrow = x.data() + r * len;
    for (std::size_t i = 0; i < out_len; ++i) {
      const auto begin = i * pool_;
      const auto end = std::min(len, begin + pool_);
      std::size_t best = begin;
      for (std::size_t j = begin + 1; j < end; ++j) {
        if (xrow[j] > xrow[best]) best = j;
      }
      y[r * out_len + i] = xrow[best];
      argmax_[r * out_len + i] = r * len + best;
    }
  }
  return y;
}

Tensor MaxPool1d::backward(const Tensor& dy) const {
  require(dy.size() == argmax_.size(), "maxpool upstream size mismatch");
  Tensor dx(in_shape_);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax_[i]] += dy[i];
  return dx;
}

// ---- BatchNorm1d -----------------------------------------------------------

BatchNorm1d::BatchNorm1d(std::string name, std::size_t channels)
    : gamma(name + ".gamma", {channels}), beta(name + ".beta", {channels}), running_mean({channels}, 0.0),
      running_var({channels}, 1.0) {
  gamma.value.fill(1.0);
}

Tensor BatchNorm1d::forward(const Tensor& x, Mode mode) {
  const auto channels = gamma.value.size();
  require((x.rank() == 3 || x.rank() == 2) && x.dim(1) == channels,
          "batchnorm input " + shape_string(x.shape()) + " vs " + std::to_string(channels) + " channels");
  const auto n = x.dim(0);
  const auto len = x.rank() == 3 ? x.dim(2) : 1;
  const auto m = n * len;
  mode_ = mode;
  shape_ = x.shape();
  xhat_ = Tensor(x.shape());
  inv_std_.assign(channels, 0.0);
  Tensor y(x.shape());

  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::train) {
      if (m < 2) throw Error(Errc::degenerate_batch, "batch statistics need at least two values per channel");
      for (std::size_t s = 0; s < n; ++s) {
        const double* row = x.data() + (s * channels + c) * len;
        for (std::size_t i = 0; i < len; ++i) mean += row[i];
      }
      mean /= static_cast<double>(m);
      for (std::size_t s = 0; s < n; ++s) {
        const double* row = x.data() + (s * channels + c) * len;
        for (std::size_t i = 0; i < len; ++i) var += (row[i] - mean) * (row[i] - mean);
      }
      var /= static_cast<double>(m);
      running_mean[c] = kMomentum * running_mean[c] + (1.0 - kMomentum) * mean;
      running_var[c] = kMomentum * running_var[c] + (1.0 - kMomentum) * var;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + kEps);
    inv_std_[c] = inv_std;
    const double g = gamma.value[c], b = beta.value[c];
    for (std::size_t s = 0; s < n; ++s) {
      const auto off = (s * channels + c) * len;
      for (std::size_t i = 0; i < len; ++i) {
        const double xh = (x[off + i] - mean) * inv_std;
        xhat_[off + i] = xh;
        y[off + i] = g * xh + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm1d::backward(const Tensor& dy) {
  require(dy.shape() == shape_, "batchnorm upstream " + shape_string(dy.shape()));
  const auto channels = gamma.value.size();
  const auto n = shape_[0];
  const auto len = shape_.size() == 3 ? shape_[2] : 1;
  const auto m = static_cast<double>(n * len);
  Tensor dx(shape_);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const auto off = (s * channels + c) * len;
      for (std::size_t i = 0; i < len; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += dy[off + i] * xhat_[off + i];
      }
    }
    gamma.grad[c] += sum_dy_xhat;
    beta.grad[c] += sum_dy;
    const double g = gamma.value[c];
    const double inv_std = inv_std_[c];
    for (std::size_t s = 0; s < n; ++s) {
      const auto off = (s * channels + c) * len;
      for (std::size_t i = 0; i < len; ++i) {
        if (mode_ == Mode::train) {
          dx[off + i] = g * inv_std / m * (m * dy[off + i] - sum_dy - xhat_[off + i] * sum_dy_xhat);
        } else {
          dx[off + i] = g * inv_std * dy[off + i];
        }
      }
    }
  }
  return dx;
}

// ---- Dense -----------------------------------------------------------------

Dense::Dense(std::string name, std::size_t in, std::size_t out, Activation act_)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}), act(act_) {}

void Dense::init(Rng& rng) {
  glorot_uniform(weight.value, in_features(), out_features(), rng);
  bias.value.fill(0.0);
}

Tensor Dense::forward(const Tensor& x) {
  const auto in = in_features(), out = out_features();
  require(x.rank() == 2 && x.dim(1) == in,
          "dense input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.value.shape()));
  const auto n = x.dim(0);
  x_ = x;
  Tensor y({n, out});
  const double* w = weight.value.data();
  for (std::size_t s = 0; s < n; ++s) {
    const double* xrow = x.data() + s * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wrow = w + o * in;
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * xrow[i];
      y[s * out + o] = activate(acc + bias.value[o], act);
    }
  }
  y_ = y;
  return y;
}

Tensor Dense::backward(const Tensor& dy) {
  const auto in = in_features(), out = out_features();
  require(dy.shape() == y_.shape(), "dense upstream " + shape_string(dy.shape()));
  const auto n = dy.dim(0);
  Tensor dx({n, in});
  const double* w = weight.value.data();
  double* dw = weight.grad.data();
  for (std::size_t s = 0; s < n; ++s) {
    const double* xrow = x_.data() + s * in;
    double* dxrow = dx.data() + s * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double dz = dy[s * out + o] * activation_grad(y_[s * out + o], act);
      if (dz == 0.0) continue;
      bias.grad[o] += dz;
      const double* wrow = w + o * in;
      double* dwrow = dw + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        dwrow[i] += dz * xrow[i];
        dxrow[i] += dz * wrow[i];
      }
    }
  }
  return dx;
}

// ---- Lstm ------------------------------------------------------------------

Lstm::Lstm(std::string name, std::size_t in, std::size_t hidden)
    : w_input(name + ".w_input", {4 * hidden, in}), w_recurrent(name + ".w_recurrent", {4 * hidden, hidden}),
      bias(name + ".bias", {4 * hidden}), in_(in), hidden_(hidden) {}

void Lstm::init(Rng& rng, double forget_bias) {
  glorot_uniform(w_input.value, in_, 4 * hidden_, rng);
  glorot_uniform(w_recurrent.value, hidden_, 4 * hidden_, rng);
  bias.value.fill(0.0);
  for (std::size_t j = 0; j < hidden_; ++j) bias.value[hidden_ + j] = forget_bias;
}

LstmState Lstm::cell(std::span<const double> x, const LstmState& prev) const {
  const auto h_dim = hidden_;
  require(x.size() == in_ && prev.h.size() == h_dim && prev.c.size() == h_dim, "lstm cell dimensions");
  std::vector<double> z(4 * h_dim);
  for (std::size_t r = 0; r < 4 * h_dim; ++r) {
    double acc = bias.value[r];
    for (std::size_t i = 0; i < in_; ++i) acc += w_input.value[r * in_ + i] * x[i];
    for (std::size_t i = 0; i < h_dim; ++i) acc += w_recurrent.value[r * h_dim + i] * prev.h[i];
    z[r] = acc;
  }
  LstmState next{std::vector<double>(h_dim), std::vector<double>(h_dim)};
  for (std::size_t j = 0; j < h_dim; ++j) {
    const double ig = sigmoid(z[j]);
    const double fg = sigmoid(z[h_dim + j]);
    const double gg = std::tanh(z[2 * h_dim + j]);
    const double og = sigmoid(z[3 * h_dim + j]);
    next.c[j] = fg * prev.c[j] + ig * gg;
    next.h[j] = og * std::tanh(next.c[j]);
  }
  return next;
}

Tensor Lstm::forward(const Tensor& x) {
  require(x.rank() == 3 && x.dim(2) == in_, "lstm input " + shape_string(x.shape()));
  const auto batch = x.dim(0), steps = x.dim(1), h_dim = hidden_, g_dim = 4 * hidden_;
  x_ = x;
  gates_ = Tensor({batch, steps, g_dim});
  cells_ = Tensor({batch, steps, h_dim});
  hiddens_ = Tensor({batch, steps, h_dim});
  const double* wi = w_input.value.data();
  const double* wr = w_recurrent.value.data();
  std::vector<double> z(g_dim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const double* xt = x.data() + (b * steps + t) * in_;
      const double* hp = t ? hiddens_.data() + (b * steps + t - 1) * h_dim : nullptr;
      const double* cp = t ? cells_.data() + (b * steps + t - 1) * h_dim : nullptr;
      for (std::size_t r = 0; r < g_dim; ++r) {
        double acc = bias.value[r];
        const double* wrow = wi + r * in_;
        for (std::size_t i = 0; i < in_; ++i) acc += wrow[i] * xt[i];
        if (hp) {
          const double* urow = wr + r * h_dim;
          for (std::size_t i = 0; i < h_dim; ++i) acc += urow[i] * hp[i];
        }
        z[r] = acc;
      }
      double* gt = gates_.data() + (b * steps + t) * g_dim;
      double* ct = cells_.data() + (b * steps + t) * h_dim;
      double* ht = hiddens_.data() + (b * steps + t) * h_dim;
      for (std::size_t j = 0; j < h_dim; ++j) {
        const double ig = sigmoid(z[j]);
        const double fg = sigmoid(z[h_dim + j]);
        const double gg = std::tanh(z[2 * h_dim + j]);
        const double og = sigmoid(z[3 * h_dim + j]);
        gt[j] = ig;
        gt[h_dim + j] = fg;
        gt[2 * h_dim + j] = gg;
        gt[3 * h_dim + j] = og;
        ct[j] = fg * (cp ? cp[j] : 0.0) + ig * gg;
        ht[j] = og * std::tanh(ct[j]);
      }
    }
  }
  return hiddens_;
}

Tensor Lstm::backward(const Tensor& dh) {
  require(dh.shape() == hiddens_.shape(), "lstm upstream " + shape_string(dh.shape()));
  const auto batch = x_.dim(0), steps = x_.dim(1), h_dim = hidden_, g_dim = 4 * hidden_;
  Tensor dx(x_.shape());
  const double* wi = w_input.value.data();
  const double* wr = w_recurrent.value.data();
  double* dwi = w_input.grad.data();
  double* dwr = w_recurrent.grad.data();
  std::vector<double> dh_next(h_dim), dc_next(h_dim), da(g_dim);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    std::fill(dc_next.begin(), dc_next.end(), 0.0);
    for (std::size_t t = steps; t-- > 0;) {
      const double* gt = gates_.data() + (b * steps + t) * g_dim;
      const double* ct = cells_.data() + (b * steps + t) * h_dim;
      const double* cp = t ? cells_.data() + (b * steps + t - 1) * h_dim : nullptr;
      const double* hp = t ? hiddens_.data() + (b * steps + t - 1) * h_dim : nullptr;
      const double* xt = x_.data() + (b * steps + t) * in_;
      const double* dht = dh.data() + (b * steps + t) * h_dim;
      for (std::size_t j = 0; j < h_dim; ++j) {
        const double ig = gt[j], fg = gt[h_dim + j], gg = gt[2 * h_dim + j], og = gt[3 * h_dim + j];
        const double tc = std::tanh(ct[j]);
        const double dhj = dht[j] + dh_next[j];
        const double dc = dhj * og * (1.0 - tc * tc) + dc_next[j];
        da[j] = dc * gg * ig * (1.0 - ig);
        da[h_dim + j] = dc * (cp ? cp[j] : 0.0) * fg * (1.0 - fg);
        da[2 * h_dim + j] = dc * ig * (1.0 - gg * gg);
        da[3 * h_dim + j] = dhj * tc * og * (1.0 - og);
        dc_next[j] = dc * fg;
      }
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      double* dxt = dx.data() + (b * steps + t) * in_;
      for (std::size_t r = 0; r < g_dim; ++r) {
        const double a = da[r];
        bias.grad[r] += a;
        const double* wrow = wi + r * in_;
        double* dwrow = dwi + r * in_;
        for (std::size_t i = 0; i < in_; ++i) {
          dwrow[i] += a * xt[i];
          dxt[i] += a * wrow[i];
        }
        if (hp) {
          const double* urow = wr + r * h_dim;
          double* durow = dwr + r * h_dim;
          for (std::size_t i = 0; i < h_dim; ++i) {
            durow[i] += a * hp[i];
            dh_next[i] += a * urow[i];
          }
        }
      }
    }
  }
  return dx;
}

// ---- Attention -------------------------------------------------------------

Attention::Attention(std::string name, std::size_t hidden) : w(name + ".w", {hidden}), b(name + ".b", {1}) {}

void Attention::init(Rng& rng) {
  glorot_uniform(w.value, w.value.size(), 1, rng);
  b.value.fill(0.0);
}

Tensor Attention::forward(const Tensor& h) {
  require(h.rank() == 3 && h.dim(2) == w.value.size() && h.dim(1) >= 1, "attention input " + shape_string(h.shape()));
  const auto batch = h.dim(0), steps = h.dim(1), h_dim = h.dim(2);
  h_ = h;
  u_ = Tensor({batch, steps});
  alpha_ = Tensor({batch, steps});
  Tensor a({batch, h_dim});
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t t = 0; t < steps; ++t) {
      const double* ht = h.data() + (s * steps + t) * h_dim;
      double acc = b.value[0];
      for (std::size_t j = 0; j < h_dim; ++j) acc += w.value[j] * ht[j];
      u_.at(s, t) = std::tanh(acc);
    }
    const auto alpha = softmax(std::span<const double>(u_.data() + s * steps, steps));
    for (std::size_t t = 0; t < steps; ++t) {
      alpha_.at(s, t) = alpha[t];
      const double* ht = h.data() + (s * steps + t) * h_dim;
      for (std::size_t j = 0; j < h_dim; ++j) a.at(s, j) += alpha[t] * ht[j];
    }
  }
  return a;
}

Tensor Attention::backward(const Tensor& da) {
  const auto batch = h_.dim(0), steps = h_.dim(1), h_dim = h_.dim(2);
  require(da.shape() == Shape({batch, h_dim}), "attention upstream " + shape_string(da.shape()));
  Tensor dh(h_.shape());
  std::vector<double> d_alpha(steps);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* g = da.data() + s * h_dim;
    double weighted = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      const double* ht = h_.data() + (s * steps + t) * h_dim;
      double acc = 0.0;
      for (std::size_t j = 0; j < h_dim; ++j) acc += g[j] * ht[j];
      d_alpha[t] = acc;
      weighted += alpha_.at(s, t) * acc;
    }
    for (std::size_t t = 0; t < steps; ++t) {
      const double alpha = alpha_.at(s, t);
      const double u = u_.at(s, t);
      const double d_score = alpha * (d_alpha[t] - weighted) * (1.0 - u * u);
      const double* ht = h_.data() + (s * steps + t) * h_dim;
      double* dht = dh.data() + (s * steps + t) * h_dim;
      b.grad[0] += d_score;
      for (std::size_t j = 0; j < h_dim; ++j) {
        w.grad[j] += d_score * ht[j];
        dht[j] = alpha * g[j] + d_score * w.value[j];
      }
    }
  }
  return dh;
}

// ---- Dropout ---------------------------------------------------------------

Tensor Dropout::forward(const Tensor& x, Mode mode) {
  active_ = mode == Mode::train && rate_ > 0.0;
  if (!active_) return x;
  if (!(rate_ < 1.0)) throw Error(Errc::invalid_argument, "dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate_);
  const double scale = 1.0 / (1.0 - rate_);
  mask_.resize(x.size());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = keep(rng_) ? scale : 0.0;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& dy) const {
  if (!active_) return dy;
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask_[i];
  return dx;
}

Tensor dropout(const Tensor& x, double rate, Mode mode, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw Error(Errc::invalid_argument, "dropout rate must lie in [0,1)");
  Dropout layer(rate, seed);
  return layer.forward(x, mode);
}

// ---- heads and losses ------------------------------------------------------

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> p(z.size());
  if (z.empty()) return p;
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

Tensor head_probabilities(const Tensor& logits, HeadKind kind) {
  require(logits.rank() == 2, "logits must be [N, C]");
  Tensor p(logits.shape());
  const auto n = logits.dim(0), c = logits.dim(1);
  if (kind == HeadKind::binary) {
    require(c == 1, "binary head expects one logit per row");
    for (std::size_t i = 0; i < n; ++i) p[i] = sigmoid(logits[i]);
    return p;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = softmax(std::span<const double>(logits.data() + i * c, c));
    std::copy(row.begin(), row.end(), p.data() + i * c);
  }
  return p;
}

double cross_entropy(std::span<const double> probs, int label, HeadKind kind) {
  constexpr double kClamp = 1e-12;
  if (kind == HeadKind::binary) {
    if (probs.size() != 1) throw Error(Errc::shape_mismatch, "binary cross-entropy expects one probability");
    if (label != 0 && label != 1) throw Error(Errc::label_out_of_range, "binary label must be 0 or 1");
    const double p = label == 1 ? probs[0] : 1.0 - probs[0];
    return -std::log(std::max(p, kClamp));
  }
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw Error(Errc::label_out_of_range, "label " + std::to_string(label) + " outside " +
                                              std::to_string(probs.size()) + " classes");
  }
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], kClamp));
}

LossResult cross_entropy(const Tensor& logits, std::span<const int> labels, HeadKind kind) {
  require(logits.rank() == 2 && logits.dim(0) == labels.size(), "logits/labels batch mismatch");
  const auto n = logits.dim(0), c = logits.dim(1);
  if (n == 0) throw Error(Errc::empty_input, "empty batch");
  const auto probs = head_probabilities(logits, kind);
  LossResult res;
  res.d_logits = Tensor(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> row(probs.data() + i * c, c);
    res.loss += cross_entropy(row, labels[i], kind) * inv_n;
    for (std::size_t j = 0; j < c; ++j) {
      const double target = kind == HeadKind::binary ? static_cast<double>(labels[i])
                                                     : (static_cast<int>(j) == labels[i] ? 1.0 : 0.0);
      res.d_logits[i * c + j] = (row[j] - target) * inv_n;
    }
  }
  return res;
}

std::vector<int> predict_labels(const Tensor& probs, HeadKind kind) {
  const auto n = probs.dim(0), c = probs.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (kind == HeadKind::binary) {
      out[i] = probs[i] >= 0.5 ? 1 : 0;
    } else {
      const double* row = probs.data() + i * c;
      out[i] = static_cast<int>(std::max_element(row, row + c) - row);
    }
  }
  return out;
}

// ---- optimizer -------------------------------------------------------------

void validate(const OptimizerConfig& cfg) {
  if (!(cfg.learning_rate > 0.0) || !(cfg.rho > 0.0 && cfg.rho < 1.0) || !(cfg.epsilon > 0.0)) {
    throw Error(Errc::invalid_argument, "optimizer requires lr > 0, 0 < rho < 1, epsilon > 0");
  }
}

void rmsprop_step(std::span<Parameter* const> params, const OptimizerConfig& cfg) {
  for (Parameter* p : params) {
    double* v = p->value.data();
    double* cache = p->rms_cache.data();
    const double* g = p->grad.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      cache[i] = cfg.rho * cache[i] + (1.0 - cfg.rho) * g[i] * g[i];
      v[i] -= cfg.learning_rate * g[i] / (std::sqrt(cache[i]) + cfg.epsilon);
    }
  }
}

}  // namespace canfp
