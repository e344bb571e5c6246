#include "canfp/training.hpp"

#include <algorithm>
#include <numeric>

#include "canfp/error.hpp"

namespace canfp {

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw Error(Errc::shape_mismatch, "predictions and labels differ in length");
  if (labels.empty()) throw Error(Errc::empty_input, "accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

FitResult fit_with_early_stopping(int max_epochs, int patience, const std::function<void(int)>& run_epoch,
                                  const std::function<ValScore()>& validate, const std::function<void()>& snapshot,
                                  const std::function<void()>& restore) {
  if (max_epochs < 1 || patience < 1) throw Error(Errc::invalid_argument, "max_epochs and patience must be >= 1");
  FitResult res;
  int stale = 0;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    run_epoch(epoch);
    const ValScore score = validate();
    res.val_history.push_back(score.accuracy);
    res.epochs_run = epoch;
    const bool better = res.best_epoch == 0 || score.accuracy > res.best_val_accuracy ||
                        (score.accuracy == res.best_val_accuracy && score.loss < res.best_val_loss);
    if (better) {
      res.best_val_accuracy = score.accuracy;
      res.best_val_loss = score.loss;
      res.best_epoch = epoch;
      stale = 0;
      snapshot();
    } else if (++stale >= patience) {
      break;
    }
  }
  restore();
  return res;
}

double mean_cross_entropy(const Tensor& probs, std::span<const int> labels, HeadKind kind) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw Error(Errc::shape_mismatch, "probabilities do not match the labels");
  }
  if (labels.empty()) throw Error(Errc::empty_input, "loss of an empty set");
  const auto width = probs.dim(1);
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sum += cross_entropy(std::span<const double>(probs.data() + i * width, width), labels[i], kind);
  }
  return sum / static_cast<double>(labels.size());
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw Error(Errc::invalid_argument, "batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return batches;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace canfp
