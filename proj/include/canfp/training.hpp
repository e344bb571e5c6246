#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "canfp/nn.hpp"

namespace canfp {

/// Fraction of predictions equal to their label, i.e. (TP + TN) / All for
/// binary tasks. Throws empty_input / shape_mismatch.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t batch_size = 64;
  int max_epochs = 20;
  int patience = 2;
  std::uint64_t seed = 0;
};

struct FitResult {
  int epochs_run = 0;
  int best_epoch = 0;  // 1-based, 0 when nothing was evaluated
  double best_val_accuracy = 0.0;
  double best_val_loss = 0.0;
  std::vector<double> val_history;
};

struct ValScore {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Epoch loop with early stopping on validation accuracy; an epoch with
/// equal accuracy and lower validation loss also counts as an improvement.
/// `snapshot` is called on every improvement, `restore` once at the end.
/// Training stops after `patience` consecutive non-improving epochs or at
/// `max_epochs`.
FitResult fit_with_early_stopping(int max_epochs, int patience, const std::function<void(int)>& run_epoch,
                                  const std::function<ValScore()>& validate, const std::function<void()>& snapshot,
                                  const std::function<void()>& restore);

/// Mean cross-entropy of predicted probabilities [N, outputs].
double mean_cross_entropy(const Tensor& probs, std::span<const int> labels, HeadKind kind);

/// Seeded shuffle of 0..n-1 cut into batches.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng);

/// Deterministic 64-bit seed mixing (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace canfp
