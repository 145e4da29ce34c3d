/// @file train.hpp
/// Adam-based minimization of the scheme-residual loss, with optional
/// per-scale learning rates, minibatching over fit windows, a scale-interval
/// sweep, and a plain-text iteration history.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kinetra/dataset.hpp"
#include "kinetra/fitloss.hpp"
#include "kinetra/symnet.hpp"

namespace kinetra {

struct TrainConfig {
  LossConfig loss;
  int iters = 2000;
  int batch = 0;  // windows per step; 0 or >= available means full batch
  double lr = 1e-3;
  // Scales each entry's rate by eps_pred^m, m its inverse-scale power, so
  // all folded coefficients move at comparable speed.
  bool per_scale_lr = false;
  std::uint64_t seed = 0;
  int log_every = 100;       // history cadence (first and last always kept)
  std::string history_path;  // write iteration history here when non-empty
  bool timing = true;        // false logs 0.000 seconds for repeatable files
};

struct HistoryRow {
  int iter = 0;
  double loss = 0.0;
  double eps_pred = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams params;
  double final_loss = 0.0;  // full-batch loss at the returned parameters
  bool diverged = false;    // stopped early, parameters rolled back
  int interval = -1;        // scale bracket when swept or interval-squashed
  std::vector<HistoryRow> history;
};

// Minimizes the loss starting from `init`.  On a numerical failure mid-run
// the last finite iterate is restored and `diverged` is set; a failure on
// the very first evaluation propagates instead.
TrainResult train_model(const ModelParams& init, const Dataset& ds,
                        const TrainConfig& cfg);

// Trains one copy of `init` per scale bracket in [lo, hi] (interval squash,
// centered start) and returns the run with the lowest full-batch loss.
// Brackets that fail numerically are skipped.
TrainResult train_interval_sweep(const ModelParams& init, const Dataset& ds,
                                 const TrainConfig& cfg, int lo, int hi);

void save_history(const std::vector<HistoryRow>& rows,
                  const std::string& path);

}  // namespace kinetra
