/// @file train.cpp

#include "kinetra/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "kinetra/errors.hpp"

namespace kinetra {

namespace {

std::vector<int> full_batch(int windows) {
  std::vector<int> idx(static_cast<std::size_t>(windows));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

TrainResult train_model(const ModelParams& init, const Dataset& ds,
                        const TrainConfig& cfg) {
  if (cfg.iters < 0) throw ConfigError("train: negative iteration count");
  if (cfg.lr <= 0.0) throw ConfigError("train: learning rate must be positive");
  const int windows = fit_windows(ds, cfg.loss.scheme);
  if (windows <= 0)
    throw ConfigError("train: dataset too short for the scheme window");

  // The word structure is parameter-independent, so one workspace serves
  // the whole run.
  const FitWorkspace ws =
      build_workspace(expand_model(init, ds.grid, ds.sigma_s_faces()), ds);

  TrainResult res;
  res.params = init;
  res.interval =
      init.scale.mode == EpsMode::Interval ? init.scale.interval : -1;

  ParamLayout lay = build_layout(res.params);
  VecX v = flatten(res.params, lay);
  VecX last_good = v;

  // Adam state.
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  VecX m1 = VecX::Zero(lay.total), m2 = VecX::Zero(lay.total);
  double b1p = 1.0, b2p = 1.0;

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> pool = full_batch(windows);
  const int bs = cfg.batch > 0 && cfg.batch < windows ? cfg.batch : windows;

  const auto t_start = std::chrono::steady_clock::now();
  const auto elapsed = [&]() {
    if (!cfg.timing) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t_start)
        .count();
  };

  ModelParams work = init;
  VecX grad;
  for (int it = 1; it <= cfg.iters; ++it) {
    std::vector<int> batch;
    if (bs < windows) {
      for (int k = 0; k < bs; ++k) {
        std::uniform_int_distribution<int> pick(k, windows - 1);
        std::swap(pool[static_cast<std::size_t>(k)],
                  pool[static_cast<std::size_t>(pick(rng))]);
      }
      batch.assign(pool.begin(), pool.begin() + bs);
    } else {
      batch = pool;
    }

    unflatten(v, lay, work);
    double L;
    try {
      L = loss_and_grad(work, ds, ws, cfg.loss, batch, grad);
    } catch (const InstabilityError&) {
      if (it == 1) throw;  // nothing trained yet
      v = last_good;
      res.diverged = true;
      break;
    }
    if (!std::isfinite(L) || !grad.allFinite()) {
      if (it == 1)
        throw OverflowError("train: non-finite loss at the initial point");
      v = last_good;
      res.diverged = true;
      break;
    }
    last_good = v;

    const double eps_now = eps_pred(work.scale);
    if (it == 1 || it % cfg.log_every == 0 || it == cfg.iters)
      res.history.push_back({it, L, eps_now, grad.norm(), elapsed()});

    // Bias-corrected Adam step; the very first step moves every coordinate
    // by essentially the learning rate.
    m1 = beta1 * m1 + (1.0 - beta1) * grad;
    m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseProduct(grad);
    b1p *= beta1;
    b2p *= beta2;
    for (int i = 0; i < lay.total; ++i) {
      double lr_i = cfg.lr;
      if (cfg.per_scale_lr && lay.scale_tag[i] > 0)
        lr_i *= pow_int(eps_now, lay.scale_tag[i]);
      const double mhat = m1[i] / (1.0 - b1p);
      const double vhat = m2[i] / (1.0 - b2p);
      v[i] -= lr_i * mhat / (std::sqrt(vhat) + adam_eps);
    }
  }

  unflatten(v, lay, res.params);
  try {
    res.final_loss =
        loss_only(res.params, ds, ws, cfg.loss, full_batch(windows));
  } catch (const InstabilityError&) {
    res.final_loss = std::numeric_limits<double>::infinity();
  }
  if (!cfg.history_path.empty()) save_history(res.history, cfg.history_path);
  return res;
}

TrainResult train_interval_sweep(const ModelParams& init, const Dataset& ds,
                                 const TrainConfig& cfg, int lo, int hi) {
  if (lo < 0 || hi > 12 || lo > hi)
    throw ConfigError("interval sweep: bracket range must satisfy 0 <= lo <= "
                      "hi <= 12");
  TrainResult best;
  best.final_loss = std::numeric_limits<double>::infinity();
  bool any = false;
  for (int i = lo; i <= hi; ++i) {
    ModelParams start = init;
    start.scale.mode = EpsMode::Interval;
    start.scale.interval = i;
    start.scale.w_eps = 0.0;
    TrainResult r;
    try {
      r = train_model(start, ds, cfg);
    } catch (const InstabilityError&) {
      continue;
    }
    if (!any || r.final_loss < best.final_loss) {
      best = std::move(r);
      best.interval = i;
      any = true;
    }
  }
  if (!any)
    throw InstabilityError("interval sweep: every scale bracket diverged");
  return best;
}

void save_history(const std::vector<HistoryRow>& rows,
                  const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open history file for writing: " + path);
  std::fputs("iter,loss,eps_pred,grad_norm,seconds\n", f);
  for (const HistoryRow& r : rows)
    std::fprintf(f, "%d,%.17g,%.17g,%.17g,%.3f\n", r.iter, r.loss, r.eps_pred,
                 r.grad_norm, r.seconds);
  std::fclose(f);
}

}  // namespace kinetra
