/// @file kinetra_main.cpp
/// Command-line driver: dataset generation, residual-fit training, learned
/// equation extraction, and the sparse-regression baselines.  Every knob is
/// a flag (defaults shown by --help) and each subcommand also accepts
/// --config FILE with the same keys as flat key=value lines; unknown keys
/// are rejected.  Exit codes: 0 success, 2 usage or configuration error,
/// 3 numerical divergence, 4 I/O failure.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kinetra/baselines.hpp"
#include "kinetra/checkpoint.hpp"
#include "kinetra/dataset.hpp"
#include "kinetra/errors.hpp"
#include "kinetra/extract.hpp"
#include "kinetra/physics.hpp"
#include "kinetra/solver.hpp"
#include "kinetra/train.hpp"

using namespace kinetra;

namespace {

// ============================================================================
// Shared parsing helpers
// ============================================================================

// Accepts the short scheme aliases alongside the canonical names.
Scheme parse_scheme(const std::string& s) {
  if (s == "fe") return Scheme::ForwardEuler;
  if (s == "be") return Scheme::BackwardEuler;
  return scheme_from_name(s);
}

std::vector<OpTag> parse_ops(const std::string& csv) {
  std::vector<OpTag> ops;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) ops.push_back(op_from_name(tok));
  }
  if (ops.empty()) throw ConfigError("base operator list is empty");
  return ops;
}

std::string fmt_g(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Splices each `--config FILE` occurrence open: every `key=value` line of
// the file becomes a `--key=value` token at that position, so flags placed
// after the config override it and unknown keys fail as unknown flags.
std::vector<std::string> expand_config_args(int argc, char** argv) {
  std::vector<std::string> out;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    std::string path;
    if (a == "--config") {
      if (i + 1 >= argc) throw ConfigError("--config needs a file path");
      path = argv[++i];
    } else if (a.rfind("--config=", 0) == 0) {
      path = a.substr(9);
    } else {
      out.push_back(a);
      continue;
    }
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      const std::string s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError(path + ":" + std::to_string(ln) +
                          ": expected key=value");
      out.push_back("--" + trim(s.substr(0, eq)) + "=" +
                    trim(s.substr(eq + 1)));
    }
  }
  return out;
}

// ============================================================================
// generate
// ============================================================================

struct GenOpts {
  std::string out = "dataset.kds";
  double eps = 1.0;
  double dt = 5e-7;
  int nx = 1000;
  int nv = 16;
  int nt = 56;  // stored frames; fine steps = nt * stride_t
  int stride_x = 5;
  int stride_t = 50;
  std::string sigma_s = "const:1";
  std::string sigma_a = "const:0";
  std::string source = "const:0";
  std::string init = "equilibrium";
};

int run_generate(const GenOpts& o) {
  PhysicsSpec phys;
  phys.eps = o.eps;
  phys.sigma_s = SpatialProfile::parse(o.sigma_s);
  phys.sigma_a = SpatialProfile::parse(o.sigma_a);
  phys.source = SpatialProfile::parse(o.source);
  PhaseGrid grid = make_grid(o.nx, o.nv);

  if (o.nt < 1) throw ConfigError("nt must be at least 1");
  const int nt_fine = o.nt * o.stride_t;
  Dataset ds;
  if (o.init == "zero") {
    // Cold start: fluctuation at rest, so early frames sit inside the
    // relaxation layer instead of tracking the local equilibrium.
    KineticState st;
    st.rho = default_rho0(grid);
    st.g = FieldG::Zero(o.nv, o.nx);
    ds = generate_dataset(phys, grid, o.dt, nt_fine, o.stride_x, o.stride_t,
                          &st);
  } else {
    ds = generate_dataset(phys, grid, o.dt, nt_fine, o.stride_x, o.stride_t);
  }
  save_dataset(ds, o.out);

  std::string meta;
  meta += "command=generate\n";
  meta += "out=" + o.out + "\n";
  meta += "eps=" + fmt_g(o.eps) + "\n";
  meta += "dt=" + fmt_g(o.dt) + "\n";
  meta += "nx=" + std::to_string(o.nx) + "\n";
  meta += "nv=" + std::to_string(o.nv) + "\n";
  meta += "nt=" + std::to_string(o.nt) + "\n";
  meta += "stride_x=" + std::to_string(o.stride_x) + "\n";
  meta += "stride_t=" + std::to_string(o.stride_t) + "\n";
  meta += "sigma_s=" + o.sigma_s + "\n";
  meta += "sigma_a=" + o.sigma_a + "\n";
  meta += "source=" + o.source + "\n";
  meta += "init=" + o.init + "\n";
  save_text(meta, o.out + ".meta");

  std::printf("wrote %s: %d frames of %d x %d at dt=%g, eps=%g\n",
              o.out.c_str(), ds.nt(), ds.grid.nv, ds.grid.nx, ds.dt, ds.eps);
  return 0;
}

// ============================================================================
// train
// ============================================================================

struct TrainOpts {
  std::string data;
  std::string checkpoint_out = "checkpoint.txt";
  std::string history;
  std::string scheme = "imex1";
  std::string norm = "l1";
  std::string components = "two_component";
  std::string base_ops = "identity,advection,projection";
  std::string sigma_s_mode = "known";
  std::string eps_mode = "global";
  double huber_delta = 1.0;
  double lambda_sparse = 1e-4;
  double lambda_cont = 1e-3;
  double lambda_meanfree = 0.0;
  double lr = 1e-3;
  double w_eps0 = 0.0;
  int depth = 1;
  int multiscale = 0;
  int adv_order = 1;
  int readout_np = 1;
  int readout_deg = 1;
  int sigma_np = 1;
  int sigma_deg = 1;
  int interval = 0;
  int iters = 2000;
  int batch = 0;
  int log_every = 100;
  int sweep_lo = 0;
  int sweep_hi = 6;
  bool no_mask = false;
  bool readout_spatial = false;
  bool per_scale_lr = false;
  bool no_timing = false;
  bool sweep = false;
  std::uint64_t seed = 0;
};

int run_train(const TrainOpts& o) {
  const Dataset ds = load_dataset(o.data);

  AnsatzConfig cfg;
  cfg.base_ops = parse_ops(o.base_ops);
  cfg.K = o.depth;
  cfg.M = o.multiscale;
  cfg.components = components_from_name(o.components);
  cfg.mean_free_mask = !o.no_mask;
  cfg.adv_order = o.adv_order;
  cfg.readout_spatial = o.readout_spatial;
  cfg.readout_shape = SpatialShape{o.readout_np, o.readout_deg};
  cfg.validate();

  ScaleParams sc;
  sc.mode = o.eps_mode == "interval" ? EpsMode::Interval : EpsMode::Global;
  sc.interval = o.interval;
  sc.w_eps = o.w_eps0;

  const SigmaSMode smode = sigma_s_mode_from_name(o.sigma_s_mode);
  const ModelParams init =
      make_model(cfg, sc, smode, SpatialShape{o.sigma_np, o.sigma_deg}, o.seed);

  TrainConfig tc;
  tc.loss.scheme = parse_scheme(o.scheme);
  tc.loss.norm = norm_from_name(o.norm);
  tc.loss.huber_delta = o.huber_delta;
  tc.loss.lambda_sparse = o.lambda_sparse;
  tc.loss.lambda_cont = o.lambda_cont;
  tc.loss.lambda_meanfree = o.lambda_meanfree;
  tc.iters = o.iters;
  tc.batch = o.batch;
  tc.lr = o.lr;
  tc.per_scale_lr = o.per_scale_lr;
  tc.seed = o.seed;
  tc.log_every = o.log_every;
  tc.history_path = o.history;
  tc.timing = !o.no_timing;

  const TrainResult r = o.sweep
                            ? train_interval_sweep(init, ds, tc, o.sweep_lo,
                                                   o.sweep_hi)
                            : train_model(init, ds, tc);
  save_checkpoint(o.checkpoint_out, r.params);

  std::printf("final loss %.6g  eps_pred %.6g%s\n", r.final_loss,
              eps_pred(r.params.scale),
              r.diverged ? "  (diverged; last finite iterate kept)" : "");
  if (r.interval >= 0) std::printf("scale bracket %d\n", r.interval);
  std::printf("wrote %s\n", o.checkpoint_out.c_str());
  return 0;
}

// ============================================================================
// extract
// ============================================================================

struct ExtractOpts {
  std::string checkpoint;
  std::string data;
  std::string out_prefix = "report";
  double prune = 1e-3;
};

int run_extract(const ExtractOpts& o) {
  const ModelParams mp = load_checkpoint(o.checkpoint);
  const Dataset ds = load_dataset(o.data);
  const ExtractReport rep = extract_report(mp, ds, o.prune);

  save_report_csv(rep, o.out_prefix + ".csv");
  std::string txt;
  if (!rep.pde_g.empty()) txt += rep.pde_g + "\n";
  if (!rep.pde_rho.empty()) txt += rep.pde_rho + "\n";
  save_text(txt, o.out_prefix + ".txt");

  std::fputs(txt.c_str(), stdout);
  std::printf("type1 %.6g%%  type2 %.6g%%\n", rep.err.type1_pct,
              rep.err.type2_pct);
  std::printf("wrote %s.csv\n", o.out_prefix.c_str());
  return 0;
}

// ============================================================================
// compare
// ============================================================================

struct CompareOpts {
  std::string data;
  std::string method;
  std::string out_prefix = "baseline";
  int lasso_iters = 2000;
  int sweeps = 10;
  double ridge_lambda = 1e-8;
  double threshold_frac = 0.1;
};

int run_compare(const CompareOpts& o) {
  const Dataset ds = load_dataset(o.data);
  const BaselineResult r =
      o.method == "lasso"
          ? lasso_baseline(ds, o.lasso_iters)
          : stridge_baseline(ds, o.ridge_lambda, o.threshold_frac, o.sweeps);

  save_report_csv(r.report, o.out_prefix + ".csv");
  save_text(r.report.pde_g + "\n", o.out_prefix + ".txt");

  std::printf("%s\n", r.report.pde_g.c_str());
  if (o.method == "lasso") std::printf("alpha %g\n", r.alpha);
  std::printf("type1 %.6g%%  type2 %.6g%%\n", r.report.err.type1_pct,
              r.report.err.type2_pct);
  std::printf("wrote %s.csv\n", o.out_prefix.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiscale kinetic transport: simulate and recover the PDE"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  // Config expansion can repeat a key; the later (explicit) token wins.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenOpts g;
  CLI::App* gen = app.add_subcommand("generate", "simulate and store a trajectory dataset");
  gen->add_option("--config", "read options from a key=value file; later flags override")->type_name("FILE");
  gen->add_option("--out", g.out, "dataset output path (KDS1)");
  gen->add_option("--eps", g.eps, "scale parameter");
  gen->add_option("--dt", g.dt, "fine solver step");
  gen->add_option("--nx", g.nx, "fine spatial cells");
  gen->add_option("--nv", g.nv, "velocity quadrature nodes");
  gen->add_option("--nt", g.nt, "stored frames (fine steps = nt * stride-t)");
  gen->add_option("--stride-x", g.stride_x, "spatial subsampling stride");
  gen->add_option("--stride-t", g.stride_t, "temporal subsampling stride");
  gen->add_option("--sigma-s", g.sigma_s, "scattering profile (const:v | poly:a0,a1,...)");
  gen->add_option("--sigma-a", g.sigma_a, "absorption profile");
  gen->add_option("--source", g.source, "source profile");
  gen->add_option("--init", g.init, "initial fluctuation")
      ->check(CLI::IsMember({"equilibrium", "zero"}));

  TrainOpts t;
  CLI::App* tr = app.add_subcommand("train", "fit the symbolic model to a dataset");
  tr->add_option("--config", "read options from a key=value file; later flags override")->type_name("FILE");
  tr->add_option("--data", t.data, "dataset path")->required()->check(CLI::ExistingFile);
  tr->add_option("--checkpoint-out", t.checkpoint_out, "checkpoint output path");
  tr->add_option("--history", t.history, "iteration history CSV path (empty: none)");
  tr->add_option("--scheme", t.scheme, "fitting scheme (fe|be|imex1|ars222|bdf2|bdf3|bdf4)");
  tr->add_option("--norm", t.norm, "residual norm (l1|l2|huber)");
  tr->add_option("--huber-delta", t.huber_delta, "huber transition point");
  tr->add_option("--lambda-sparse", t.lambda_sparse, "dictionary sparsity weight");
  tr->add_option("--lambda-cont", t.lambda_cont, "spatial continuity weight");
  tr->add_option("--lambda-meanfree", t.lambda_meanfree, "soft mean-free penalty weight");
  tr->add_option("--components", t.components, "equations to learn (two_component|g_only|rho_only)");
  tr->add_option("--base-ops", t.base_ops, "comma-separated base operators");
  tr->add_option("--depth", t.depth, "composition depth K");
  tr->add_option("--multiscale", t.multiscale, "highest inverse scale power M");
  tr->add_flag("--no-mask", t.no_mask, "drop the structural mean-free mask");
  tr->add_option("--adv-order", t.adv_order, "upwind order of learned advection");
  tr->add_flag("--readout-spatial", t.readout_spatial, "space-dependent readout weights");
  tr->add_option("--readout-np", t.readout_np, "readout pieces");
  tr->add_option("--readout-deg", t.readout_deg, "readout polynomial degree");
  tr->add_option("--sigma-s-mode", t.sigma_s_mode, "scattering handling (known|train_scalar|train_spatial)");
  tr->add_option("--sigma-np", t.sigma_np, "trained scattering pieces");
  tr->add_option("--sigma-deg", t.sigma_deg, "trained scattering degree");
  tr->add_option("--eps-mode", t.eps_mode, "scale parametrization (global|interval)")
      ->check(CLI::IsMember({"global", "interval"}));
  tr->add_option("--interval", t.interval, "decade index for interval mode");
  tr->add_option("--w-eps0", t.w_eps0, "initial scale weight");
  tr->add_option("--iters", t.iters, "gradient steps");
  tr->add_option("--batch", t.batch, "fit windows per step (0: full batch)");
  tr->add_option("--lr", t.lr, "learning rate");
  tr->add_flag("--per-scale-lr", t.per_scale_lr, "scale rates by eps_pred^m");
  tr->add_option("--seed", t.seed, "seed for init and minibatching");
  tr->add_option("--log-every", t.log_every, "history cadence");
  tr->add_flag("--no-timing", t.no_timing, "log 0.000 seconds for repeatable history files");
  tr->add_flag("--interval-sweep", t.sweep, "train one bracket per decade, keep the best");
  tr->add_option("--sweep-lo", t.sweep_lo, "lowest decade index");
  tr->add_option("--sweep-hi", t.sweep_hi, "highest decade index");

  ExtractOpts e;
  CLI::App* ex = app.add_subcommand("extract", "render the learned equation and its errors");
  ex->add_option("--config", "read options from a key=value file; later flags override")->type_name("FILE");
  ex->add_option("--checkpoint", e.checkpoint, "trained checkpoint path")
      ->required()
      ->check(CLI::ExistingFile);
  ex->add_option("--data", e.data, "dataset path (for truth and folding)")
      ->required()
      ->check(CLI::ExistingFile);
  ex->add_option("--out-prefix", e.out_prefix, "report path prefix");
  ex->add_option("--prune", e.prune, "relative coefficient cutoff");

  CompareOpts c;
  CLI::App* cm = app.add_subcommand("compare", "run a sparse-regression baseline");
  cm->add_option("--config", "read options from a key=value file; later flags override")->type_name("FILE");
  cm->add_option("--data", c.data, "dataset path")->required()->check(CLI::ExistingFile);
  cm->add_option("--method", c.method, "baseline (lasso|stridge)")
      ->required()
      ->check(CLI::IsMember({"lasso", "stridge"}));
  cm->add_option("--out-prefix", c.out_prefix, "report path prefix");
  cm->add_option("--lasso-iters", c.lasso_iters, "coordinate-descent sweeps");
  cm->add_option("--ridge-lambda", c.ridge_lambda, "ridge regularization");
  cm->add_option("--threshold-frac", c.threshold_frac, "hard threshold as a fraction of the first-pass maximum");
  cm->add_option("--sweeps", c.sweeps, "threshold-and-refit rounds");

  int rc = 0;
  gen->callback([&] { rc = run_generate(g); });
  tr->callback([&] { rc = run_train(t); });
  ex->callback([&] { rc = run_extract(e); });
  cm->callback([&] { rc = run_compare(c); });

  try {
    std::vector<std::string> args = expand_config_args(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const InstabilityError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 3;
  } catch (const IoError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 4;
  }
  return rc;
}
