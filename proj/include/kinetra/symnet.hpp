/// @file symnet.hpp
/// Operator-composition network whose forward map is kept in closed
/// symbolic form: every layer composes affine combinations of base
/// operators, so the whole network collapses to a dictionary of operator
/// words with polynomial coefficients in the weights.  Training therefore
/// needs only a scalar tape for the coefficients plus field-level adjoints.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kinetra/grid.hpp"
#include "kinetra/operators.hpp"
#include "kinetra/spatial_weight.hpp"
#include "kinetra/tape.hpp"

namespace kinetra {

// ============================================================================
// Trainable scale
// ============================================================================

enum class EpsMode { Global, Interval };

struct ScaleParams {
  EpsMode mode = EpsMode::Global;
  int interval = 0;  // Interval mode: predicted scale lives in [0.1^{i+1}, 0.1^i]
  double w_eps = 0.0;
};

// Predicted scales below this are treated as degenerate (ScaleError).
inline constexpr double kEpsFloor = 1e-8;

// Global mode squashes onto (0, 1); interval mode onto the decade
// [0.1^{i+1}, 0.1^i].  Generic over plain and taped scalars.
template <typename S>
S eps_pred_of(S w, EpsMode mode, int interval) {
  S t = tanh(w);
  if (mode == EpsMode::Global) return (t + 1.0) * 0.5;
  double hi = 1.0, lo = 1.0;
  for (int i = 0; i < interval; ++i) hi *= 0.1;
  lo = hi * 0.1;
  return lo + (t + 1.0) * (0.5 * (hi - lo));
}

double eps_pred(const ScaleParams& sc);

// ============================================================================
// Ansatz configuration
// ============================================================================

// Which (equation, input) pairs get their own network:
//   TwoComponent: (1,g) (1,rho) (2,g) (2,rho)
//   GOnly:        (1,g) (1,rho)          -- density advanced by known physics
//   RhoOnly:      (2,g) (2,rho)          -- density equation alone
enum class Components { TwoComponent, GOnly, RhoOnly };

struct PairKey {
  int q = 1;  // equation: 1 = fluctuation, 2 = density
  int p = 1;  // input:    1 = g,           2 = lifted density
};

std::vector<PairKey> pairs_of(Components c);
const char* components_name(Components c);
Components components_from_name(const std::string& s);

struct AnsatzConfig {
  std::vector<OpTag> base_ops = {OpTag::Identity, OpTag::Advection,
                                 OpTag::Projection};
  int K = 1;  // composition depth
  int M = 0;  // highest inverse power of the predicted scale
  Components components = Components::TwoComponent;
  // Structurally exclude Identity/Projection columns and the bias from the
  // second factor of every composition, and post-compose the g-equation
  // output with (I - P) so it is mean free for every parameter value.
  bool mean_free_mask = true;
  int adv_order = 1;  // upwind order used by g-equation advection words
  bool readout_spatial = false;
  SpatialShape readout_shape{};

  int n_base() const { return static_cast<int>(base_ops.size()); }
  int dict_cols() const { return n_base() + K; }
  void validate() const;
};

// ============================================================================
// Parameters
// ============================================================================

// One network: K composition layers plus a readout over the n base
// operators and the K composed columns.
struct LayerNet {
  std::vector<MatX> W;             // layer k: 2 x (n + k - 1)
  std::vector<Eigen::Vector2d> B;  // layer k: bias pair
  VecX readout;                    // n + K (scalar readout)
  MatX readout_sp;                 // (n + K) x (np*(deg+1)) when spatial
};

enum class SigmaSMode { Known, TrainScalar, TrainSpatial };
const char* sigma_s_mode_name(SigmaSMode m);
SigmaSMode sigma_s_mode_from_name(const std::string& s);

struct PhysicsModel {
  SigmaSMode sigma_s_mode = SigmaSMode::Known;
  double w_sigma_s = 1.0;     // TrainScalar
  SpatialWeight sigma_s_sp;   // TrainSpatial
};

struct ModelParams {
  AnsatzConfig cfg;
  ScaleParams scale;
  std::vector<std::vector<LayerNet>> nets;  // [pair][m], m = 0..M
  PhysicsModel phys;
};

// Allocates all arrays and draws network entries uniformly from
// [-0.05, 0.05]; the scale weight comes from `scale`, trainable scattering
// starts at 1 (constant piece values for the spatial mode).
ModelParams make_model(const AnsatzConfig& cfg, const ScaleParams& scale,
                       SigmaSMode smode, const SpatialShape& sigma_shape,
                       std::uint64_t seed);

// ----------------------------------------------------------------------------
// Flat parameter vector
// ----------------------------------------------------------------------------

// Mirrors the parameter structs with flat-vector indices; -1 marks entries
// pinned to zero by the mean-free mask (they never enter the vector).
struct ParamLayout {
  struct NetIdx {
    std::vector<Eigen::MatrixXi> W;
    std::vector<Eigen::Vector2i> B;
    Eigen::VectorXi readout;
    Eigen::MatrixXi readout_sp;
  };
  std::vector<std::vector<NetIdx>> nets;
  int w_eps = -1;
  int w_sigma_s = -1;
  Eigen::MatrixXi sigma_sp;  // np x (deg+1) when spatial, else 0x0

  int total = 0;
  std::vector<int> scale_tag;           // inverse-scale power of each entry
  std::vector<unsigned char> sparsity;  // 1 = counts in the L1 dictionary term
};

ParamLayout build_layout(const ModelParams& shape);
VecX flatten(const ModelParams& mp, const ParamLayout& lay);
void unflatten(const VecX& v, const ParamLayout& lay, ModelParams& mp);

// ============================================================================
// Expanded symbolic form
// ============================================================================

// Word coefficient: constant part plus an optional per-column spatial part
// sampled on the evaluation grid of the owning table.
struct SpCoef {
  double scalar = 0.0;
  VecX sp;  // empty when purely constant
  bool is_spatial() const { return sp.size() > 0; }
  double at(Eigen::Index j) const {
    return scalar + (sp.size() > 0 ? sp[j] : 0.0);
  }
};

struct PairTable {
  PairKey key;
  std::vector<Word> words;  // ascending
  std::vector<SpCoef> coef;
  WordSet wset;
};

struct SymbolicModel {
  AnsatzConfig cfg;
  double eps = 1.0;  // predicted scale
  std::vector<PairTable> tables;
  VecX stiff_faces;  // s(x) = sigma_model(x) / eps^2 at faces
};

// Collapses the network of `mp` to word tables with the scale powers folded
// in.  `sigma_s_known_faces` supplies the scattering samples when the
// physics mode is Known (pass the dataset's face values).
SymbolicModel expand_model(const ModelParams& mp, const PhaseGrid& grid,
                           const VecX& sigma_s_known_faces);

struct AnsatzValue {
  bool has1 = false, has2 = false;
  FieldG F1;    // g-equation right side before the stiff relaxation term
  FieldRho F2;  // density-equation right side before absorption and source
};

AnsatzValue eval_ansatz(const SymbolicModel& sm, const PhaseGrid& grid,
                        const FieldG& gf, const FieldRho& rho);

// ----------------------------------------------------------------------------
// Taped expansion (gradients)
// ----------------------------------------------------------------------------

struct TapedCoef {
  int node = -1;       // constant part, -1 if absent
  Eigen::VectorXi sp;  // per-column nodes, empty if absent

  double value_at(const Tape& t, Eigen::Index j) const {
    double v = node >= 0 ? t.value(node) : 0.0;
    if (sp.size() > 0) v += t.value(sp[j]);
    return v;
  }
  // Seed with per-column loss derivatives (the constant part receives the
  // column sum).
  void seed_per_col(Tape& t, const VecX& w) const {
    if (node >= 0) t.seed(node, w.sum());
    for (Eigen::Index j = 0; j < sp.size(); ++j) t.seed(sp[j], w[j]);
  }
};

struct TapedPairTable {
  PairKey key;
  std::vector<Word> words;
  std::vector<TapedCoef> coef;
};

struct TapedModel {
  AnsatzConfig cfg;
  ParamLayout layout;
  Tape tape;
  std::vector<int> leaf;  // flat index -> tape node (identity by construction)
  std::vector<TapedPairTable> tables;
  Eigen::VectorXi s_nodes;  // stiff scale per face column
  int eps_node = -1;

  double eps_value() const { return tape.value(eps_node); }
  // Numeric snapshot sharing the taped coefficient values.
  SymbolicModel numeric() const;
};

TapedModel build_taped_model(const ModelParams& mp, const PhaseGrid& grid,
                             const VecX& sigma_s_known_faces);

// Regularizer nodes built on the model's tape from the same leaves:
// L1 norm of the network dictionary entries, and summed squared continuity
// jumps of every spatial readout row and the spatial scattering profile.
int taped_l1_net(TapedModel& tm);
int taped_continuity(TapedModel& tm);

}  // namespace kinetra
