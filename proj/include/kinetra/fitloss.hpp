/// @file fitloss.hpp
/// Time-scheme fitting residuals and the training loss.  A residual window
/// plugs stored trajectory slices into a one-step or multistep scheme whose
/// right side is the model ansatz; at the true dynamics every residual is
/// the scheme's local truncation error.  Stiff relaxation always sits in
/// the implicit slot, so the predicted-scale weight is exercised by the
/// same mechanism that makes the schemes stable in forward time.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "kinetra/dataset.hpp"
#include "kinetra/symnet.hpp"

namespace kinetra {

// ============================================================================
// Schemes
// ============================================================================

enum class Scheme {
  ForwardEuler,   // everything, including relaxation, at the old slice
  BackwardEuler,  // everything at the new slice
  Imex1,          // relaxation/flux at the new slice, transport at the old
  Ars222,         // staged reconstruction mirroring the reference solver
  Bdf2,
  Bdf3,
  Bdf4,
};

const char* scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& s);
int scheme_order(Scheme s);   // formal temporal order p (residual is O(dt^{p+1}))
int scheme_window(Scheme s);  // data slices consumed per residual

// Implicit-explicit backward differentiation tables:
//   sum_i alpha[i] y^{n+i} = dt * beta * f_stiff(y^{n+q})
//                          + dt * sum_{i<q} gamma[i] * f_expl(y^{n+i})
// with index 0 the oldest slice.  q = 1 reproduces Imex1.
struct BdfTable {
  int q = 1;
  std::array<double, 5> alpha{};
  std::array<double, 4> gamma{};
  double beta = 0.0;
};
BdfTable bdf_table(int q);  // q in [1, 4]

// Slice-weight form shared by every non-staged scheme:
//   K_g   = sum_i alpha[i] g_i + dt sum_i w_stiff[i] s.g_i
//           + dt sum_i w_expl[i] sigma_a.g_i - dt sum_i w_expl[i] F1_i
//   K_rho = sum_i alpha[i] rho_i + dt sum_i w_expl[i] (sigma_a rho_i - G)
//           - dt sum_i w_flux[i] F2g_i - dt sum_i w_expl[i] F2rho_i
// where F2g / F2rho are the fluctuation-input and density-input parts of
// the learned density equation.
struct AffineWeights {
  int window = 2;
  std::array<double, 5> alpha{};
  std::array<double, 5> w_stiff{};
  std::array<double, 5> w_expl{};
  std::array<double, 5> w_flux{};
};
AffineWeights affine_weights(Scheme s);  // ConfigError for Ars222

// ============================================================================
// Residual norms
// ============================================================================

enum class NormKind { L1, L2, Huber };
const char* norm_name(NormKind k);
NormKind norm_from_name(const std::string& s);

// Measure-weighted size of a residual: the velocity measure contributes a
// factor 2 for fluctuation fields, 1 for density vectors.
//   L1: mean absolute value, L2: root mean square, Huber: mean Huber value.
double residual_norm(const FieldG& K, NormKind k, double delta);
double residual_norm(const FieldRho& K, NormKind k, double delta);
FieldG residual_norm_grad(const FieldG& K, NormKind k, double delta);
FieldRho residual_norm_grad(const FieldRho& K, NormKind k, double delta);

// ============================================================================
// Loss configuration
// ============================================================================

struct LossConfig {
  Scheme scheme = Scheme::Imex1;
  NormKind norm = NormKind::L1;
  double huber_delta = 1.0;
  double lambda_sparse = 1e-4;   // L1 on the network dictionary entries
  double lambda_cont = 1e-3;     // squared continuity jumps of spatial weights
  double lambda_meanfree = 0.0;  // soft velocity-average penalty on the
                                 // g-equation ansatz (the structural mask
                                 // usually makes it unnecessary)
};

// ============================================================================
// Workspace
// ============================================================================

// Word applications to the stored trajectory, cached once per dataset: the
// word lists are structural, so the cache stays valid while training.
// Fluctuation-equation words keep full fields; density-equation words only
// need their velocity averages.
struct FitWorkspace {
  SymbolicModel proto;          // word lists / evaluation plans
  std::vector<int> idx1, idx2;  // table indices of the g / rho equation
  VecX sa_f, sa_c;              // absorption at faces / centers
  std::vector<std::vector<std::vector<FieldG>>> wg;    // [slice][i1][word]
  std::vector<std::vector<std::vector<FieldRho>>> wr;  // [slice][i2][word]
};

FitWorkspace build_workspace(const SymbolicModel& sm, const Dataset& ds);

// Number of valid window start indices for a scheme on this dataset.
int fit_windows(const Dataset& ds, Scheme s);

// ============================================================================
// Residuals and loss
// ============================================================================

struct StepResidual {
  bool has_g = false, has_rho = false;
  FieldG Kg;
  FieldRho Krho;
};

// Residual of one scheme window starting at slice n.  The model must share
// the ansatz structure the workspace was built from.
StepResidual scheme_residual(const SymbolicModel& sm, const Dataset& ds,
                             const FitWorkspace& ws, Scheme scheme, int n);

// Mean over the batch of the residual norms (plus the optional mean-free
// penalty) and the parameter regularizers.  `batch` holds window start
// indices.  Throws ConfigError for a staged scheme without the g-equation
// ansatz or with nonlinear base operators.
double loss_only(const ModelParams& mp, const Dataset& ds,
                 const FitWorkspace& ws, const LossConfig& cfg,
                 const std::vector<int>& batch);

// Same value, and the gradient with respect to the flat parameter vector.
double loss_and_grad(const ModelParams& mp, const Dataset& ds,
                     const FitWorkspace& ws, const LossConfig& cfg,
                     const std::vector<int>& batch, VecX& grad);

}  // namespace kinetra
