#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "paraformer/blocks.hpp"
#include "paraformer/tensor.hpp"

namespace paraformer {

// Flattening convention: an [S x d] token matrix is column-stacked,
// vec(X)[f*S + s] = X[s, f]. All materialized operators below follow it.
Tensor vec_tokens(const Tensor& x);
Tensor unvec_tokens(const Tensor& v, int seq, int dim);

// Dense materialization is capped at this many rows/columns per axis.
inline constexpr int kLiftCapacity = 512;

// One encoder layer in flattened form:
//   next = w1*v + b3 + w3*sigma(w2_arg + b2)
// where w2_arg = w2*(w1*v) when w2 holds the raw position-block map, or
// w2*v when w2 has been pre-composed with w1 (w2_composed distinguishes).
struct LiftedLayer {
  Tensor w1;  // [(S*d) x (S*d)] attention map, identity added for the residual
  Tensor w2;  // [(S*ffn) x (S*d)]
  Tensor b2;  // [S*ffn]
  Tensor w3;  // [(S*d) x (S*ffn)]
  Tensor b3;  // [S*d]
  bool w2_composed = false;

  Tensor apply(const Tensor& v, Activation act) const;
};

// Accumulated parameters of the depth-L flattened sum form
//   x_L = p*v0 + q + sum_j u[j]*sigma(v[j]*v0 + c[j]),
// built by the layer-folding recursion. Terms are indexed j = 0..L-1 in
// layer order; v[j] and c[j] are final once created, u[j] and (p, q) keep
// absorbing later attention maps.
struct ExpansionState {
  int depth = 0;
  int seq = 0;
  int dim = 0;
  int ffn_dim = 0;
  Tensor p;
  Tensor q;
  std::vector<Tensor> u;
  std::vector<Tensor> v;
  std::vector<Tensor> c;
  // Per-layer raw pieces kept for input-dependence checks: attention maps
  // (input-dependent) and the position-replicated FFN blocks (static).
  std::vector<Tensor> attention;  // w1 per layer
  std::vector<LiftedLayer> raw_ffn;

  Tensor evaluate(const Tensor& v0, Activation act) const;
};

// Materialize the linear map vec(x) -> vec(mha_forward(x)) with the
// attention pattern frozen at x. Adds the identity when include_residual.
Tensor lift_mha(const Tensor& x, const BlockParams& p, bool include_residual);

// Position-replicated FFN pieces (w1 left undefined): block structure of
// w2/w3 follows the column-stacking convention, biases are replicated
// feature-major.
LiftedLayer lift_ffn(const BlockParams& p, int seq);

// Full single-layer flattened form at x0. Returned layer stores w2
// pre-composed with w1; the first element is the flattened layer output.
std::pair<Tensor, LiftedLayer> expand_single_layer(const Tensor& x0, const BlockParams& p,
                                                   Activation act = Activation::Sigmoid);

// Fold a whole stack of strict blocks into the sum form. Attention for
// layer t is frozen at the true forward activations of layers 1..t-1.
std::pair<Tensor, ExpansionState> expand_multi_layer(const Tensor& x0,
                                                     const std::vector<BlockParams>& layers,
                                                     Activation act = Activation::Sigmoid);

// Independent route to the dynamic bias of term j (1-based, j >= 2):
// flatten the actual forward state after j-1 layers instead of running the
// bias recursion. Used to cross-check ExpansionState::c.
Tensor bias_from_partial_forward(const Tensor& x0, const std::vector<BlockParams>& layers, int j,
                                 Activation act = Activation::Sigmoid);

// --- bookkeeping -----------------------------------------------------------

// Input-dependent parameter count of one serial stack; tabulated for
// depths 1, 2, 3, 6 only, refused otherwise.
int serial_dof(int depth);
bool serial_dof_supported(int depth);

// branches * serial_dof(depth).
long long degrees_of_freedom(int depth, int branches);

struct BiasUatLayers {
  std::vector<int> per_branch;  // empty for depth 1, otherwise 1..depth
  long long per_branch_sum = 0;
  long long total = 0;  // branches * per_branch_sum
};
BiasUatLayers bias_uat_layers(int depth, int branches);

// Bookkeeping for a configuration labeled by depth and TOTAL block count
// (the dof table convention), so branches = total/depth. Refuses labels
// whose depth does not divide the total.
struct LabelBookkeeping {
  int depth = 0;
  int total_blocks = 0;
  int branches = 0;
  long long dof = 0;
  BiasUatLayers bias;
};
LabelBookkeeping label_bookkeeping(int depth, int total_blocks);

// --- verification ----------------------------------------------------------

struct VerifyRow {
  std::string construct;
  std::string dims;
  double max_abs_err = 0.0;
  std::optional<double> tolerance;  // empty = report-only
  bool pass = true;
};

struct VerifyReport {
  std::vector<VerifyRow> rows;
  bool all_pass() const;
  std::string to_table() const;
};

struct VerifyOptions {
  int seq = 3;
  int dim = 4;
  int heads = 2;
  int ffn_dim = 8;
  std::vector<int> depths = {1, 2, 3};
  int seeds = 5;
  std::optional<double> tolerance;  // overrides the per-construct defaults
  std::uint64_t seed0 = 1;
};

// Runs the lifting and expansion suites against direct forward passes and
// returns one row per construct with the worst error across seeds.
VerifyReport run_verification(const VerifyOptions& opt);

}  // namespace paraformer
