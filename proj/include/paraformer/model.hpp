#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "paraformer/blocks.hpp"
#include "paraformer/tensor.hpp"

namespace paraformer {

enum class Topology { Serial, Parallel };
enum class Precision { F32, F64 };
Precision precision_from_string(const std::string& name);
const char* precision_name(Precision p);

// Topology and dimensions of a model. Name grammar (case-insensitive):
//   para-former-<m>-<n>  m = blocks per branch, n = parallel branches
//   vit-<d>              serial stack of d blocks (stored as 1 branch)
struct ModelSpec {
  Topology topology = Topology::Parallel;
  int depth = 1;     // blocks per branch
  int branches = 1;  // serial => 1
  int embed_dim = 32;
  int heads = 4;
  int ffn_dim = 64;
  int patch = 4;
  int channels = 3;
  int img_h = 32;
  int img_w = 32;
  int classes = 10;
  BlockVariant variant = BlockVariant::Practical;
  Activation act = Activation::Gelu;
  std::uint64_t seed = 0;
  Precision precision = Precision::F64;

  std::string name() const;
  // Parses only the topology part of the name into an existing spec.
  static ModelSpec from_name(const std::string& name, ModelSpec defaults);
  static ModelSpec from_name(const std::string& name);
  void validate() const;
  int patch_count() const { return (img_h / patch) * (img_w / patch); }
  int seq_len() const { return patch_count() + 1; }
};

// Instantiated network: shared embedding, n branches of m blocks each,
// shared classifier head. Branch order is part of the model's identity.
struct Model {
  ModelSpec spec;
  EmbedParams embed;
  std::vector<std::vector<BlockParams>> branches;
  Tensor head_w;  // [d x K]
  Tensor head_b;  // [K]

  // Visits every parameter in the fixed serialization order
  // (embed, branches ascending, blocks ascending, head).
  void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_param(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  void set_requires_grad(bool v);
  void zero_grads();
};

// Deterministic seeded construction; parameters are drawn in the
// for_each_param order. With precision F32 every parameter is rounded to
// the nearest float after initialization.
Model build(const ModelSpec& spec);

// tokens -> m-fold block chain of one branch.
Tensor branch_forward(const Model& model, const Tensor& tokens, int branch);

// Full forward: embed, every branch on the shared tokens, branch outputs
// summed in ascending index order, classifier head. Returns [K].
Tensor forward(const Model& model, const Tensor& image);

// Batched forward over [B x C x H x W]; per-sample results are produced by
// the same code path as forward(). Returns [B x K].
Tensor forward_batch(const Model& model, const Tensor& images);

struct ParamCount {
  long long embed = 0;
  long long branches = 0;
  long long head = 0;
  long long total() const { return embed + branches + head; }
};
ParamCount param_count(const Model& model);

// Rounds every parameter through float (used for precision F32 models).
void round_params_to_f32(Model& model);

}  // namespace paraformer
