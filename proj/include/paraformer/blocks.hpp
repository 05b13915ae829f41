#pragma once

#include <vector>

#include "paraformer/ops.hpp"
#include "paraformer/rng.hpp"
#include "paraformer/tensor.hpp"

namespace paraformer {

enum class BlockVariant { Strict, Practical };
BlockVariant block_variant_from_string(const std::string& name);
const char* block_variant_name(BlockVariant v);

// One encoder block's parameters. Heads evenly partition the embedding:
// heads * head_dim == embed_dim.
struct BlockParams {
  int embed_dim = 0;
  int heads = 0;
  int head_dim = 0;
  int ffn_dim = 0;
  BlockVariant variant = BlockVariant::Strict;

  std::vector<Tensor> wq, wk, wv;  // per head, [d x head_dim]
  Tensor wo;                       // [heads*head_dim x d]
  Tensor w1, b1;                   // [d x ffn_dim], [ffn_dim]
  Tensor w2, b2;                   // [ffn_dim x d], [d]
  // defined for the practical variant only
  Tensor gamma1, beta1, gamma2, beta2;  // [d] each

  static BlockParams init(int embed_dim, int heads, int ffn_dim, BlockVariant variant, Rng& rng);
  void validate() const;
};

// Patch embedding parameters: linear projection of flattened patches, a
// learned class token, and an additive positional table covering S+1 rows.
struct EmbedParams {
  int patch = 0;
  int channels = 0;
  int img_h = 0;
  int img_w = 0;
  int embed_dim = 0;

  Tensor patch_w;  // [patch*patch*channels x d]
  Tensor patch_b;  // [d]
  Tensor cls;      // [d]
  Tensor pos;      // [S+1 x d]

  int patch_count() const { return (img_h / patch) * (img_w / patch); }
  int seq_len() const { return patch_count() + 1; }

  static EmbedParams init(int patch, int channels, int img_h, int img_w, int embed_dim, Rng& rng);
};

// Scaled dot-product multi-head attention without residual:
// per head A = softmax_rows((xWq)(xWk)^T / sqrt(head_dim)), head = A (xWv);
// heads concatenated along columns, then projected by wo.
Tensor mha_forward(const Tensor& x, const BlockParams& p);

// Position-wise feed-forward: per row, sigma(row*w1 + b1)*w2 + b2.
Tensor ffn_forward(const Tensor& x, const BlockParams& p, Activation kind);

// strict:    y = x + mha(x);            out = y + ffn(y)
// practical: y = x + mha(layer_norm(x)); out = y + ffn(layer_norm(y))
Tensor encoder_block_forward(const Tensor& x, const BlockParams& p, BlockVariant variant,
                             Activation kind);

// Cut the image into non-overlapping P x P patches, flatten each patch
// channel-major (then row-major within a channel), project, prepend the
// class token and add the positional table. Output is [(S+1) x d].
Tensor patch_embed(const Tensor& image, const EmbedParams& e);

// Patch extraction alone: [S x patch*patch*channels], same flattening order.
Tensor extract_patches(const Tensor& image, int patch);
// Inverse of extract_patches for round-trip checks.
Tensor assemble_patches(const Tensor& patches, int patch, int channels, int img_h, int img_w);

// logits = class-token row * w_head + b_head, returned as [K].
Tensor classify_head(const Tensor& tokens, const Tensor& w_head, const Tensor& b_head);

// Lowest index wins on ties.
int argmax_index(const Tensor& logits);

// Uniform(-a, a) with a = sqrt(6/(fan_in+fan_out)), drawn in row-major order.
Tensor init_linear_weight(int fan_in, int fan_out, Rng& rng);

}  // namespace paraformer
