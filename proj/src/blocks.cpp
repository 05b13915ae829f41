#include "paraformer/blocks.hpp"

#include <cmath>

#include "paraformer/errors.hpp"

namespace paraformer {

BlockVariant block_variant_from_string(const std::string& name) {
  if (name == "strict") return BlockVariant::Strict;
  if (name == "practical") return BlockVariant::Practical;
  throw ConfigError("unknown block variant '" + name + "' (expected strict or practical)");
}

const char* block_variant_name(BlockVariant v) {
  return v == BlockVariant::Strict ? "strict" : "practical";
}

Tensor init_linear_weight(int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> data(static_cast<std::size_t>(fan_in) * fan_out);
  for (double& v : data) v = rng.uniform(-a, a);
  return Tensor::from_data({fan_in, fan_out}, std::move(data));
}

BlockParams BlockParams::init(int embed_dim, int heads, int ffn_dim, BlockVariant variant, Rng& rng) {
  if (heads <= 0 || embed_dim % heads != 0) {
    throw ConfigError("heads (" + std::to_string(heads) + ") must evenly divide embed_dim (" +
                      std::to_string(embed_dim) + ")");
  }
  BlockParams p;
  p.embed_dim = embed_dim;
  p.heads = heads;
  p.head_dim = embed_dim / heads;
  p.ffn_dim = ffn_dim;
  p.variant = variant;
  for (int h = 0; h < heads; ++h) p.wq.push_back(init_linear_weight(embed_dim, p.head_dim, rng));
  for (int h = 0; h < heads; ++h) p.wk.push_back(init_linear_weight(embed_dim, p.head_dim, rng));
  for (int h = 0; h < heads; ++h) p.wv.push_back(init_linear_weight(embed_dim, p.head_dim, rng));
  p.wo = init_linear_weight(heads * p.head_dim, embed_dim, rng);
  p.w1 = init_linear_weight(embed_dim, ffn_dim, rng);
  p.b1 = Tensor::zeros({ffn_dim});
  p.w2 = init_linear_weight(ffn_dim, embed_dim, rng);
  p.b2 = Tensor::zeros({embed_dim});
  if (variant == BlockVariant::Practical) {
    p.gamma1 = Tensor::full({embed_dim}, 1.0);
    p.beta1 = Tensor::zeros({embed_dim});
    p.gamma2 = Tensor::full({embed_dim}, 1.0);
    p.beta2 = Tensor::zeros({embed_dim});
  }
  return p;
}

void BlockParams::validate() const {
  if (heads * head_dim != embed_dim) {
    throw ConfigError("block invariant violated: heads*head_dim != embed_dim (" +
                      std::to_string(heads) + "*" + std::to_string(head_dim) +
                      " != " + std::to_string(embed_dim) + ")");
  }
  if (static_cast<int>(wq.size()) != heads || static_cast<int>(wk.size()) != heads ||
      static_cast<int>(wv.size()) != heads) {
    throw ConfigError("block invariant violated: per-head projection count != heads");
  }
}

EmbedParams EmbedParams::init(int patch, int channels, int img_h, int img_w, int embed_dim,
                              Rng& rng) {
  if (patch <= 0 || img_h % patch != 0 || img_w % patch != 0) {
    throw ConfigError("patch side " + std::to_string(patch) + " must divide image " +
                      std::to_string(img_h) + "x" + std::to_string(img_w));
  }
  EmbedParams e;
  e.patch = patch;
  e.channels = channels;
  e.img_h = img_h;
  e.img_w = img_w;
  e.embed_dim = embed_dim;
  const int pdim = patch * patch * channels;
  e.patch_w = init_linear_weight(pdim, embed_dim, rng);
  e.patch_b = Tensor::zeros({embed_dim});
  e.cls = Tensor::zeros({embed_dim});
  std::vector<double> pos(static_cast<std::size_t>(e.seq_len()) * embed_dim);
  for (double& v : pos) v = rng.normal(0.0, 0.02);
  e.pos = Tensor::from_data({e.seq_len(), embed_dim}, std::move(pos));
  return e;
}

Tensor mha_forward(const Tensor& x, const BlockParams& p) {
  if (x.rank() != 2 || x.dim(1) != p.embed_dim) {
    throw ShapeError("mha_forward input " + shape_to_string(x.shape()) + " does not match embed_dim " +
                     std::to_string(p.embed_dim));
  }
  p.validate();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(p.head_dim));
  std::vector<Tensor> heads;
  heads.reserve(p.wq.size());
  for (int h = 0; h < p.heads; ++h) {
    Tensor q = matmul(x, p.wq[static_cast<std::size_t>(h)]);
    Tensor k = matmul(x, p.wk[static_cast<std::size_t>(h)]);
    Tensor v = matmul(x, p.wv[static_cast<std::size_t>(h)]);
    Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
    Tensor attn = softmax_rows(scores);
    heads.push_back(matmul(attn, v));
  }
  Tensor cat = p.heads == 1 ? heads[0] : concat_cols(heads);
  return matmul(cat, p.wo);
}

Tensor ffn_forward(const Tensor& x, const BlockParams& p, Activation kind) {
  if (x.rank() != 2 || x.dim(1) != p.embed_dim) {
    throw ShapeError("ffn_forward input " + shape_to_string(x.shape()) + " does not match embed_dim " +
                     std::to_string(p.embed_dim));
  }
  Tensor h = activation(add_rowwise(matmul(x, p.w1), p.b1), kind);
  return add_rowwise(matmul(h, p.w2), p.b2);
}

Tensor encoder_block_forward(const Tensor& x, const BlockParams& p, BlockVariant variant,
                             Activation kind) {
  if (variant == BlockVariant::Strict) {
    Tensor y = add(x, mha_forward(x, p));
    return add(y, ffn_forward(y, p, kind));
  }
  if (!p.gamma1.defined()) {
    throw ConfigError("practical variant requested but block has no layer-norm parameters");
  }
  Tensor y = add(x, mha_forward(layer_norm(x, p.gamma1, p.beta1), p));
  return add(y, ffn_forward(layer_norm(y, p.gamma2, p.beta2), p, kind));
}

Tensor extract_patches(const Tensor& image, int patch) {
  if (image.rank() != 3) {
    throw ShapeError("extract_patches expects [C x H x W], got " + shape_to_string(image.shape()));
  }
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch <= 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patch side " + std::to_string(patch) + " does not divide image " +
                     shape_to_string(image.shape()));
  }
  const int gh = h / patch, gw = w / patch;
  const int s = gh * gw;
  const int pdim = patch * patch * c;
  std::vector<double> out(static_cast<std::size_t>(s) * pdim);
  const double* img = image.data();
  // Patch row s_i = gy*gw + gx; within a patch: channel-major, then rows,
  // then columns. This order is the checkpoint-portable contract.
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      double* prow = out.data() + static_cast<std::size_t>(gy * gw + gx) * pdim;
      int idx = 0;
      for (int ch = 0; ch < c; ++ch)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px) {
            const int iy = gy * patch + py;
            const int ix = gx * patch + px;
            prow[idx++] = img[(static_cast<std::size_t>(ch) * h + iy) * w + ix];
          }
    }
  // Images are data, never parameters; no gradient route.
  return Tensor::from_data({s, pdim}, std::move(out));
}

Tensor assemble_patches(const Tensor& patches, int patch, int channels, int img_h, int img_w) {
  const int gh = img_h / patch, gw = img_w / patch;
  const int pdim = patch * patch * channels;
  if (patches.rank() != 2 || patches.dim(0) != gh * gw || patches.dim(1) != pdim) {
    throw ShapeError("assemble_patches got " + shape_to_string(patches.shape()) + ", expected [" +
                     std::to_string(gh * gw) + "x" + std::to_string(pdim) + "]");
  }
  std::vector<double> img(static_cast<std::size_t>(channels) * img_h * img_w);
  const double* pd = patches.data();
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const double* prow = pd + static_cast<std::size_t>(gy * gw + gx) * pdim;
      int idx = 0;
      for (int ch = 0; ch < channels; ++ch)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px) {
            const int iy = gy * patch + py;
            const int ix = gx * patch + px;
            img[(static_cast<std::size_t>(ch) * img_h + iy) * img_w + ix] = prow[idx++];
          }
    }
  return Tensor::from_data({channels, img_h, img_w}, std::move(img));
}

Tensor patch_embed(const Tensor& image, const EmbedParams& e) {
  if (image.rank() != 3 || image.dim(0) != e.channels || image.dim(1) != e.img_h ||
      image.dim(2) != e.img_w) {
    throw ShapeError("patch_embed image " + shape_to_string(image.shape()) + " does not match [" +
                     std::to_string(e.channels) + "x" + std::to_string(e.img_h) + "x" +
                     std::to_string(e.img_w) + "]");
  }
  Tensor patches = extract_patches(image, e.patch);
  Tensor projected = add_rowwise(matmul(patches, e.patch_w), e.patch_b);
  Tensor tokens = prepend_row(e.cls, projected);
  return add(tokens, e.pos);
}

Tensor classify_head(const Tensor& tokens, const Tensor& w_head, const Tensor& b_head) {
  if (tokens.rank() != 2 || w_head.rank() != 2 || tokens.dim(1) != w_head.dim(0)) {
    throw ShapeError("classify_head shapes disagree: tokens " + shape_to_string(tokens.shape()) +
                     ", w_head " + shape_to_string(w_head.shape()));
  }
  const int k = w_head.dim(1);
  Tensor cls_row = slice_row(tokens, 0);
  Tensor logits = add_rowwise(matmul(cls_row, w_head), b_head);
  return reshape(logits, {k});
}

int argmax_index(const Tensor& logits) {
  const double* d = logits.data();
  int best = 0;
  for (std::size_t i = 1; i < logits.numel(); ++i)
    if (d[i] > d[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace paraformer
