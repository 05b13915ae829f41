#include "paraformer/model.hpp"

#include <algorithm>
#include <cctype>

#include "paraformer/errors.hpp"
#include "paraformer/rng.hpp"

namespace paraformer {

Precision precision_from_string(const std::string& name) {
  if (name == "f32") return Precision::F32;
  if (name == "f64") return Precision::F64;
  throw ConfigError("unknown precision '" + name + "' (expected f32 or f64)");
}

const char* precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

std::string ModelSpec::name() const {
  if (topology == Topology::Serial) return "vit-" + std::to_string(depth);
  return "para-former-" + std::to_string(depth) + "-" + std::to_string(branches);
}

namespace {

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

int parse_positive_int(const std::string& s, const std::string& name) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size() || v < 1) throw std::invalid_argument("range");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse '" + s + "' in model name '" + name + "'");
  }
}

}  // namespace

ModelSpec ModelSpec::from_name(const std::string& raw) { return from_name(raw, ModelSpec{}); }

ModelSpec ModelSpec::from_name(const std::string& raw, ModelSpec spec) {
  const std::string name = lowercase(raw);
  if (name.rfind("vit-", 0) == 0) {
    spec.topology = Topology::Serial;
    spec.depth = parse_positive_int(name.substr(4), raw);
    spec.branches = 1;
    return spec;
  }
  if (name.rfind("para-former-", 0) == 0) {
    const std::string rest = name.substr(12);
    const std::size_t dash = rest.find('-');
    if (dash == std::string::npos) {
      throw ConfigError("model name '" + raw + "' must look like para-former-<m>-<n>");
    }
    spec.topology = Topology::Parallel;
    spec.depth = parse_positive_int(rest.substr(0, dash), raw);
    spec.branches = parse_positive_int(rest.substr(dash + 1), raw);
    return spec;
  }
  throw ConfigError("unrecognized model name '" + raw + "' (expected vit-<d> or para-former-<m>-<n>)");
}

void ModelSpec::validate() const {
  if (depth < 1) throw ConfigError("spec invariant violated: depth >= 1 (got " + std::to_string(depth) + ")");
  if (branches < 1)
    throw ConfigError("spec invariant violated: branches >= 1 (got " + std::to_string(branches) + ")");
  if (topology == Topology::Serial && branches != 1)
    throw ConfigError("spec invariant violated: serial topology requires branches == 1");
  if (heads < 1 || embed_dim % heads != 0)
    throw ConfigError("spec invariant violated: heads must divide embed_dim (" + std::to_string(heads) +
                      " vs " + std::to_string(embed_dim) + ")");
  if (patch < 1 || img_h % patch != 0 || img_w % patch != 0)
    throw ConfigError("spec invariant violated: patch side must divide image dimensions (" +
                      std::to_string(patch) + " vs " + std::to_string(img_h) + "x" +
                      std::to_string(img_w) + ")");
  if (classes < 2) throw ConfigError("spec invariant violated: classes >= 2");
  if (ffn_dim < 1) throw ConfigError("spec invariant violated: ffn_dim >= 1");
  if (channels < 1) throw ConfigError("spec invariant violated: channels >= 1");
}

void Model::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("embed.patch_w", embed.patch_w);
  fn("embed.patch_b", embed.patch_b);
  fn("embed.cls", embed.cls);
  fn("embed.pos", embed.pos);
  for (std::size_t b = 0; b < branches.size(); ++b) {
    for (std::size_t l = 0; l < branches[b].size(); ++l) {
      BlockParams& p = branches[b][l];
      const std::string prefix = "branch" + std::to_string(b) + ".block" + std::to_string(l) + ".";
      for (int h = 0; h < p.heads; ++h) fn(prefix + "wq" + std::to_string(h), p.wq[static_cast<std::size_t>(h)]);
      for (int h = 0; h < p.heads; ++h) fn(prefix + "wk" + std::to_string(h), p.wk[static_cast<std::size_t>(h)]);
      for (int h = 0; h < p.heads; ++h) fn(prefix + "wv" + std::to_string(h), p.wv[static_cast<std::size_t>(h)]);
      fn(prefix + "wo", p.wo);
      fn(prefix + "w1", p.w1);
      fn(prefix + "b1", p.b1);
      fn(prefix + "w2", p.w2);
      fn(prefix + "b2", p.b2);
      if (p.gamma1.defined()) {
        fn(prefix + "gamma1", p.gamma1);
        fn(prefix + "beta1", p.beta1);
        fn(prefix + "gamma2", p.gamma2);
        fn(prefix + "beta2", p.beta2);
      }
    }
  }
  fn("head.w", head_w);
  fn("head.b", head_b);
}

void Model::for_each_param(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<Model*>(this)->for_each_param(
      [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

void Model::set_requires_grad(bool v) {
  for_each_param([v](const std::string&, Tensor& t) { t.set_requires_grad(v); });
}

void Model::zero_grads() {
  for_each_param([](const std::string&, Tensor& t) { t.zero_grad(); });
}

void round_params_to_f32(Model& model) {
  model.for_each_param([](const std::string&, Tensor& t) {
    double* d = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) d[i] = static_cast<double>(static_cast<float>(d[i]));
  });
}

Model build(const ModelSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Model m;
  m.spec = spec;
  m.embed = EmbedParams::init(spec.patch, spec.channels, spec.img_h, spec.img_w, spec.embed_dim, rng);
  m.branches.resize(static_cast<std::size_t>(spec.branches));
  for (int b = 0; b < spec.branches; ++b)
    for (int l = 0; l < spec.depth; ++l)
      m.branches[static_cast<std::size_t>(b)].push_back(
          BlockParams::init(spec.embed_dim, spec.heads, spec.ffn_dim, spec.variant, rng));
  m.head_w = init_linear_weight(spec.embed_dim, spec.classes, rng);
  m.head_b = Tensor::zeros({spec.classes});
  if (spec.precision == Precision::F32) round_params_to_f32(m);
  return m;
}

Tensor branch_forward(const Model& model, const Tensor& tokens, int branch) {
  const auto& chain = model.branches[static_cast<std::size_t>(branch)];
  Tensor x = tokens;
  for (const BlockParams& p : chain)
    x = encoder_block_forward(x, p, model.spec.variant, model.spec.act);
  return x;
}

Tensor forward(const Model& model, const Tensor& image) {
  Tensor tokens = patch_embed(image, model.embed);
  Tensor aggregate = branch_forward(model, tokens, 0);
  for (int b = 1; b < model.spec.branches; ++b)
    aggregate = add(aggregate, branch_forward(model, tokens, b));
  return classify_head(aggregate, model.head_w, model.head_b);
}

Tensor forward_batch(const Model& model, const Tensor& images) {
  if (images.rank() != 4) {
    throw ShapeError("forward_batch expects [B x C x H x W], got " + shape_to_string(images.shape()));
  }
  const int b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t stride = static_cast<std::size_t>(c) * h * w;
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    std::vector<double> img(images.data() + static_cast<std::size_t>(i) * stride,
                            images.data() + static_cast<std::size_t>(i + 1) * stride);
    Tensor logits = forward(model, Tensor::from_data({c, h, w}, std::move(img)));
    rows.push_back(reshape(logits, {1, model.spec.classes}));
  }
  if (b == 1) return rows[0];
  // assemble the [B x K] result directly and route gradients per row
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(b) * model.spec.classes);
  for (const Tensor& r : rows) out.insert(out.end(), r.data(), r.data() + r.numel());
  std::vector<Tensor> inputs = rows;
  const int k = model.spec.classes;
  return detail::make_result({b, k}, std::move(out), "stack_rows", inputs,
                             [inputs, k](detail::TensorNode& node) mutable {
                               const double* g = node.grad.data();
                               for (std::size_t i = 0; i < inputs.size(); ++i) {
                                 if (inputs[i].requires_grad())
                                   inputs[i].node()->accumulate(g + i * static_cast<std::size_t>(k),
                                                                static_cast<std::size_t>(k));
                               }
                             });
}

ParamCount param_count(const Model& model) {
  ParamCount pc;
  model.for_each_param([&pc](const std::string& name, const Tensor& t) {
    const long long n = static_cast<long long>(t.numel());
    if (name.rfind("embed.", 0) == 0)
      pc.embed += n;
    else if (name.rfind("head.", 0) == 0)
      pc.head += n;
    else
      pc.branches += n;
  });
  return pc;
}

}  // namespace paraformer
