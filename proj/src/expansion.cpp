#include "paraformer/expansion.hpp"

#include <cmath>
#include <sstream>

#include "paraformer/errors.hpp"

namespace paraformer {

namespace {

void check_capacity(int rows, const char* what) {
  if (rows > kLiftCapacity) {
    throw CapacityError(std::string(what) + " requires " + std::to_string(rows) +
                        " flattened entries per axis, cap is " + std::to_string(kLiftCapacity));
  }
}

Tensor slice_rows_plain(const Tensor& m, int row0, int rows) {
  const int c = m.dim(1);
  std::vector<double> out(static_cast<std::size_t>(rows) * c);
  std::copy(m.data() + static_cast<std::size_t>(row0) * c,
            m.data() + static_cast<std::size_t>(row0 + rows) * c, out.begin());
  return Tensor::from_data({rows, c}, std::move(out));
}

Tensor matvec(const Tensor& m, const Tensor& v) {
  return reshape(matmul(m, reshape(v, {v.dim(0), 1})), {m.dim(0)});
}

Tensor add_vec(const Tensor& a, const Tensor& b) { return add(a, b); }

Tensor sigma_vec(const Tensor& v, Activation act) { return activation(v, act); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  const double* ad = a.data();
  const double* bd = b.data();
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(ad[i] - bd[i]));
  return worst;
}

}  // namespace

Tensor vec_tokens(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("vec_tokens expects [S x d], got " + shape_to_string(x.shape()));
  const int s = x.dim(0), d = x.dim(1);
  std::vector<double> out(x.numel());
  for (int f = 0; f < d; ++f)
    for (int t = 0; t < s; ++t) out[static_cast<std::size_t>(f) * s + t] = x.at(t, f);
  return Tensor::from_data({s * d}, std::move(out));
}

Tensor unvec_tokens(const Tensor& v, int seq, int dim) {
  if (v.numel() != static_cast<std::size_t>(seq) * dim) {
    throw ShapeError("unvec_tokens length " + std::to_string(v.numel()) + " != " +
                     std::to_string(seq) + "*" + std::to_string(dim));
  }
  std::vector<double> out(v.numel());
  const double* vd = v.data();
  for (int f = 0; f < dim; ++f)
    for (int t = 0; t < seq; ++t)
      out[static_cast<std::size_t>(t) * dim + f] = vd[static_cast<std::size_t>(f) * seq + t];
  return Tensor::from_data({seq, dim}, std::move(out));
}

Tensor LiftedLayer::apply(const Tensor& v, Activation act) const {
  NoGradGuard ng;
  Tensor linear = w1.defined() ? matvec(w1, v) : v;
  Tensor arg = w2_composed ? matvec(w2, v) : matvec(w2, linear);
  Tensor hidden = sigma_vec(add_vec(arg, b2), act);
  Tensor out = add_vec(linear, matvec(w3, hidden));
  return add_vec(out, b3);
}

Tensor lift_mha(const Tensor& x, const BlockParams& p, bool include_residual) {
  if (x.rank() != 2 || x.dim(1) != p.embed_dim) {
    throw ShapeError("lift_mha input " + shape_to_string(x.shape()) + " does not match embed_dim " +
                     std::to_string(p.embed_dim));
  }
  NoGradGuard ng;
  const int s = x.dim(0), d = p.embed_dim, dh = p.head_dim;
  check_capacity(s * d, "lift_mha");
  const int n = s * d;
  std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < p.heads; ++h) {
    Tensor q = matmul(x, p.wq[static_cast<std::size_t>(h)]);
    Tensor k = matmul(x, p.wk[static_cast<std::size_t>(h)]);
    Tensor attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
    Tensor wo_h = slice_rows_plain(p.wo, h * dh, dh);
    Tensor bh = matmul(p.wv[static_cast<std::size_t>(h)], wo_h);  // [d x d]
    // vec(A X B) = (B^T (x) A) vec(X): entry [(f*S+si), (g*S+ti)] += B[g,f]*A[si,ti]
    for (int f = 0; f < d; ++f)
      for (int g = 0; g < d; ++g) {
        const double bv = bh.at(g, f);
        if (bv == 0.0) continue;
        for (int si = 0; si < s; ++si) {
          const std::size_t row = static_cast<std::size_t>(f) * s + si;
          double* mrow = m.data() + row * n;
          for (int ti = 0; ti < s; ++ti)
            mrow[static_cast<std::size_t>(g) * s + ti] += bv * attn.at(si, ti);
        }
      }
  }
  if (include_residual) {
    for (int i = 0; i < n; ++i) m[static_cast<std::size_t>(i) * n + i] += 1.0;
  }
  return Tensor::from_data({n, n}, std::move(m));
}

LiftedLayer lift_ffn(const BlockParams& p, int seq) {
  const int d = p.embed_dim, ff = p.ffn_dim;
  check_capacity(seq * d, "lift_ffn");
  check_capacity(seq * ff, "lift_ffn");
  const int rows2 = seq * ff, cols2 = seq * d;
  LiftedLayer layer;

  // w2 = w1^T (x) I_S : [(S*ff) x (S*d)]
  std::vector<double> w2(static_cast<std::size_t>(rows2) * cols2, 0.0);
  for (int k = 0; k < ff; ++k)
    for (int f = 0; f < d; ++f) {
      const double wv = p.w1.at(f, k);  // w1^T[k, f]
      if (wv == 0.0) continue;
      for (int t = 0; t < seq; ++t)
        w2[(static_cast<std::size_t>(k) * seq + t) * cols2 + static_cast<std::size_t>(f) * seq + t] = wv;
    }
  layer.w2 = Tensor::from_data({rows2, cols2}, std::move(w2));

  // w3 = w2^T (x) I_S : [(S*d) x (S*ff)]
  std::vector<double> w3(static_cast<std::size_t>(cols2) * rows2, 0.0);
  for (int f = 0; f < d; ++f)
    for (int k = 0; k < ff; ++k) {
      const double wv = p.w2.at(k, f);  // w2^T[f, k]
      if (wv == 0.0) continue;
      for (int t = 0; t < seq; ++t)
        w3[(static_cast<std::size_t>(f) * seq + t) * rows2 + static_cast<std::size_t>(k) * seq + t] = wv;
    }
  layer.w3 = Tensor::from_data({cols2, rows2}, std::move(w3));

  std::vector<double> b2(static_cast<std::size_t>(rows2));
  for (int k = 0; k < ff; ++k)
    for (int t = 0; t < seq; ++t) b2[static_cast<std::size_t>(k) * seq + t] = p.b1.data()[k];
  layer.b2 = Tensor::from_data({rows2}, std::move(b2));

  std::vector<double> b3(static_cast<std::size_t>(cols2));
  for (int f = 0; f < d; ++f)
    for (int t = 0; t < seq; ++t) b3[static_cast<std::size_t>(f) * seq + t] = p.b2.data()[f];
  layer.b3 = Tensor::from_data({cols2}, std::move(b3));

  return layer;
}

std::pair<Tensor, LiftedLayer> expand_single_layer(const Tensor& x0, const BlockParams& p,
                                                   Activation act) {
  NoGradGuard ng;
  const int s = x0.dim(0);
  LiftedLayer layer = lift_ffn(p, s);
  layer.w1 = lift_mha(x0, p, /*include_residual=*/true);
  Tensor v0 = vec_tokens(x0);
  Tensor linear = matvec(layer.w1, v0);
  Tensor hidden = sigma_vec(add_vec(matvec(layer.w2, linear), layer.b2), act);
  Tensor x1 = add_vec(add_vec(linear, layer.b3), matvec(layer.w3, hidden));
  // store the underlined product: w2 pre-composed with the attention map
  layer.w2 = matmul(layer.w2, layer.w1);
  layer.w2_composed = true;
  return {x1, layer};
}

std::pair<Tensor, ExpansionState> expand_multi_layer(const Tensor& x0,
                                                     const std::vector<BlockParams>& layers,
                                                     Activation act) {
  if (layers.empty()) throw ConfigError("expand_multi_layer needs at least one layer");
  NoGradGuard ng;
  const int s = x0.dim(0), d = x0.dim(1);
  check_capacity(s * d, "expand_multi_layer");

  ExpansionState st;
  st.depth = static_cast<int>(layers.size());
  st.seq = s;
  st.dim = d;
  st.ffn_dim = layers[0].ffn_dim;

  Tensor v0 = vec_tokens(x0);
  Tensor x_fwd = x0;
  for (std::size_t t = 0; t < layers.size(); ++t) {
    const BlockParams& p = layers[t];
    if (p.embed_dim != d) throw ConfigError("expand_multi_layer: inconsistent embed_dim across layers");
    Tensor a = lift_mha(x_fwd, p, /*include_residual=*/true);
    LiftedLayer ffn = lift_ffn(p, s);
    st.attention.push_back(a);
    st.raw_ffn.push_back(ffn);

    if (t == 0) {
      st.p = a;
      st.q = ffn.b3;
      st.u.push_back(ffn.w3);
      st.v.push_back(matmul(ffn.w2, a));
      st.c.push_back(ffn.b2);
    } else {
      Tensor g = matmul(ffn.w2, a);
      // dynamic bias: g*(previous linear bias) + raw bias + g*(previous sigma terms)
      Tensor sum_terms = Tensor::zeros({s * d});
      for (std::size_t k = 0; k < st.u.size(); ++k) {
        Tensor sig = sigma_vec(add_vec(matvec(st.v[k], v0), st.c[k]), act);
        sum_terms = add_vec(sum_terms, matvec(st.u[k], sig));
      }
      Tensor c_new = add_vec(add_vec(matvec(g, st.q), ffn.b2), matvec(g, sum_terms));
      // fold the new attention map into every accumulated coefficient
      for (Tensor& u : st.u) u = matmul(a, u);
      st.u.push_back(ffn.w3);
      st.v.push_back(matmul(g, st.p));
      st.c.push_back(c_new);
      st.q = add_vec(matvec(a, st.q), ffn.b3);
      st.p = matmul(a, st.p);
    }
    x_fwd = encoder_block_forward(x_fwd, p, BlockVariant::Strict, act);
  }
  return {st.evaluate(v0, act), st};
}

Tensor ExpansionState::evaluate(const Tensor& v0, Activation act) const {
  NoGradGuard ng;
  Tensor out = add_vec(matvec(p, v0), q);
  for (std::size_t j = 0; j < u.size(); ++j) {
    Tensor sig = sigma_vec(add_vec(matvec(v[j], v0), c[j]), act);
    out = add_vec(out, matvec(u[j], sig));
  }
  return out;
}

Tensor bias_from_partial_forward(const Tensor& x0, const std::vector<BlockParams>& layers, int j,
                                 Activation act) {
  if (j < 2 || j > static_cast<int>(layers.size())) {
    throw DomainError("bias_from_partial_forward needs 2 <= j <= depth");
  }
  NoGradGuard ng;
  const int s = x0.dim(0);
  Tensor x_fwd = x0;
  Tensor p_prev;  // product of attention maps of layers 1..j-1
  for (int t = 0; t < j - 1; ++t) {
    Tensor a = lift_mha(x_fwd, layers[static_cast<std::size_t>(t)], true);
    p_prev = t == 0 ? a : matmul(a, p_prev);
    x_fwd = encoder_block_forward(x_fwd, layers[static_cast<std::size_t>(t)], BlockVariant::Strict, act);
  }
  const BlockParams& pj = layers[static_cast<std::size_t>(j - 1)];
  Tensor aj = lift_mha(x_fwd, pj, true);
  LiftedLayer ffn = lift_ffn(pj, s);
  Tensor g = matmul(ffn.w2, aj);
  Tensor vj = matmul(g, p_prev);
  // c_j = g*vec(x_{j-1}) + b2 - v_j*vec(x0)
  Tensor lhs = add_vec(matvec(g, vec_tokens(x_fwd)), ffn.b2);
  Tensor proj = matvec(vj, vec_tokens(x0));
  std::vector<double> out(lhs.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lhs.data()[i] - proj.data()[i];
  const int n = static_cast<int>(out.size());
  return Tensor::from_data({n}, std::move(out));
}

// --- bookkeeping -------------------------------------------------------------

bool serial_dof_supported(int depth) {
  return depth == 1 || depth == 2 || depth == 3 || depth == 6;
}

int serial_dof(int depth) {
  switch (depth) {
    case 1:
      return 2;
    case 2:
      return 6;
    case 3:
      return 9;
    case 6:
      return 15;
    default:
      throw UnsupportedDepthError("no tabulated degrees of freedom for depth " +
                                  std::to_string(depth) + " (supported depths: 1, 2, 3, 6)");
  }
}

long long degrees_of_freedom(int depth, int branches) {
  if (branches < 1) throw DomainError("branch count must be >= 1");
  return static_cast<long long>(branches) * serial_dof(depth);
}

BiasUatLayers bias_uat_layers(int depth, int branches) {
  if (depth < 1) throw DomainError("depth must be >= 1");
  if (branches < 1) throw DomainError("branch count must be >= 1");
  BiasUatLayers out;
  if (depth >= 2) {
    for (int i = 1; i <= depth; ++i) {
      out.per_branch.push_back(i);
      out.per_branch_sum += i;
    }
  }
  out.total = static_cast<long long>(branches) * out.per_branch_sum;
  return out;
}

LabelBookkeeping label_bookkeeping(int depth, int total_blocks) {
  if (depth < 1 || total_blocks < 1) throw DomainError("depth and total blocks must be >= 1");
  if (total_blocks % depth != 0) {
    throw ConfigError("total blocks " + std::to_string(total_blocks) +
                      " not divisible by depth " + std::to_string(depth));
  }
  LabelBookkeeping out;
  out.depth = depth;
  out.total_blocks = total_blocks;
  out.branches = total_blocks / depth;
  out.dof = degrees_of_freedom(depth, out.branches);
  out.bias = bias_uat_layers(depth, out.branches);
  return out;
}

// --- verification ------------------------------------------------------------

bool VerifyReport::all_pass() const {
  for (const VerifyRow& r : rows)
    if (!r.pass) return false;
  return true;
}

std::string VerifyReport::to_table() const {
  std::ostringstream os;
  os << "construct              dims         max_abs_err    tolerance    result\n";
  for (const VerifyRow& r : rows) {
    os << r.construct;
    for (std::size_t i = r.construct.size(); i < 23; ++i) os << ' ';
    os << r.dims;
    for (std::size_t i = r.dims.size(); i < 13; ++i) os << ' ';
    char buf[32];
    std::snprintf(buf, sizeof buf, "%-15.3e", r.max_abs_err);
    os << buf;
    if (r.tolerance) {
      std::snprintf(buf, sizeof buf, "%-13.0e", *r.tolerance);
      os << buf;
    } else {
      os << "report-only  ";
    }
    os << (r.pass ? "pass" : "FAIL") << "\n";
  }
  return os.str();
}

namespace {

Tensor random_tokens(int s, int d, Rng& rng) {
  std::vector<double> data(static_cast<std::size_t>(s) * d);
  for (double& v : data) v = rng.normal();
  return Tensor::from_data({s, d}, std::move(data));
}

std::optional<double> depth_tolerance(int depth) {
  switch (depth) {
    case 1:
      return 1e-9;
    case 2:
      return 1e-8;
    case 3:
      return 1e-7;
    default:
      return std::nullopt;  // reported, not asserted
  }
}

}  // namespace

VerifyReport run_verification(const VerifyOptions& opt) {
  NoGradGuard ng;
  check_capacity(opt.seq * opt.dim, "verification");
  check_capacity(opt.seq * opt.ffn_dim, "verification");
  VerifyReport report;
  const std::string dims = std::to_string(opt.seq) + "x" + std::to_string(opt.dim) + " h" +
                           std::to_string(opt.heads) + " f" + std::to_string(opt.ffn_dim);
  const Activation act = Activation::Sigmoid;

  auto add_row = [&](const std::string& construct, double err, std::optional<double> def_tol) {
    VerifyRow row;
    row.construct = construct;
    row.dims = dims;
    row.max_abs_err = err;
    row.tolerance = opt.tolerance ? opt.tolerance : def_tol;
    row.pass = !row.tolerance || err < *row.tolerance;
    report.rows.push_back(row);
  };

  double worst_mha = 0.0, worst_ffn = 0.0;
  for (int i = 0; i < opt.seeds; ++i) {
    Rng rng(opt.seed0 + static_cast<std::uint64_t>(i));
    BlockParams p = BlockParams::init(opt.dim, opt.heads, opt.ffn_dim, BlockVariant::Strict, rng);
    Tensor x = random_tokens(opt.seq, opt.dim, rng);

    Tensor m = lift_mha(x, p, false);
    Tensor lifted = matvec(m, vec_tokens(x));
    worst_mha = std::max(worst_mha, max_abs_diff(lifted, vec_tokens(mha_forward(x, p))));

    LiftedLayer ffn = lift_ffn(p, opt.seq);
    Tensor v0 = vec_tokens(x);
    Tensor ffn_lifted =
        add(matvec(ffn.w3, activation(add(matvec(ffn.w2, v0), ffn.b2), act)), ffn.b3);
    worst_ffn = std::max(worst_ffn, max_abs_diff(ffn_lifted, vec_tokens(ffn_forward(x, p, act))));
  }
  add_row("lift_mha", worst_mha, 1e-10);
  add_row("lift_ffn", worst_ffn, 1e-10);

  for (int depth : opt.depths) {
    double worst = 0.0;
    double worst_bias = 0.0;
    for (int i = 0; i < opt.seeds; ++i) {
      Rng rng(opt.seed0 + 1000 + static_cast<std::uint64_t>(i));
      std::vector<BlockParams> layers;
      for (int l = 0; l < depth; ++l)
        layers.push_back(BlockParams::init(opt.dim, opt.heads, opt.ffn_dim, BlockVariant::Strict, rng));
      Tensor x0 = random_tokens(opt.seq, opt.dim, rng);

      Tensor composed = x0;
      for (const BlockParams& p : layers)
        composed = encoder_block_forward(composed, p, BlockVariant::Strict, act);

      auto [value, state] = expand_multi_layer(x0, layers, act);
      worst = std::max(worst, max_abs_diff(value, vec_tokens(composed)));

      for (int j = 2; j <= depth; ++j) {
        Tensor indep = bias_from_partial_forward(x0, layers, j, act);
        worst_bias = std::max(worst_bias, max_abs_diff(indep, state.c[static_cast<std::size_t>(j - 1)]));
      }
    }
    add_row("expand_depth" + std::to_string(depth), worst, depth_tolerance(depth));
    if (depth >= 2) add_row("bias_recursion_depth" + std::to_string(depth), worst_bias, 1e-8);
  }
  return report;
}

}  // namespace paraformer
