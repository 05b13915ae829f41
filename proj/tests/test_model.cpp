#include <doctest.h>

#include <cmath>

#include "paraformer/errors.hpp"
#include "paraformer/grad_check.hpp"
#include "paraformer/model.hpp"
#include "paraformer/ops.hpp"
#include "paraformer/rng.hpp"

using namespace paraformer;

namespace {

ModelSpec tiny_spec(const std::string& name, BlockVariant variant = BlockVariant::Strict) {
  ModelSpec spec;
  spec.embed_dim = 8;
  spec.heads = 2;
  spec.ffn_dim = 16;
  spec.patch = 4;
  spec.channels = 1;
  spec.img_h = 8;
  spec.img_w = 8;
  spec.classes = 4;
  spec.variant = variant;
  spec.act = variant == BlockVariant::Strict ? Activation::Sigmoid : Activation::Gelu;
  spec.seed = 99;
  return ModelSpec::from_name(name, spec);
}

Tensor random_image(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> img(static_cast<std::size_t>(spec.channels) * spec.img_h * spec.img_w);
  for (double& v : img) v = rng.uniform(0.0, 1.0);
  return Tensor::from_data({spec.channels, spec.img_h, spec.img_w}, std::move(img));
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("name grammar round-trips and is case-insensitive") {
    ModelSpec a = ModelSpec::from_name("Para-Former-2-24");
    CHECK(a.topology == Topology::Parallel);
    CHECK(a.depth == 2);
    CHECK(a.branches == 24);
    CHECK(a.name() == "para-former-2-24");

    ModelSpec v = ModelSpec::from_name("VIT-6");
    CHECK(v.topology == Topology::Serial);
    CHECK(v.depth == 6);
    CHECK(v.branches == 1);
    CHECK(v.name() == "vit-6");

    CHECK_THROWS_AS(ModelSpec::from_name("resnet-50"), ConfigError);
    CHECK_THROWS_AS(ModelSpec::from_name("para-former-2"), ConfigError);
    CHECK_THROWS_AS(ModelSpec::from_name("para-former-0-3"), ConfigError);
  }

  TEST_CASE("invalid specs name the violated constraint") {
    ModelSpec s = tiny_spec("para-former-1-2");
    s.heads = 3;  // does not divide embed_dim=8
    CHECK_THROWS_WITH_AS(build(s), doctest::Contains("heads"), ConfigError);
    ModelSpec s2 = tiny_spec("para-former-1-2");
    s2.patch = 3;
    CHECK_THROWS_WITH_AS(build(s2), doctest::Contains("patch"), ConfigError);
    ModelSpec s3 = tiny_spec("vit-2");
    s3.branches = 2;
    CHECK_THROWS_WITH_AS(build(s3), doctest::Contains("serial"), ConfigError);
  }

  TEST_CASE("same seed and spec build bitwise-identical models") {
    ModelSpec spec = tiny_spec("para-former-2-3");
    Model a = build(spec);
    Model b = build(spec);
    bool equal = true;
    a.for_each_param([&](const std::string& name, Tensor& t) {
      b.for_each_param([&](const std::string& name2, Tensor& t2) {
        if (name == name2) equal &= same_bits(t, t2);
      });
    });
    CHECK(equal);
  }

  TEST_CASE("para-former-1-1 is structurally a depth-1 serial model") {
    Model p = build(tiny_spec("para-former-1-1"));
    Model v = build(tiny_spec("vit-1"));
    CHECK(param_count(p).total() == param_count(v).total());
    CHECK(p.branches.size() == v.branches.size());
    CHECK(p.branches[0].size() == v.branches[0].size());
  }

  TEST_CASE("one branch of para-former-6-6 matches the serial vit-6 stack") {
    Model p = build(tiny_spec("para-former-6-6"));
    Model v = build(tiny_spec("vit-6"));
    long long branch_params = 0, serial_params = 0;
    p.for_each_param([&](const std::string& name, Tensor& t) {
      if (name.rfind("branch0.", 0) == 0) branch_params += static_cast<long long>(t.numel());
    });
    v.for_each_param([&](const std::string& name, Tensor& t) {
      if (name.rfind("branch0.", 0) == 0) serial_params += static_cast<long long>(t.numel());
    });
    CHECK(branch_params == serial_params);
    CHECK(p.branches.size() == 6);
    CHECK(p.branches[0].size() == 6);
  }

  TEST_CASE("serial equivalence: parallel n=1 equals a dedicated serial composition") {
    for (const char* name : {"para-former-1-1", "para-former-3-1"}) {
      ModelSpec spec = tiny_spec(name);
      Model m = build(spec);
      Tensor image = random_image(spec, 5);
      Tensor via_model = forward(m, image);
      // dedicated serial path: embed, chain blocks, head, no branch machinery
      Tensor x = patch_embed(image, m.embed);
      for (const BlockParams& p : m.branches[0])
        x = encoder_block_forward(x, p, spec.variant, spec.act);
      Tensor via_serial = classify_head(x, m.head_w, m.head_b);
      CHECK(same_bits(via_model, via_serial));
    }
  }

  TEST_CASE("duplicating one branch into both slots doubles the aggregate exactly") {
    ModelSpec spec = tiny_spec("para-former-1-2");
    Model m = build(spec);
    m.branches[1] = m.branches[0];  // same parameters in both slots
    Tensor image = random_image(spec, 6);
    Tensor tokens = patch_embed(image, m.embed);
    Tensor single = branch_forward(m, tokens, 0);
    Tensor agg = add(single, branch_forward(m, tokens, 1));
    // y + y == 2y exactly in binary floating point
    for (std::size_t i = 0; i < agg.numel(); ++i)
      CHECK(agg.data()[i] == 2.0 * single.data()[i]);
  }

  TEST_CASE("swapping two branches leaves logits bitwise unchanged") {
    ModelSpec spec = tiny_spec("para-former-1-2");
    Model m = build(spec);
    Tensor image = random_image(spec, 7);
    Tensor before = forward(m, image);
    std::swap(m.branches[0], m.branches[1]);
    Tensor after = forward(m, image);
    // two-term sums commute exactly; the fixed ascending reduction makes the
    // result independent of which slot holds which branch
    CHECK(same_bits(before, after));
  }

  TEST_CASE("zero-weight branch contributes exactly the embedded tokens") {
    // strict blocks with all-zero parameters pass tokens through untouched,
    // so replacing a branch zeroes its delta and the aggregate drops by the
    // branch's former contribution
    ModelSpec spec = tiny_spec("para-former-1-2");
    Model m = build(spec);
    Tensor image = random_image(spec, 8);
    Tensor tokens = patch_embed(image, m.embed);
    Tensor y0 = branch_forward(m, tokens, 0);

    for (BlockParams& p : m.branches[1]) {
      for (auto* group : {&p.wq, &p.wk, &p.wv})
        for (Tensor& t : *group)
          for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = 0.0;
      for (Tensor* t : {&p.wo, &p.w1, &p.b1, &p.w2, &p.b2})
        for (std::size_t i = 0; i < t->numel(); ++i) t->data()[i] = 0.0;
    }
    Tensor y1 = branch_forward(m, tokens, 1);
    CHECK(same_bits(y1, tokens));
    Tensor agg = add(y0, branch_forward(m, tokens, 1));
    Tensor expected = add(y0, tokens);
    CHECK(same_bits(agg, expected));
  }

  TEST_CASE("forward_batch matches a loop of single forwards exactly") {
    ModelSpec spec = tiny_spec("para-former-2-2");
    Model m = build(spec);
    const int b = 3;
    Rng rng(17);
    std::vector<double> batch(static_cast<std::size_t>(b) * spec.channels * spec.img_h * spec.img_w);
    for (double& v : batch) v = rng.uniform(0.0, 1.0);
    Tensor images = Tensor::from_data({b, spec.channels, spec.img_h, spec.img_w}, batch);
    Tensor out = forward_batch(m, images);
    CHECK(out.dim(0) == b);
    CHECK(out.dim(1) == spec.classes);
    const std::size_t stride = static_cast<std::size_t>(spec.channels) * spec.img_h * spec.img_w;
    for (int i = 0; i < b; ++i) {
      std::vector<double> one(batch.begin() + static_cast<std::ptrdiff_t>(i * stride),
                              batch.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
      Tensor single = forward(m, Tensor::from_data({spec.channels, spec.img_h, spec.img_w}, one));
      for (int j = 0; j < spec.classes; ++j) CHECK(out.at(i, j) == single.data()[j]);
    }
  }

  TEST_CASE("forward_batch with identical images emits identical rows") {
    ModelSpec spec = tiny_spec("para-former-1-2");
    Model m = build(spec);
    Tensor image = random_image(spec, 23);
    std::vector<double> batch;
    for (int i = 0; i < 2; ++i) batch.insert(batch.end(), image.data(), image.data() + image.numel());
    Tensor out =
        forward_batch(m, Tensor::from_data({2, spec.channels, spec.img_h, spec.img_w}, batch));
    for (int j = 0; j < spec.classes; ++j) CHECK(out.at(0, j) == out.at(1, j));
  }

  TEST_CASE("param_count matches a shape-sum oracle and splits by section") {
    ModelSpec spec = tiny_spec("para-former-2-3");
    Model m = build(spec);
    ParamCount pc = param_count(m);

    // oracle: sum shapes directly from the spec
    const int d = spec.embed_dim, dh = d / spec.heads, ff = spec.ffn_dim;
    const int pdim = spec.patch * spec.patch * spec.channels;
    const int seq = spec.seq_len();
    const long long embed = static_cast<long long>(pdim) * d + d + d + static_cast<long long>(seq) * d;
    const long long per_block = 3LL * spec.heads * d * dh + static_cast<long long>(spec.heads) * dh * d +
                                static_cast<long long>(d) * ff + ff + static_cast<long long>(ff) * d + d;
    const long long head = static_cast<long long>(d) * spec.classes + spec.classes;
    CHECK(pc.embed == embed);
    CHECK(pc.branches == per_block * spec.depth * spec.branches);
    CHECK(pc.head == head);
    CHECK(pc.total() == embed + per_block * spec.depth * spec.branches + head);
  }

  TEST_CASE("block-count ordering over the named trio") {
    Model a = build(tiny_spec("para-former-1-24"));
    Model b = build(tiny_spec("para-former-6-6"));
    Model c = build(tiny_spec("para-former-6-24"));
    auto blocks = [](const Model& m) {
      std::size_t n = 0;
      for (const auto& br : m.branches) n += br.size();
      return n;
    };
    CHECK(blocks(a) == 24);
    CHECK(blocks(b) == 36);
    CHECK(blocks(c) == 144);
    CHECK(param_count(a).branches < param_count(b).branches);
    CHECK(param_count(b).branches < param_count(c).branches);
  }

  TEST_CASE("every branch of para-former-2-3 receives gradient from cross-entropy") {
    ModelSpec spec = tiny_spec("para-former-2-3", BlockVariant::Practical);
    Model m = build(spec);
    m.set_requires_grad(true);
    Tensor image = random_image(spec, 31);
    cross_entropy(forward(m, image), {1}).backward();
    for (int b = 0; b < 3; ++b) {
      bool nonzero = false;
      for (const BlockParams& p : m.branches[static_cast<std::size_t>(b)]) {
        for (double g : p.wo.grad()) nonzero |= g != 0.0;
        for (double g : p.w1.grad()) nonzero |= g != 0.0;
      }
      CHECK(nonzero);
    }
  }

  TEST_CASE("f32 precision rounds every parameter to float") {
    ModelSpec spec = tiny_spec("para-former-1-1");
    spec.precision = Precision::F32;
    Model m = build(spec);
    m.for_each_param([](const std::string&, Tensor& t) {
      for (std::size_t i = 0; i < t.numel(); ++i)
        CHECK(t.data()[i] == static_cast<double>(static_cast<float>(t.data()[i])));
    });
  }
}
