#include <doctest.h>

#include <random>
#include <sstream>

#include "affectlab/error.hpp"
#include "affectlab/loss.hpp"
#include "affectlab/metrics.hpp"
#include "affectlab/model.hpp"
#include "affectlab/optim.hpp"
#include "gradcheck.hpp"

using namespace affectlab;
using nn::Shape;
using nn::Tensor;

TEST_CASE("conv and fc small examples") {
  Tensor x({1, 8, 8, 1}, 1.0);
  CHECK(nn::ops::conv2d_forward(x, Tensor({3, 3, 1, 1}, 1.0), Tensor({1}), {1, 0}).shape() == Shape{1, 6, 6, 1});
  Tensor img({1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  CHECK(nn::ops::conv2d_forward(img, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}), {1, 0}) == img);
  CHECK(nn::ops::maxpool_forward(img, 2, 2).out[0] == 4);
  const Tensor y = nn::ops::fc_forward(Tensor({1, 2}, std::vector<double>{1, 2}), Tensor({2, 1}, 1.0),
                                       Tensor({1}, 3.0));
  CHECK(y[0] == 6.0);
}

TEST_CASE("gru gate limits") {
  std::mt19937_64 rng(1);
  const Tensor x = gradcheck::random_tensor({2, 3}, rng), h = gradcheck::random_tensor({2, 4}, rng);
  std::vector<Tensor> p;
  for (int i = 0; i < 3; ++i) {
    p.push_back(gradcheck::random_tensor({3, 4}, rng));
    p.push_back(gradcheck::random_tensor({4, 4}, rng));
    p.push_back(gradcheck::random_tensor({4}, rng));
  }
  SUBCASE("closed update gate copies the state") {
    p[2].fill(-60.0);
    const nn::ops::GruWeights w{&p[0], &p[1], &p[2], &p[3], &p[4], &p[5], &p[6], &p[7], &p[8]};
    const Tensor out = nn::ops::gru_cell_forward(x, h, w).h;
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(h[i]).epsilon(1e-12));
  }
  SUBCASE("open update gate with zero state") {
    p[2].fill(60.0);
    const nn::ops::GruWeights w{&p[0], &p[1], &p[2], &p[3], &p[4], &p[5], &p[6], &p[7], &p[8]};
    const Tensor out = nn::ops::gru_cell_forward(x, Tensor({2, 4}), w).h;
    const Tensor pre = nn::ops::fc_forward(x, p[6], p[8]);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(std::tanh(pre[i])).epsilon(1e-12));
  }
}

TEST_CASE("residual block identities") {
  nn::ResidualBlock block("r", 3, 3);
  std::mt19937_64 rng(4);
  const Tensor x = gradcheck::random_tensor({1, 4, 4, 3}, rng);
  block.conv_a_kernel.value.fill(0);
  block.conv_b_kernel.value.fill(0);
  CHECK(block.forward(x) == x);
  nn::ResidualBlock proj("p", 3, 5);
  CHECK(proj.forward(Tensor({1, 4, 4, 3})) == Tensor({1, 4, 4, 5}));
}

TEST_CASE("preset shape ledgers") {
  CHECK(nn::conv_output_shape(nn::preset("vgg16-gru", 96)) == Shape{4, 4, 512});
  CHECK(nn::conv_output_shape(nn::preset("alexnet-gru", 96)) == Shape{4, 4, 256});
  CHECK(nn::conv_output_shape(nn::preset("resnet-gru", 96)) == Shape{3, 3, 512});
  for (const auto& name : nn::preset_names()) {
    CAPTURE(name);
    const auto ledger = nn::infer_shapes(nn::preset(name));
    CHECK(ledger.back().output == Shape{2});
    CHECK(nn::parameter_count(nn::preset(name)) > 0);
  }
  CHECK(nn::infer_shapes(nn::preset("vgg16-gru", 112)).back().output == Shape{2});
  CHECK_THROWS_AS(nn::preset("lenet"), UsageError);
}

TEST_CASE("alexnet first layer keeps the 11x11x96 kernel") {
  const auto spec = nn::preset("alexnet-gru", 96);
  const auto& first = spec.layers.front();
  CHECK(first.kind == nn::LayerKind::conv2d);
  CHECK(first.kernel_h == 11);
  CHECK(first.out_channels == 96);
}

TEST_CASE("inconsistent specs are rejected") {
  auto spec = nn::preset("vgg-mini-gru");
  spec.layers.back().units = 3;
  CHECK_THROWS_AS(nn::infer_shapes(spec), ShapeError);
  spec = nn::preset("vgg-mini-gru");
  for (auto& l : spec.layers)
    if (l.kind == nn::LayerKind::conv2d && l.in_channels == 8) {
      l.in_channels = 5;
      break;
    }
  CHECK_THROWS_AS(nn::infer_shapes(spec), ShapeError);
  spec = nn::preset("vgg-mini-gru");
  spec.input_size = 3;
  CHECK_THROWS(nn::infer_shapes(spec));
}

TEST_CASE("spec text round trip") {
  for (const auto& name : nn::preset_names()) {
    const auto spec = nn::preset(name);
    std::map<std::string, std::string> kv;
    std::istringstream in(nn::serialize_spec(spec));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      REQUIRE(eq != std::string::npos);
      kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    CHECK(nn::parse_spec(kv) == spec);
  }
}

TEST_CASE("parameter names and initialization") {
  nn::Model model(nn::preset("alexnet-mini-gru"), 3);
  CHECK(model.find("conv1.kernel") != nullptr);
  CHECK(model.find("head.weight") != nullptr);
  auto* bz = model.find("gru.0.b_z");
  REQUIRE(bz != nullptr);
  for (double v : bz->value.storage()) CHECK(v == -1.0);
  for (double v : model.find("gru.1.b_r")->value.storage()) CHECK(v == 0.0);
  const double lim = 1.0 / std::sqrt(32.0);
  for (double v : model.find("gru.0.u_h")->value.storage()) CHECK(std::abs(v) <= lim);
  std::size_t total = 0;
  for (auto* p : model.parameters()) total += p->value.size();
  CHECK(total == nn::parameter_count(model.spec()));
  nn::Model again(nn::preset("alexnet-mini-gru"), 3);
  for (auto* p : model.parameters()) CHECK(again.find(p->name)->value == p->value);
}

TEST_CASE("forward_sequence shape, batch independence and causality") {
  for (const char* name : {"vgg-mini-gru", "alexnet-mini-gru", "resnet-mini-gru", "vgg-mini"}) {
    CAPTURE(name);
    nn::Model model(nn::preset(name), 5);
    std::mt19937_64 rng(8);
    CHECK(model.forward_sequence(gradcheck::random_tensor({1, 1, 16, 16, 3}, rng)).shape() == Shape{1, 1, 2});

    const Tensor x = gradcheck::random_tensor({2, 6, 16, 16, 3}, rng);
    const Tensor y = model.forward_sequence(x);
    Tensor swapped(x.shape());
    const std::size_t seq = x.size() / 2;
    std::copy(x.ptr() + seq, x.ptr() + 2 * seq, swapped.ptr());
    std::copy(x.ptr(), x.ptr() + seq, swapped.ptr() + seq);
    const Tensor ys = model.forward_sequence(swapped);
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(ys[i] == y[12 + i]);
      CHECK(ys[12 + i] == y[i]);
    }

    Tensor first({1, 3, 16, 16, 3});
    std::copy(x.ptr(), x.ptr() + first.size(), first.ptr());
    const Tensor prefix = model.forward_sequence(first);
    for (std::size_t i = 0; i < prefix.size(); ++i) CHECK(prefix[i] == y[i]);
  }
  nn::Model model(nn::preset("vgg-mini-gru"), 5);
  CHECK_THROWS_AS(model.forward_sequence(Tensor({1, 2, 12, 12, 3})), ShapeError);
}

TEST_CASE("loss matches metrics.ccc and its examples") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor pred = gradcheck::random_tensor({2, 5, 2}, rng), target = gradcheck::random_tensor({2, 5, 2}, rng);
    std::vector<double> pv, pa, tv, ta;
    for (std::size_t i = 0; i < 10; ++i) {
      pv.push_back(pred[2 * i]);
      pa.push_back(pred[2 * i + 1]);
      tv.push_back(target[2 * i]);
      ta.push_back(target[2 * i + 1]);
    }
    const double expect = 1.0 - 0.5 * (metrics::ccc(pv, tv) + metrics::ccc(pa, ta));
    CHECK(std::abs(nn::loss_1mccc(pred, target).loss - expect) < 1e-12);
  }
  Tensor t({1, 4, 2}, std::vector<double>{0.1, -0.3, -0.2, 0.1, 0.4, 0.2, -0.3, 0.0});
  const auto same = nn::loss_1mccc(t, t);
  CHECK(std::abs(same.loss) < 1e-12);
  for (double g : same.grad.storage()) CHECK(std::abs(g) < 1e-9);

  // Zero-mean targets and their negation: CCC -1 on both dimensions.
  Tensor z({1, 4, 2}, std::vector<double>{0.3, -0.1, -0.3, 0.2, 0.1, 0.1, -0.1, -0.2});
  Tensor neg = z;
  for (auto& v : neg.storage()) v = -v;
  CHECK(nn::loss_1mccc(neg, z).loss == doctest::Approx(2.0).epsilon(1e-12));

  // Constant predictions never produce NaN.
  const auto flat = nn::loss_1mccc(Tensor({1, 4, 2}, 0.0), Tensor({1, 4, 2}, 0.0));
  CHECK(std::isfinite(flat.loss));
}

TEST_CASE("adam step") {
  nn::Parameter p{"w", Tensor({3}, std::vector<double>{0.5, -0.2, 1.0}), Tensor(), true};
  p.zero_grad();
  nn::AdamState st;
  st.lr = 1e-3;
  nn::adam_step({&p}, st);
  CHECK(p.value.storage() == std::vector<double>{0.5, -0.2, 1.0});

  p.grad.storage() = {2.0, -0.5, 1e-3};
  nn::AdamState fresh;
  fresh.lr = 1e-3;
  const auto before = p.value.storage();
  nn::adam_step({&p}, fresh);
  // First bias-corrected step moves each weight by lr * g / (|g| + eps').
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = std::vector<double>{2.0, -0.5, 1e-3}[i];
    const double expect = before[i] - 1e-3 * g / (std::abs(g) + 1e-8);
    CHECK(p.value[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(fresh.step == 1);

  // Frozen parameters do not move.
  nn::Parameter frozen{"f", Tensor({1}, 1.0), Tensor({1}, 5.0), false};
  nn::adam_step({&frozen}, fresh);
  CHECK(frozen.value[0] == 1.0);

  // Sanity descent on (w - 3)^2.
  nn::Parameter w{"q", Tensor({1}, 0.0), Tensor(), true};
  nn::AdamState s2;
  s2.lr = 0.1;
  w.zero_grad();
  w.grad[0] = 2 * (w.value[0] - 3);
  const double loss0 = (w.value[0] - 3) * (w.value[0] - 3);
  nn::adam_step({&w}, s2);
  CHECK((w.value[0] - 3) * (w.value[0] - 3) < loss0);
}
