#include <doctest.h>

#include <random>

#include "affectlab/error.hpp"
#include "gradcheck.hpp"

using namespace affectlab;
using nn::Tensor;
namespace ops = nn::ops;

constexpr int kSeeds = 20;
constexpr double kTol = 1e-4;

#define GRAD_SUITE(fn)                                                  \
  for (int s = 0; s < kSeeds; ++s) {                                    \
    const auto r = gradcheck::fn(static_cast<std::uint64_t>(s) + 1);    \
    INFO("seed ", s, " worst ", r.worst);                               \
    CHECK(r.checked > 0);                                               \
    CHECK(r.max_rel < kTol);                                            \
  }

TEST_CASE("fc gradients") { GRAD_SUITE(fc) }
TEST_CASE("conv2d gradients") { GRAD_SUITE(conv2d) }
TEST_CASE("maxpool gradients") { GRAD_SUITE(maxpool) }
TEST_CASE("relu gradients") { GRAD_SUITE(relu) }
TEST_CASE("gru cell gradients") { GRAD_SUITE(gru_cell) }
TEST_CASE("residual block gradients") { GRAD_SUITE(residual_block) }
TEST_CASE("loss gradients") { GRAD_SUITE(loss) }

TEST_CASE("fc matches a direct sum") {
  std::mt19937_64 rng(3);
  const Tensor x = gradcheck::random_tensor({4, 6}, rng), w = gradcheck::random_tensor({6, 3}, rng),
               b = gradcheck::random_tensor({3}, rng);
  const Tensor y = ops::fc_forward(x, w, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t o = 0; o < 3; ++o) {
      double s = b[o];
      for (std::size_t k = 0; k < 6; ++k) s += x.at({i, k}) * w.at({k, o});
      CHECK(y.at({i, o}) == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("conv2d matches a padded brute-force correlation") {
  std::mt19937_64 rng(5);
  for (std::size_t stride : {1u, 2u}) {
    const ops::ConvGeometry g{stride, 1};
    const std::size_t H = 7, C = 2, F = 3, K = 3;
    const Tensor x = gradcheck::random_tensor({1, H, H, C}, rng), k = gradcheck::random_tensor({K, K, C, F}, rng),
                 b = gradcheck::random_tensor({F}, rng);
    const Tensor y = ops::conv2d_forward(x, k, b, g);
    const std::size_t O = (H + 2 - K) / stride + 1;
    REQUIRE(y.shape() == nn::Shape{1, O, O, F});
    for (std::size_t oy = 0; oy < O; ++oy)
      for (std::size_t ox = 0; ox < O; ++ox)
        for (std::size_t f = 0; f < F; ++f) {
          double s = b[f];
          for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - 1, ix = static_cast<long>(ox * stride + kx) - 1;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(H)) continue;
              for (std::size_t c = 0; c < C; ++c)
                s += x.at({0, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), c}) * k.at({ky, kx, c, f});
            }
          CHECK(y.at({0, oy, ox, f}) == doctest::Approx(s).epsilon(1e-13));
        }
  }
}

TEST_CASE("conv geometry must be integral") {
  CHECK(ops::conv_output_extent(96, 11, {3, 1}) == 30);
  CHECK_THROWS_AS(ops::conv_output_extent(96, 11, {4, 0}), ShapeError);
  CHECK(ops::conv_output_extent(5, 3, {1, 1}) == 5);
}

TEST_CASE("maxpool floors and keeps the first maximum") {
  CHECK(ops::pool_output_extent(7, 2, 2) == 3);
  CHECK(ops::pool_output_extent(6, 3, 1) == 4);
  CHECK_THROWS_AS(ops::pool_output_extent(2, 3, 1), ShapeError);
  Tensor x({1, 2, 2, 1}, std::vector<double>{5, 5, 1, 2});
  const auto r = ops::maxpool_forward(x, 2, 2);
  CHECK(r.out[0] == 5);
  CHECK(r.argmax[0] == 0);
  const Tensor dx = ops::maxpool_backward(Tensor({1, 1, 1, 1}, 2.0), r.argmax, x.shape());
  CHECK(dx.storage() == std::vector<double>{2, 0, 0, 0});
}

TEST_CASE("relu derivative at zero is zero") {
  const Tensor x({3}, std::vector<double>{-1, 0, 2});
  CHECK(ops::relu_forward(x).storage() == std::vector<double>{0, 0, 2});
  CHECK(ops::relu_backward(x, Tensor({3}, 1.0)).storage() == std::vector<double>{0, 0, 1});
}

TEST_CASE("gru cell follows the gate equations") {
  // One unit, one input, hand-computed.
  const Tensor x({1, 1}, 0.5), h({1, 1}, -0.2);
  const Tensor wz({1, 1}, 0.3), uz({1, 1}, 0.4), bz({1}, -1.0);
  const Tensor wr({1, 1}, -0.6), ur({1, 1}, 0.2), br({1}, 0.1);
  const Tensor wh({1, 1}, 0.9), uh({1, 1}, -0.7), bh({1}, 0.05);
  const ops::GruWeights w{&wz, &uz, &bz, &wr, &ur, &br, &wh, &uh, &bh};
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double z = sig(0.5 * 0.3 + -0.2 * 0.4 - 1.0);
  const double r = sig(0.5 * -0.6 + -0.2 * 0.2 + 0.1);
  const double hc = std::tanh(0.5 * 0.9 + (r * -0.2) * -0.7 + 0.05);
  const double expect = (1 - z) * -0.2 + z * hc;
  CHECK(ops::gru_cell_forward(x, h, w).h[0] == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("whole model gradient through conv, pool, fc and gru") {
  nn::ModelSpec spec = nn::preset("resnet-mini-gru");
  nn::Model model(spec, 11);
  std::mt19937_64 rng(2);
  Tensor x = gradcheck::random_tensor({2, 3, 16, 16, 3}, rng);
  const Tensor target = gradcheck::random_tensor({2, 3, 2}, rng);
  auto objective = [&] { return nn::loss_1mccc(model.forward_sequence(x), target).loss; };
  model.zero_grad();
  const auto lr = nn::loss_1mccc(model.forward_sequence(x), target);
  model.backward(lr.grad);
  gradcheck::Result res;
  for (auto* p : model.parameters()) {
    const Tensor g = p->grad;
    gradcheck::check(p->value, g, objective, res, p->name, rng, 4);
  }
  INFO(res.worst);
  CHECK(res.max_rel < kTol);
}
