#include <doctest.h>

#include "remix/autograd.hpp"
#include "remix/rng.hpp"
#include "remix/verify.hpp"

using namespace remix;

namespace {

ag::Var leaf(Rng& rng, int r, int c) { return ag::parameter(r, c, rng.normal_vector(static_cast<std::size_t>(r) * c)); }

}  // namespace

TEST_CASE("elementwise and matrix ops pass finite-difference checks") {
    Rng rng(1);
    auto a = leaf(rng, 3, 4), b = leaf(rng, 4, 5), bias = leaf(rng, 1, 5), row = leaf(rng, 1, 4);
    CHECK(gradient_check([&] { return ag::mean(ag::gelu(ag::linear(a, b, bias))); }, {a, b, bias}).rel_error < 1e-6);
    CHECK(gradient_check([&] { return ag::sum(ag::mul(ag::tanh(a), ag::sigmoid(ag::add_row(a, row)))); }, {a, row})
              .rel_error < 1e-6);
    CHECK(gradient_check([&] { return ag::sum(ag::matmul_nt(a, ag::silu(a))); }, {a}).rel_error < 1e-6);
    const ag::Var w = ag::constant(3, 4, rng.normal_vector(12));
    CHECK(gradient_check([&] { return ag::sum(ag::mul(ag::layer_norm(a), w)); }, {a}).rel_error < 1e-6);
    CHECK(gradient_check([&] { return ag::sum(ag::l2_normalize_rows(ag::mul_row(a, row))); }, {a, row}).rel_error <
          1e-6);
}

TEST_CASE("attention, convolution and pooling pass finite-difference checks") {
    Rng rng(2);
    auto q = leaf(rng, 3, 8), k = leaf(rng, 5, 8), v = leaf(rng, 5, 8);
    CHECK(gradient_check([&] { return ag::mean(ag::mul(ag::attention(q, k, v, 2), ag::attention(q, k, v, 2))); },
                         {q, k, v})
              .rel_error < 1e-6);
    auto x = leaf(rng, 6 * 6, 2), w = leaf(rng, 9 * 2, 3), bias = leaf(rng, 1, 3);
    ag::ConvGeometry g{6, 6, 3, 2, 1};
    CHECK(gradient_check([&] { return ag::sum(ag::tanh(ag::conv2d(x, w, bias, g))); }, {x, w, bias}).rel_error <
          1e-6);
    CHECK(gradient_check([&] { return ag::sum(ag::mul(ag::avg_pool(x, 6, 6, 2), ag::avg_pool(x, 6, 6, 2))); }, {x})
              .rel_error < 1e-6);
}

TEST_CASE("shape ops and cross entropy pass finite-difference checks") {
    Rng rng(3);
    auto a = leaf(rng, 4, 3), b = leaf(rng, 2, 3);
    const ag::Var parts[] = {a, b};
    CHECK(gradient_check(
              [&] {
                  const ag::Var c = ag::concat_rows(parts);
                  return ag::sum(ag::mul(ag::slice_rows(c, 1, 4), ag::reshape(ag::slice_cols(ag::reshape(c, 3, 6), 1, 4), 4, 3)));
              },
              {a, b})
              .rel_error < 1e-6);
    const std::vector<int> labels = {0, 2, 1, 1};
    CHECK(gradient_check([&] { return ag::cross_entropy(a, labels); }, {a}).rel_error < 1e-6);
    CHECK(gradient_check([&] { return ag::sum(ag::gather(a, 2, 2, {0, 5, 5, 11})); }, {a}).rel_error < 1e-6);
}

TEST_CASE("no-grad scope records no graph") {
    Rng rng(4);
    auto a = leaf(rng, 2, 2);
    ag::Var y;
    {
        ag::NoGradGuard guard;
        CHECK_FALSE(ag::grad_enabled());
        y = ag::sum(ag::mul(a, a));
    }
    CHECK(ag::grad_enabled());
    CHECK_FALSE(y.requires_grad());
}
