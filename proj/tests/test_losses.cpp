#include <doctest.h>

#include <cmath>

#include "remix/error.hpp"
#include "remix/losses.hpp"
#include "remix/rng.hpp"
#include "remix/verify.hpp"

using namespace remix;

namespace {

LatentCanvas random_canvas(Rng& rng) {
    const LatentCanvas c = concat_canvas(std::vector<Latent>{Latent(2, 3, 4)}, Latent(2, 2, 4));
    return {c.layout, rng.normal_vector(c.values.size())};
}

}  // namespace

TEST_CASE("noising interpolates between data and noise") {
    Rng rng(1);
    const LatentCanvas x0 = random_canvas(rng);
    DiffusionStep s{0.0, rng.normal_vector(x0.values.size())};
    CHECK(noise_canvas(x0, s).values == x0.values);
    s.tau = 1.0;
    CHECK(noise_canvas(x0, s).values == s.eps);
    s.tau = 0.25;
    const auto mid = noise_values(x0.values, s);
    for (std::size_t i = 0; i < mid.size(); ++i) CHECK(mid[i] == doctest::Approx(0.75 * x0.values[i] + 0.25 * s.eps[i]));
    s.tau = 1.5;
    CHECK_THROWS_AS(noise_canvas(x0, s), InvalidInput);
}

TEST_CASE("equ_loss is zero at the exact velocity and covers every segment") {
    Rng rng(2);
    const LatentCanvas x0 = random_canvas(rng);
    const DiffusionStep s{0.3, rng.normal_vector(x0.values.size())};
    std::vector<double> v(x0.values.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = s.eps[i] - x0.values[i];
    const int c = x0.layout.channels;
    CHECK(equ_loss(ag::constant(x0.layout.tokens(), c, v), s, x0).item() == 0.0);
    // Perturbing only a reference token must raise the whole-canvas loss but not the target-region loss.
    v[0] += 1.0;
    const ag::Var pred = ag::constant(x0.layout.tokens(), c, v);
    CHECK(equ_loss(pred, s, x0).item() == doctest::Approx(1.0 / static_cast<double>(v.size())));
    const auto target_rows = x0.layout.segment_tokens(*x0.layout.target_segment());
    CHECK(region_loss(pred, s, x0, target_rows).item() == 0.0);
}

TEST_CASE("id_loss endpoints and errors") {
    const std::vector<double> a = {1, 2, 3}, orth = {3, 0, -1}, anti = {-2, -4, -6};
    CHECK(id_loss(a, a) == doctest::Approx(0.0));
    CHECK(id_loss(a, orth) == doctest::Approx(1.0));
    CHECK(id_loss(a, anti) == doctest::Approx(2.0));
    CHECK_THROWS_AS(id_loss(a, std::vector<double>{0, 0, 0}), InvalidInput);
    CHECK_THROWS_AS(id_loss(a, std::vector<double>{1, 2}), InvalidInput);
}

TEST_CASE("total loss combines with lambda and rejects non-finite inputs") {
    CHECK(total_loss(0.5, 0.25, 0.2) == doctest::Approx(0.55));
    CHECK(total_loss(0.5, 0.25, 0.0) == 0.5);
    CHECK_THROWS_AS(total_loss(NAN, 0.1, 0.2), InvalidInput);
    CHECK_THROWS_AS(total_loss(0.1, INFINITY, 0.2), InvalidInput);
}

TEST_CASE("verify suites pass on loss identities and gradients") {
    for (const auto& r : verify_loss_identities({}, 0.2)) CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
    for (const auto& r : verify_gradients(5)) CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
}
