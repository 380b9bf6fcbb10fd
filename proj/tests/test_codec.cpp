#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "remix/backbone.hpp"
#include "remix/error.hpp"
#include "remix/latent_codec.hpp"

using namespace remix;

TEST_CASE("encode/decode round trip is bit-exact across random shapes") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int p = 1 << rng.uniform_int(4);
        const int h = p * (1 + rng.uniform_int(6));
        const int w = p * (1 + rng.uniform_int(6));
        const Image img = testing::random_levels(rng, h, w);
        const Latent z = encode_image(img, p);
        CHECK(z.channels == 3 * p * p);
        CHECK(z.height == h / p);
        CHECK(decode_latent(z, p) == img);
    }
}

TEST_CASE("concat/split round trip is bit-exact across random layouts") {
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const int h = 1 + rng.uniform_int(5), c = 1 + rng.uniform_int(6);
        const int n = 1 + rng.uniform_int(4);
        std::vector<Latent> refs;
        for (int i = 0; i < n; ++i) {
            Latent z(h, 1 + rng.uniform_int(5), c);
            z.values = rng.normal_vector(z.values.size());
            refs.push_back(z);
        }
        std::optional<Latent> target;
        if (rng.uniform() < 0.7) {
            target = Latent(h, 1 + rng.uniform_int(5), c);
            target->values = rng.normal_vector(target->values.size());
        }
        const LatentCanvas canvas = concat_canvas(refs, target);
        auto [back, t] = split_canvas(canvas);
        REQUIRE(back.size() == refs.size());
        for (std::size_t i = 0; i < refs.size(); ++i) {
            CHECK(back[i].values == refs[i].values);
            CHECK(back[i].width == refs[i].width);
        }
        CHECK(t.has_value() == target.has_value());
        if (t) CHECK(t->values == target->values);
    }
}

TEST_CASE("codec rejects bad shapes") {
    CHECK_THROWS_AS(encode_image(Image(10, 8), 4), InvalidInput);
    CHECK_THROWS_AS(decode_latent(Latent(2, 2, 5), 2), InvalidInput);
    CHECK_THROWS_AS(concat_canvas(std::vector<Latent>{Latent(2, 2, 3), Latent(3, 2, 3)}, std::nullopt), InvalidInput);
    LatentCanvas bad = concat_canvas(std::vector<Latent>{Latent(2, 2, 3)}, std::nullopt);
    bad.values.pop_back();
    CHECK_THROWS_AS(split_canvas(bad), CorruptCanvas);
}

TEST_CASE("differentiable decode agrees with the exact decoder") {
    Rng rng(13);
    const Image img = testing::random_levels(rng, 16, 16);
    const Latent z = encode_image(img, 4);
    const ag::Var px = decode_tokens(to_var(z), z.height, z.width, 4);
    const ag::Var ref = image_to_var(img);
    for (std::size_t i = 0; i < px.size(); ++i) CHECK(px.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-6));
}

TEST_CASE("reference and generated positions are disjoint; target origin is (h, sum of ref widths)") {
    Rng rng(14);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + rng.uniform_int(4);
        const int h = 1 + rng.uniform_int(8);
        std::vector<Latent> refs;
        int wsum = 0;
        for (int i = 0; i < n; ++i) {
            refs.emplace_back(h, 1 + rng.uniform_int(8), 3);
            wsum += refs.back().width;
        }
        const Latent target(h, 1 + rng.uniform_int(8), 3);
        const LatentCanvas canvas = concat_canvas(refs, target);
        const PositionGrid g = assign_positions(canvas.layout, 64, 128);
        const int ts = *canvas.layout.target_segment();
        std::set<std::pair<int, int>> ref_pos, gen_pos;
        for (int s = 0; s < canvas.layout.segment_count(); ++s) {
            for (int t : canvas.layout.segment_tokens(s)) {
                (s == ts ? gen_pos : ref_pos).insert({g.rows[t], g.cols[t]});
            }
        }
        for (const auto& p : gen_pos) CHECK(ref_pos.count(p) == 0);
        CHECK(gen_pos.size() == static_cast<std::size_t>(h * target.width));
        const int first = canvas.layout.segment_tokens(ts).front();
        CHECK(g.rows[first] == h);
        CHECK(g.cols[first] == wsum);
    }
}

TEST_CASE("positions beyond the table are rejected") {
    const LatentCanvas canvas = concat_canvas(std::vector<Latent>{Latent(4, 4, 3)}, Latent(4, 4, 3));
    CHECK_THROWS_AS(assign_positions(canvas.layout, 8, 6), InvalidInput);
    CHECK_NOTHROW(assign_positions(canvas.layout, 9, 9));
}
