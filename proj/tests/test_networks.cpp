#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "remix/backbone.hpp"
#include "remix/connector.hpp"
#include "remix/error.hpp"
#include "remix/ip_controlnet.hpp"
#include "remix/models.hpp"
#include "remix/verify.hpp"

using namespace remix;

namespace {

BackboneConfig small_backbone() {
    BackboneConfig b;
    b.channels = 12;
    b.depth = 3;
    b.model_dim = 16;
    b.heads = 2;
    b.text_dim = 8;
    b.max_rows = 16;
    b.max_cols = 32;
    return b;
}

}  // namespace

TEST_CASE("timestep features differ across the schedule and reject out-of-range tau") {
    const auto f0 = timestep_features(0.0, 32), f1 = timestep_features(1.0, 32);
    int differ = 0;
    for (std::size_t i = 0; i < f0.size(); ++i) differ += std::abs(f0[i] - f1[i]) > 1e-9;
    CHECK(differ >= 16);
    CHECK_THROWS_AS(timestep_features(-0.1, 8), InvalidInput);
    CHECK_THROWS_AS(timestep_features(1.1, 8), InvalidInput);
}

TEST_CASE("fresh backbone predicts zero velocity and is seed-deterministic") {
    Rng rng(1);
    const BackboneConfig cfg = small_backbone();
    Backbone a(cfg, 7), b(cfg, 7), c(cfg, 8);
    CHECK(a.params().checksum() == b.params().checksum());
    CHECK(a.params().checksum() != c.params().checksum());
    const LatentCanvas canvas = concat_canvas(std::vector<Latent>{Latent(2, 2, 12)}, Latent(2, 2, 12));
    const PositionGrid g = assign_positions(canvas.layout, cfg.max_rows, cfg.max_cols);
    const ag::Var text = ag::constant(3, 8, rng.normal_vector(24));
    const ag::Var out = a.forward(ag::constant(8, 12, rng.normal_vector(96)), g, text, ag::mean_rows(text), 0.5);
    CHECK(out.rows() == 8);
    CHECK(out.cols() == 12);
    for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("backbone config validation") {
    BackboneConfig b = small_backbone();
    b.heads = 3;
    CHECK_THROWS_AS(b.validate(), ConfigError);
}

TEST_CASE("fusion schedule is cyclic") {
    CHECK(fusion_schedule(8, 4) == std::vector<int>{0, 1, 2, 3, 0, 1, 2, 3});
    CHECK(fusion_schedule(5, 2) == std::vector<int>{0, 1, 0, 1, 0});
    CHECK_THROWS_AS(fusion_schedule(2, 3), InvalidInput);
}

TEST_CASE("inject places dense on references and sparse on the target") {
    const LatentCanvas canvas = concat_canvas(std::vector<Latent>{Latent(1, 2, 1), Latent(1, 1, 1)}, Latent(1, 2, 1));
    const ag::Var eps = ag::constant(5, 1, 0.0);
    const ag::Var dense = ag::constant(3, 1, std::vector<double>{1, 2, 3});
    const ag::Var sparse = ag::constant(2, 1, std::vector<double>{10, 20});
    const ag::Var out = inject(eps, canvas.layout, dense, sparse, 2.0, 0.5);
    const std::vector<double> want = {2, 4, 6, 5, 10};
    for (int i = 0; i < 5; ++i) CHECK(out.data()[i] == doctest::Approx(want[i]));
    const ag::Var none = inject(eps, canvas.layout, ag::Var(), ag::Var(), 1.0, 1.0);
    for (double v : none.data()) CHECK(v == 0.0);
}

TEST_CASE("dense encoder preserves resolution and the sparse encoder reaches the latent grid") {
    RunConfig cfg = testing::tiny_config();
    Models m(cfg);
    Rng rng(2);
    const int side = m.latent_side(), c = m.backbone.config().channels;
    const ag::Var d = m.ipcn.dve()(ag::constant(side * side, c, rng.normal_vector(side * side * c)), side, side);
    CHECK(d.rows() == side * side);
    CHECK(d.cols() == c);
    CHECK(m.ipcn.dve().layer_count() == DenseVisualEncoder::kLayers);
    const ag::Var s = m.ipcn.sve()(testing::random_levels(rng, 32, 32));
    CHECK(s.rows() == side * side);
    CHECK(m.ipcn.sve().total_stride() == m.patch());
    CHECK_THROWS_AS(m.ipcn.sve()(Image(30, 30)), InvalidInput);
}

TEST_CASE("fresh adapters leave the backbone output unchanged (bit-exact)") {
    RunConfig cfg = testing::tiny_config();
    const auto r = verify_noop(cfg, 25, 3);
    REQUIRE(r.size() == 1);
    CHECK_MESSAGE(r[0].passed, r[0].detail);
}

TEST_CASE("control branch copies the backbone blocks") {
    Models m(testing::tiny_config());
    m.ipcn.init_from_backbone(m.backbone);
    const auto& ps = m.ipcn.params();
    for (const auto& [name, v] : m.backbone.params().items()) {
        if (name.rfind("backbone.blocks.0.", 0) != 0) continue;
        const std::string mine = "ipcn." + name.substr(std::string("backbone.").size());
        REQUIRE(ps.contains(mine));
        const auto a = ps.get(mine).data();
        CHECK(std::equal(a.begin(), a.end(), v.data().begin()));
    }
}

TEST_CASE("vocabulary and token helpers") {
    const Vocabulary v({"red", "blue"});
    CHECK(v.size() == 3);
    CHECK(v.id(Vocabulary::kUnk) == 0);
    CHECK(v.id("blue") == 2);
    CHECK(v.id("green") == 0);
    CHECK(split_tokens("  recolor body   red ") == std::vector<std::string>{"recolor", "body", "red"});
    const std::vector<std::string> toks = {"a", "b"};
    CHECK(join_tokens(toks) == "a b");
}

TEST_CASE("connector with zeroed output projections returns its key") {
    nn::ParamStore ps;
    ConnectorConfig cc;
    cc.blocks = 2;
    cc.layers = 2;
    cc.dim = 8;
    cc.heads = 2;
    Rng rng(4);
    Connector conn(ps, "connector", cc, rng);
    conn.zero_output_projections();
    InstructionEmbedding q;
    q.tokens = ag::constant(3, 8, rng.normal_vector(24));
    q.pooled = ag::mean_rows(q.tokens);
    const ag::Var key = ag::constant(4, 8, rng.normal_vector(32));
    const ag::Var value = conn(q, key);
    CHECK(connector_loss(value, key).item() == 0.0);
    CHECK_THROWS_AS(connector_loss(value, ag::constant(3, 8, 0.0)), InvalidInput);
}

TEST_CASE("text stream composition appends values after the prompt") {
    const ag::Var text = ag::constant(2, 4, 1.0);
    const ag::Var value = ag::constant(3, 4, 2.0);
    const ag::Var s = compose_text_stream(value, text);
    CHECK(s.rows() == 5);
    CHECK(s.at(0, 0) == 1.0);
    CHECK(s.at(4, 3) == 2.0);
    CHECK(compose_text_stream(value, ag::Var()).rows() == 3);
}

TEST_CASE("semantic encoder yields an M x D grid") {
    Models m(testing::tiny_config());
    Rng rng(5);
    const ag::Var f = m.semantic.encode(testing::random_levels(rng, 32, 32));
    CHECK(f.rows() == m.semantic.tokens());
    CHECK(f.cols() == m.semantic.dim());
    CHECK_THROWS_AS(m.semantic.encode(Image(16, 16)), InvalidInput);
}
