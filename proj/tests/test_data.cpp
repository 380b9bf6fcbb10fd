#include <doctest.h>

#include <fstream>
#include <set>

#include "helpers.hpp"
#include "remix/checkpoint.hpp"
#include "remix/data_synth.hpp"
#include "remix/error.hpp"
#include "remix/image.hpp"
#include "remix/probe.hpp"

using namespace remix;
using namespace remix::synth;

TEST_CASE("identities are deterministic, distinct and valid") {
    std::set<std::tuple<int, int, int, int, int>> seen;
    for (int id = 0; id < 200; ++id) {
        const IdentitySpec a = make_identity(3, id), b = make_identity(3, id);
        CHECK(a.primary_color == b.primary_color);
        CHECK(a.primary_color != a.secondary_color);
        seen.insert({a.body_shape, a.primary_color, a.secondary_color, a.accessory, a.texture_motif});
    }
    CHECK(seen.size() == 200);
}

TEST_CASE("the probe recovers every rendered attribute") {
    for (int id = 0; id < 40; ++id) {
        const IdentitySpec spec = make_identity(9, id);
        for (int k = 0; k < 3; ++k) {
            const SceneSpec scene = make_scene(9, id, k);
            const Render r = render(spec, scene, 32 * (1 + id % 2));
            const ProbeResult p = probe(r.image);
            CHECK(p.shape == spec.body_shape);
            CHECK(p.primary == spec.primary_color);
            CHECK(p.secondary == spec.secondary_color);
            CHECK(p.accessory == spec.accessory);
            CHECK(p.texture == spec.texture_motif);
            CHECK(p.background == scene.background);
            CHECK(caption_agreement(p, r.caption).score() == 1.0);
        }
    }
}

TEST_CASE("caption agreement counts failed and unknown claims") {
    const IdentitySpec spec = make_identity(1, 0);
    const Render r = render(spec, make_scene(1, 0, 0), 32);
    auto caption = r.caption;
    const ProbeResult p = probe(r.image);
    for (std::size_t i = 0; i + 1 < caption.size(); ++i) {
        if (caption[i] == "body") {
            caption[i + 1] = caption[i + 1] == "red" ? "blue" : "red";
            break;
        }
    }
    CHECK(caption_agreement(p, caption).score() < 1.0);
    const std::vector<std::string> weird = {"body", "plaid"};
    const Agreement a = caption_agreement(p, weird);
    CHECK(a.score() < 1.0);
    CHECK_FALSE(a.unknown.empty());
    CHECK(caption_agreement(p, std::vector<std::string>{}).score() == 1.0);
}

TEST_CASE("edits change exactly one attribute") {
    for (std::uint64_t s = 0; s < 100; ++s) {
        const IdentitySpec id = make_identity(2, static_cast<int>(s));
        const Edit e = make_edit(id, s);
        const int changed = (e.edited.body_shape != id.body_shape) + (e.edited.primary_color != id.primary_color) +
                            (e.edited.secondary_color != id.secondary_color) + (e.edited.accessory != id.accessory) +
                            (e.edited.texture_motif != id.texture_motif);
        CHECK(changed == 1);
        CHECK(e.edited.primary_color != e.edited.secondary_color);
        CHECK(e.instruction.size() == 3);
    }
}

TEST_CASE("datasets are reproducible and their manifests round trip") {
    const auto dir = testing::scratch_dir("data");
    const DatasetCounts counts{3, 2, 3};
    for (Mode mode : {Mode::OneToOne, Mode::OneToMany, Mode::EditingTriples}) {
        const auto out = dir / mode_name(mode);
        const Manifest m = build_dataset(5, counts, mode, 32, out, false);
        CHECK_THROWS_AS(build_dataset(5, counts, mode, 32, out, false), InvalidInput);
        const Manifest back = read_manifest(out / "manifest.tsv");
        REQUIRE(back.records.size() == m.records.size());
        CHECK(back.records.size() == 15);
        for (std::size_t i = 0; i < m.records.size(); ++i) {
            CHECK(back.records[i].image_path == m.records[i].image_path);
            CHECK(back.records[i].caption == m.records[i].caption);
            CHECK(back.records[i].ref_path == m.records[i].ref_path);
        }
        CHECK(m.split("test").size() == 6);
        const Image first = load_png(m.resolve(m.records[0].image_path));
        const Manifest again = build_dataset(5, counts, mode, 32, dir / "again", true);
        CHECK(load_png(again.resolve(again.records[0].image_path)) == first);
    }
}

TEST_CASE("png round trip is exact on 8-bit levels") {
    Rng rng(3);
    const Image img = testing::random_levels(rng, 8, 12);
    const auto path = testing::scratch_dir("png") / "x.png";
    save_png(img, path);
    CHECK(load_png(path) == img);
    Image bad(2, 2);
    bad.pixels[0] = 1.5f;
    CHECK_THROWS_AS(validate_image(bad), InvalidInput);
}

TEST_CASE("checkpoints round trip bit-exactly and reject foreign files") {
    const auto dir = testing::scratch_dir("ckpt");
    Rng rng(4);
    Checkpoint ck;
    ck.stage = "pretrain";
    ck.step = 1234;
    ck.config = {{"depth", "4"}, {"lambda", "0.2"}};
    ck.arrays.push_back({"w", 2, 3, rng.normal_vector(6)});
    ck.arrays.push_back({"b", 1, 1, {-0.0}});
    ck.optimizer = OptimizerState{7, {{"m.w", 2, 3, rng.normal_vector(6)}}};
    save_checkpoint(ck, dir / "a.ckpt");
    const Checkpoint back = load_checkpoint(dir / "a.ckpt");
    CHECK(back == ck);
    CHECK(back.config_value("depth") == std::optional<std::string>("4"));

    std::ofstream(dir / "junk.ckpt") << "not a checkpoint at all";
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), MissingCheckpoint);

    // Bump the version field that follows the 8-byte magic.
    std::fstream f(dir / "a.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const char v = 99;
    f.write(&v, 1);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt"), VersionMismatch);
}
