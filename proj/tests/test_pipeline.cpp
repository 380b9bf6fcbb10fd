#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "remix/ablation.hpp"
#include "remix/error.hpp"
#include "remix/eval.hpp"
#include "remix/inference.hpp"
#include "remix/training.hpp"

using namespace remix;
namespace fs = std::filesystem;

TEST_CASE("tau schedule and skip-ahead endpoints") {
    const auto taus = tau_schedule(4);
    CHECK(taus == std::vector<double>{1.0, 0.75, 0.5, 0.25, 0.0});
    CHECK_THROWS(tau_schedule(0));
    Latent z(1, 2, 1);
    z.values = {0.5, -0.5};
    const std::vector<double> eps = {2.0, 3.0};
    CHECK(skip_ahead_noise(z, 0.0, eps).values == z.values);
    CHECK(skip_ahead_noise(z, 1.0, eps).values == eps);
    CHECK(skip_ahead_noise(z, 0.5, eps).values[0] == doctest::Approx(1.25));
    CHECK_THROWS_AS(skip_ahead_noise(z, 1.5, eps), InvalidInput);
    CHECK_THROWS_AS(skip_ahead_noise(z, 0.5, std::vector<double>{1.0}), InvalidInput);
}

TEST_CASE("sampling is seeded, exact on references at skip_t 0, and validates its bundle") {
    Models m(testing::tiny_config());
    Rng rng(1);
    ConditionBundle b;
    b.dense_refs = {testing::random_levels(rng, 32, 32), testing::random_levels(rng, 32, 32)};
    b.sparse_map = testing::random_levels(rng, 32, 32);
    b.instruction = {"pose", "wave"};
    b.skip_t = 0.0;
    b.seed = 9;
    const SampleResult r = sample(m, b, 3);
    REQUIRE(r.reconstructed_refs.size() == 2);
    CHECK(r.reconstructed_refs[0] == b.dense_refs[0]);
    CHECK(r.reconstructed_refs[1] == b.dense_refs[1]);
    CHECK(r.layout.segment_count() == 3);
    CHECK(sample(m, b, 3).generated == r.generated);
    b.seed = 10;
    CHECK_FALSE(sample(m, b, 3).generated == r.generated);

    ConditionBundle empty;
    CHECK_THROWS_AS(sample(m, empty, 3), InvalidInput);
    b.skip_t = 1.2;
    CHECK_THROWS_AS(sample(m, b, 3), InvalidInput);
    b.skip_t = 0.5;
    b.dense_refs = {Image(16, 16)};
    CHECK_THROWS_AS(sample(m, b, 3), InvalidInput);
}

TEST_CASE("write_sample emits images and a key=value sidecar") {
    Models m(testing::tiny_config());
    Rng rng(2);
    ConditionBundle b;
    b.dense_refs = {testing::random_levels(rng, 32, 32)};
    b.instruction = {"bg", "teal"};
    const SampleResult r = sample(m, b, 2);
    const auto dir = testing::scratch_dir("sample");
    write_sample(r, b, "abc", dir);
    CHECK(fs::exists(dir / "generated.png"));
    CHECK(fs::exists(dir / "recon_0.png"));
    std::ifstream f(dir / "meta.txt");
    std::string all((std::istreambuf_iterator<char>(f)), {});
    CHECK(all.find("config_hash=abc") != std::string::npos);
    CHECK(all.find("skip_t=0.5") != std::string::npos);
}

TEST_CASE("similarities are bounded, symmetric and 1 on identical inputs") {
    Models m(testing::tiny_config());
    Rng rng(3);
    const Image a = testing::random_levels(rng, 32, 32), b = testing::random_levels(rng, 32, 32);
    CHECK(identity_similarity(m.identity, a, a) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(image_similarity(m.semantic, a, a) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(identity_similarity(m.identity, a, b) == identity_similarity(m.identity, b, a));
    CHECK(image_similarity(m.semantic, a, b) == image_similarity(m.semantic, b, a));
    const double s = image_similarity(m.semantic, a, b);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    // The codec round trip leaves the image, hence the score, unchanged.
    const Image rt = decode_latent(encode_image(a, 8), 8);
    CHECK(image_similarity(m.semantic, rt, b) == s);
}

TEST_CASE("metrics CSV round trips and marks missing variants") {
    MetricsTable t;
    t.rows.push_back({"vanilla", 0.5, 0.25, 0.125, 16, "0;1", 0.01, 0.02, 0.03, false});
    MetricsRow gap;
    gap.variant = "w/o DVE";
    gap.missing = true;
    t.rows.push_back(gap);
    const auto path = testing::scratch_dir("metrics") / "m.csv";
    write_metrics_csv(t, path);
    std::ifstream f(path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "variant,id_sim,img_sim,instr_sim,n_samples,seed_set,id_sim_std,img_sim_std,instr_sim_std");
    const MetricsTable back = read_metrics_csv(path);
    REQUIRE(back.rows.size() == 2);
    CHECK(back.rows[0].id_sim == 0.5);
    CHECK(back.rows[0].seed_set == "0;1");
    CHECK(back.find("w/o DVE")->missing);
    CHECK(back.find("nope") == nullptr);
}

TEST_CASE("ablation axes expand to the compared variants") {
    const RunConfig base = testing::tiny_config();
    const auto eq = ablation_variants(base, {"equivariant"});
    REQUIRE(eq.size() == 2);
    CHECK(eq[0].name == "vanilla");
    CHECK_FALSE(eq[0].cfg.get_bool("equivariant"));
    CHECK(eq[0].skip_t == 0.0);
    CHECK(eq[1].skip_t == base.get_real("skip_t"));
    const auto dve = ablation_variants(base, {"dve"});
    CHECK(dve[0].name == "w/o DVE");
    CHECK_FALSE(dve[0].cfg.get_bool("use_dve"));
    CHECK(ablation_variants(base, {}).size() == 1);
    CHECK_THROWS_AS(ablation_variants(base, {"colour"}), InvalidInput);
}

TEST_CASE("stage keys share upstream stages between variants") {
    RunConfig a = testing::tiny_config(), b = a;
    b.set("equivariant", "false");
    CHECK(stage_hash(a, Stage::Main) == stage_hash(b, Stage::Main));
    CHECK(stage_hash(a, Stage::Final) != stage_hash(b, Stage::Final));
    b.set("use_dve", "false");
    CHECK(stage_hash(a, Stage::Pretrain) == stage_hash(b, Stage::Pretrain));
    CHECK(stage_hash(a, Stage::Warmup) != stage_hash(b, Stage::Warmup));
    RunConfig c = a;
    c.set("lr_connector", "0.001");
    CHECK(stage_hash(a, Stage::Connector) != stage_hash(c, Stage::Connector));
    CHECK(stage_hash(a, Stage::Warmup) == stage_hash(c, Stage::Warmup));
}

TEST_CASE("staged training end to end on a tiny configuration") {
    const auto root = testing::scratch_dir("train");
    const RunConfig cfg = testing::tiny_config();
    const RunLayout layout(cfg, root);
    Trainer t(cfg, layout);
    CHECK_THROWS_AS(t.train_warmup(), MissingCheckpoint);
    ensure_datasets(cfg, layout);
    CHECK_THROWS_AS(t.train_connector(), MissingCheckpoint);

    const StageReport id = t.train_identity();
    CHECK(fs::exists(id.checkpoint));
    CHECK(t.train_identity().cached);
    t.pretrain();
    const StageReport conn = t.train_connector();
    CHECK(conn.frozen_checksum_before == conn.frozen_checksum_after);
    CHECK(std::isfinite(conn.initial_eval));

    const StageReport fin = t.run_through(Stage::Final);
    CHECK(fin.stage == "equivariant");
    const auto dir = layout.stage_dir(cfg, Stage::Final);
    CHECK(fs::exists(dir / "checkpoint.ckpt"));
    CHECK_FALSE(fs::exists(dir / "last.ckpt"));
    const auto curve = read_curve_csv(dir / "loss.csv");
    CHECK(curve.size() == 3);
    for (const auto& r : curve) CHECK(r.l_total == doctest::Approx(r.l_equ + 0.2 * r.l_id).epsilon(1e-12));
    CHECK(read_probe_csv(dir / "probe.csv").size() >= 2);

    // The vanilla variant reuses warm-up and main.
    RunConfig van = cfg;
    van.set("equivariant", "false");
    CHECK(layout.stage_dir(van, Stage::Main) == layout.stage_dir(cfg, Stage::Main));
    Trainer tv(van, layout);
    CHECK(tv.train_main().cached);
    CHECK(tv.train_final().stage == "main_1toMany");

    const Models m = t.load_models(Stage::Final);
    CHECK(m.ipcn.params().checksum() != Models(cfg).ipcn.params().checksum());
}

TEST_CASE("interrupted training resumes to the same weights") {
    const auto root_a = testing::scratch_dir("resume_a");
    const auto root_b = testing::scratch_dir("resume_b");
    RunConfig cfg = testing::tiny_config();
    cfg.set("iters_pretrain", "5");
    cfg.set("checkpoint_every", "2");
    const RunLayout la(cfg, root_a), lb(cfg, root_b);
    ensure_datasets(cfg, la);
    ensure_datasets(cfg, lb);
    Trainer ta(cfg, la);
    ta.run_through(Stage::Pretrain);

    // Stop run b after step 4 by raising from the progress callback.
    struct Stop {};
    Trainer tb(cfg, lb, [](const std::string& stage, long long step, long long, double) {
        if (stage == "pretrain" && step == 5) throw Stop{};
    });
    tb.train_identity();
    CHECK_THROWS_AS(tb.pretrain(), Stop);
    CHECK(fs::exists(lb.stage_dir(cfg, Stage::Pretrain) / "last.ckpt"));
    Trainer tb2(cfg, lb);
    tb2.pretrain();
    const Checkpoint a = load_checkpoint(la.stage_dir(cfg, Stage::Pretrain) / "checkpoint.ckpt");
    const Checkpoint b = load_checkpoint(lb.stage_dir(cfg, Stage::Pretrain) / "checkpoint.ckpt");
    CHECK(a.arrays == b.arrays);
    CHECK(read_curve_csv(la.stage_dir(cfg, Stage::Pretrain) / "loss.csv").size() ==
          read_curve_csv(lb.stage_dir(cfg, Stage::Pretrain) / "loss.csv").size());
}

TEST_CASE("benchmark is reproducible and reports missing variants") {
    const auto root = testing::scratch_dir("bench");
    const RunConfig cfg = testing::tiny_config();
    const RunLayout layout(cfg, root);
    ensure_datasets(cfg, layout);
    Trainer t(cfg, layout);
    t.run_through(Stage::Final);
    const AblationOutput a = run_ablation(cfg, layout, {"dve"}, false);
    REQUIRE(a.table.rows.size() == 2);
    CHECK(a.table.find("w/o DVE")->missing);
    const MetricsRow* full = a.table.find("full");
    REQUIRE(full);
    CHECK_FALSE(full->missing);
    CHECK(full->n_samples == 2 * 1 * 2);
    CHECK(fs::exists(a.csv));
    CHECK(fs::exists(a.plot));
    const AblationOutput b = run_ablation(cfg, layout, {"dve"}, false);
    CHECK(b.table.find("full")->id_sim == full->id_sim);
    CHECK(b.table.find("full")->img_sim == full->img_sim);
}
