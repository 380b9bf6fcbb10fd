#include "remix/ablation.hpp"

#include <fmt/format.h>

#include <map>
#include <memory>

#include "remix/error.hpp"
#include "remix/plot.hpp"

namespace remix {

namespace fs = std::filesystem;

namespace {

double sample_skip(const RunConfig& c) { return c.get_bool("equivariant") ? c.get_real("skip_t") : 0.0; }

AblationVariant with(const RunConfig& base, const std::string& name, const std::string& key, const std::string& v) {
    AblationVariant out{name, base, 0.0};
    if (!key.empty()) out.cfg.set(key, v);
    out.skip_t = sample_skip(out.cfg);
    return out;
}

}  // namespace

std::vector<AblationVariant> ablation_variants(const RunConfig& base, const std::vector<std::string>& axes) {
    std::vector<AblationVariant> out;
    if (axes.empty()) out.push_back(with(base, "remix", "", ""));
    for (const auto& axis : axes) {
        if (axis == "equivariant") {
            out.push_back(with(base, "vanilla", "equivariant", "false"));
            out.push_back(with(base, "w/ equivariant", "equivariant", "true"));
        } else if (axis == "dve" || axis == "sve" || axis == "global") {
            const std::string label = axis == "dve" ? "DVE" : axis == "sve" ? "SVE" : "global token";
            out.push_back(with(base, "w/o " + label, "use_" + axis, "false"));
            out.push_back(with(base, "full", "use_" + axis, "true"));
        } else if (axis == "id_loss") {
            out.push_back(with(base, "w/o L_id", "id_loss", "false"));
            out.push_back(with(base, "w/ L_id", "id_loss", "true"));
        } else {
            throw InvalidInput(fmt::format("unknown ablation axis '{}' (expected equivariant, dve, sve, global, "
                                           "id_loss)",
                                           axis));
        }
    }
    // Shared rows (e.g. "full" from two axes) are evaluated once.
    std::vector<AblationVariant> unique;
    for (auto& v : out) {
        bool seen = false;
        for (const auto& u : unique) seen = seen || u.name == v.name;
        if (!seen) unique.push_back(std::move(v));
    }
    return unique;
}

AblationOutput run_ablation(const RunConfig& base, const RunLayout& layout, const std::vector<std::string>& axes,
                            bool train_missing, const ProgressFn& progress) {
    const auto variants = ablation_variants(base, axes);
    std::string tag = "evaluate";
    if (!axes.empty()) {
        tag = "ablate";
        for (const auto& a : axes) tag += "_" + a;
    }
    const fs::path out_dir = layout.run_dir(base) / tag;

    std::vector<std::unique_ptr<Models>> owned;
    std::vector<Variant> bench;
    for (const auto& v : variants) {
        Trainer t(v.cfg, layout, progress);
        const bool done = fs::exists(layout.stage_dir(v.cfg, Stage::Final) / "checkpoint.ckpt");
        Variant b{v.name, nullptr, v.skip_t, v.cfg.get_bool("use_dve"), v.cfg.get_bool("use_sve"),
                  v.cfg.get_bool("use_global")};
        if (done || train_missing) {
            if (!done) t.run_through(Stage::Final);
            owned.push_back(std::make_unique<Models>(t.load_models(Stage::Final)));
            b.models = owned.back().get();
        }
        bench.push_back(b);
    }

    Trainer judge_trainer(base, layout, progress);
    if (train_missing) judge_trainer.run_through(Stage::Pretrain);
    const Models judge = judge_trainer.load_models(Stage::Pretrain);
    const synth::Manifest manifest = synth::read_manifest(layout.data / "one_to_many" / "manifest.tsv");
    const auto cases = benchmark_cases(manifest, base.get_i("eval_identities"), base.get_i("eval_prompts"),
                                       base.get_i("eval_refs"));

    AblationOutput out;
    out.table = run_benchmark(bench, cases, base.get_int_list("eval_seeds"), base.get_i("steps"), judge,
                              out_dir / "samples");
    out.csv = out_dir / "metrics.csv";
    out.plot = out_dir / "metrics.svg";
    write_metrics_csv(out.table, out.csv);
    write_metrics_plot(out.table, tag, out.plot);
    return out;
}

}  // namespace remix
