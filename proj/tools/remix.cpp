// remix: data synthesis, staged training, sampling, benchmarks and self-checks.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "remix/ablation.hpp"
#include "remix/config.hpp"
#include "remix/connector.hpp"
#include "remix/error.hpp"
#include "remix/inference.hpp"
#include "remix/training.hpp"
#include "remix/verify.hpp"

namespace fs = std::filesystem;
using namespace remix;

namespace {

struct Common {
    std::string config_file;
    std::string root;
    std::map<std::string, std::string> overrides;
};

// Every config key becomes --kebab-case on the subcommand, except those the
// subcommand defines with a different meaning.
void add_config_flags(CLI::App* cmd, Common& common, const std::set<std::string>& skip = {}) {
    cmd->add_option("--config", common.config_file, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--root", common.root, "output root (overrides REMIX_RUN_DIR and run_dir)");
    for (const auto& key : config_schema()) {
        if (skip.count(key.name)) continue;
        cmd->add_option_function<std::string>(
               "--" + snake_to_kebab(key.name), [&common, name = key.name](const std::string& v) {
                   common.overrides[name] = v;
               },
               key.doc + " (default " + key.default_value + ")")
            ->type_name("VALUE");
    }
}

RunConfig build_config(const Common& common) {
    RunConfig cfg = common.config_file.empty() ? RunConfig() : load_config(common.config_file);
    for (const auto& [k, v] : common.overrides) cfg.set(k, v);
    return cfg;
}

RunLayout build_layout(const RunConfig& cfg, const Common& common) {
    return RunLayout(cfg, common.root.empty() ? std::nullopt : std::optional<fs::path>(common.root));
}

ProgressFn printer() {
    return [](const std::string& stage, long long step, long long total, double loss) {
        const long long every = std::max<long long>(1, total / 20);
        if (step % every == 0 || step == total) {
            std::fprintf(stderr, "[%s] %lld/%lld loss %.5f\n", stage.c_str(), step, total, loss);
        }
    };
}

void report(const StageReport& r) {
    fmt::print("{}: {}{}\n", r.stage, r.checkpoint.string(), r.cached ? " (cached)" : "");
}

int print_checks(const std::vector<CheckResult>& results) {
    int failed = 0;
    for (const auto& r : results) {
        fmt::print("{} {} {}\n", r.passed ? "PASS" : "FAIL", r.name, r.detail);
        failed += r.passed ? 0 : 1;
    }
    return failed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reference conditioning stack for a small flow-matching transformer"};
    app.require_subcommand(1);

    Common common;

    auto* synth_cmd = app.add_subcommand("synth-data", "render the synthetic datasets");
    bool overwrite = false;
    synth_cmd->add_flag("--overwrite", overwrite, "rebuild even if present");
    add_config_flags(synth_cmd, common);

    auto* pre_cmd = app.add_subcommand("pretrain", "train the identity encoder and the backbone");
    add_config_flags(pre_cmd, common);

    auto* conn_cmd = app.add_subcommand("train-connector", "train the connector against the frozen backbone");
    add_config_flags(conn_cmd, common);

    auto* ipcn_cmd = app.add_subcommand("train-ipcn", "train the control branch");
    std::string stage = "all";
    ipcn_cmd->add_option("--stage", stage, "warmup, main, final or all")
        ->check(CLI::IsMember({"warmup", "main", "final", "all"}));
    add_config_flags(ipcn_cmd, common);

    auto* sample_cmd = app.add_subcommand("sample", "generate one image from references, pose and prompt");
    std::vector<std::string> refs;
    std::string pose, prompt, out_dir = "sample_out";
    double alpha = 1.0, beta = 1.0, skip_t = 0.5;
    int steps = 28;
    std::uint64_t sample_seed = 0;
    sample_cmd->add_option("--refs", refs, "reference PNGs")->check(CLI::ExistingFile);
    sample_cmd->add_option("--pose", pose, "pose map PNG")->check(CLI::ExistingFile);
    sample_cmd->add_option("--prompt", prompt, "prompt symbols");
    auto* alpha_opt = sample_cmd->add_option("--alpha", alpha, "dense conditioning scale");
    auto* beta_opt = sample_cmd->add_option("--beta", beta, "sparse conditioning scale");
    auto* skip_opt = sample_cmd->add_option("--skip-t", skip_t, "reference noise intensity");
    auto* steps_opt = sample_cmd->add_option("--steps", steps, "Euler steps");
    sample_cmd->add_option("--seed", sample_seed, "sampling seed");
    sample_cmd->add_option("--out", out_dir, "output directory");
    add_config_flags(sample_cmd, common, {"alpha", "beta", "skip_t", "steps", "seed"});

    auto* eval_cmd = app.add_subcommand("evaluate", "benchmark the configured model on held-out identities");
    add_config_flags(eval_cmd, common);

    auto* ablate_cmd = app.add_subcommand("ablate", "train and benchmark variants along ablation axes");
    std::vector<std::string> axes;
    bool no_train = false;
    ablate_cmd->add_option("--axes", axes, "equivariant, dve, sve, global, id_loss")->required();
    ablate_cmd->add_flag("--no-train", no_train, "report missing variants instead of training them");
    add_config_flags(ablate_cmd, common);

    auto* verify_cmd = app.add_subcommand("verify", "no-op, gradient and loss-identity self-checks");
    int trials = 100;
    verify_cmd->add_option("--trials", trials, "random inputs for the no-op check");
    add_config_flags(verify_cmd, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const RunConfig cfg = build_config(common);
        const RunLayout layout = build_layout(cfg, common);

        if (synth_cmd->parsed()) {
            ensure_datasets(cfg, layout, overwrite);
            fmt::print("datasets: {}\n", layout.data.string());
            return 0;
        }
        if (pre_cmd->parsed()) {
            ensure_datasets(cfg, layout);
            Trainer t(cfg, layout, printer());
            report(t.train_identity());
            report(t.pretrain());
            return 0;
        }
        if (conn_cmd->parsed()) {
            Trainer t(cfg, layout, printer());
            const StageReport r = t.train_connector();
            report(r);
            if (!r.cached) {
                fmt::print("held-out loss {:.6g} -> {:.6g}; frozen checksum {:016x} -> {:016x}\n", r.initial_eval,
                           r.final_eval, r.frozen_checksum_before, r.frozen_checksum_after);
            }
            return 0;
        }
        if (ipcn_cmd->parsed()) {
            Trainer t(cfg, layout, printer());
            if (stage == "warmup" || stage == "all") report(t.train_warmup());
            if (stage == "main" || stage == "all") report(t.train_main());
            if (stage == "final" || stage == "all") report(t.train_final());
            return 0;
        }
        if (sample_cmd->parsed()) {
            const Trainer t(cfg, layout);
            const Models m = t.load_models(Stage::Final);
            ConditionBundle b;
            for (const auto& r : refs) b.dense_refs.push_back(load_png(r));
            if (!pose.empty()) b.sparse_map = load_png(pose);
            b.instruction = split_tokens(prompt);
            b.alpha = alpha_opt->count() ? alpha : cfg.get_real("alpha");
            b.beta = beta_opt->count() ? beta : cfg.get_real("beta");
            b.skip_t = skip_opt->count() ? skip_t : cfg.get_real("skip_t");
            b.seed = sample_seed;
            b.use_connector = cfg.get_bool("sample_connector");
            b.use_dve = cfg.get_bool("use_dve");
            b.use_sve = cfg.get_bool("use_sve");
            b.use_global = cfg.get_bool("use_global");
            const SampleResult r = sample(m, b, steps_opt->count() ? steps : cfg.get_i("steps"));
            write_sample(r, b, cfg.hash(), out_dir);
            fmt::print("wrote {}\n", (fs::path(out_dir) / "generated.png").string());
            return 0;
        }
        if (eval_cmd->parsed() || ablate_cmd->parsed()) {
            const bool train = ablate_cmd->parsed() && !no_train;
            const AblationOutput out =
                run_ablation(cfg, layout, eval_cmd->parsed() ? std::vector<std::string>{} : axes, train, printer());
            for (const auto& r : out.table.rows) {
                if (r.missing) {
                    fmt::print("{}: MISSING\n", r.variant);
                } else {
                    fmt::print("{}: id_sim {:.4f}±{:.4f} img_sim {:.4f}±{:.4f} instr_sim {:.4f}±{:.4f} (n={})\n",
                               r.variant, r.id_sim, r.id_sim_std, r.img_sim, r.img_sim_std, r.instr_sim,
                               r.instr_sim_std, r.n_samples);
                }
            }
            fmt::print("metrics: {}\nplot: {}\n", out.csv.string(), out.plot.string());
            return 0;
        }
        if (verify_cmd->parsed()) {
            std::vector<fs::path> curves;
            if (fs::exists(layout.root / "stages")) {
                for (const auto& d : fs::directory_iterator(layout.root / "stages")) {
                    if (fs::exists(d.path() / "loss.csv") &&
                        (d.path().filename().string().rfind("warmup", 0) == 0 ||
                         d.path().filename().string().rfind("main", 0) == 0 ||
                         d.path().filename().string().rfind("final", 0) == 0)) {
                        curves.push_back(d.path() / "loss.csv");
                    }
                }
            }
            int failed = print_checks(verify_noop(cfg, trials, static_cast<std::uint64_t>(cfg.get_int("seed"))));
            failed += print_checks(verify_gradients(static_cast<std::uint64_t>(cfg.get_int("seed"))));
            failed += print_checks(verify_loss_identities(curves, cfg.get_real("lambda")));
            return failed == 0 ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 2;
}
