#pragma once

// Staged training: identity encoder, backbone pretraining, connector, then the
// control branch (one-to-one warm-up, one-to-many, final phase).

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "remix/config.hpp"
#include "remix/data_synth.hpp"
#include "remix/losses.hpp"
#include "remix/models.hpp"

namespace remix {

enum class Stage { Identity, Pretrain, Connector, Warmup, Main, Final };
// Final is tagged "equivariant" (shared noise) or "main_1toMany" (vanilla continuation).
std::string stage_name(Stage s, bool equivariant = true);

// Config keys whose values determine a stage's result (including prerequisites).
std::vector<std::string> stage_keys(Stage s);
std::string stage_hash(const RunConfig& cfg, Stage s);

// Output locations under the run root.
struct RunLayout {
    std::filesystem::path root;
    std::filesystem::path data;  // holds one_to_one/, one_to_many/, editing/

    RunLayout(const RunConfig& cfg, std::optional<std::filesystem::path> root_override = std::nullopt);
    std::filesystem::path stage_dir(const RunConfig& cfg, Stage s) const;
    std::filesystem::path run_dir(const RunConfig& cfg) const;  // keyed by the full config hash
};

// Manifest with lazily decoded images.
class ImageStore {
public:
    explicit ImageStore(synth::Manifest m);
    static ImageStore open(const std::filesystem::path& dataset_dir);

    const synth::Manifest& manifest() const { return manifest_; }
    const Image& image(const std::string& rel) const;
    const std::vector<const synth::Record*>& records(const std::string& split) const;
    // Records of one identity in scene order.
    const std::vector<const synth::Record*>& group(int identity) const;

private:
    synth::Manifest manifest_;
    std::map<std::string, std::vector<const synth::Record*>> by_split_;
    std::map<int, std::vector<const synth::Record*>> by_id_;
    mutable std::map<std::string, Image> cache_;
};

// Builds the three dataset flavours under layout.data unless present.
void ensure_datasets(const RunConfig& cfg, const RunLayout& layout, bool overwrite = false);

// One control-branch training sample.
struct ControlSample {
    std::vector<Image> refs;
    Image target;
    Image pose;
    std::vector<std::string> prompt;
};

struct StepOptions {
    bool equivariant = false;  // shared noise over the whole canvas, loss everywhere
    bool id_loss = false;
    double lambda = 0.2;
    bool use_dve = true;
    bool use_sve = true;
    bool use_global = true;
    double alpha = 1.0;
    double beta = 1.0;
};

// Draws tau and one noise tensor covering every canvas value.
DiffusionStep draw_step(Rng& rng, std::size_t canvas_values);

struct StepResult {
    ag::Var loss;
    LossReport report;
    DiffusionStep step;
    LatentCanvas clean;
    std::vector<double> noised;  // canvas actually fed to the model
};

StepResult control_step(const Models& models, const ControlSample& s, const StepOptions& opt, Rng& rng);

struct CurveRow {
    long long step = 0;
    double l_equ = 0.0;
    double l_id = 0.0;
    double l_total = 0.0;
};

struct ProbeRow {
    long long step = 0;
    double id_sim = 0.0;
};

struct StageReport {
    std::string stage;
    std::filesystem::path checkpoint;
    std::vector<CurveRow> curve;
    std::vector<ProbeRow> probe;
    bool cached = false;  // completed earlier, nothing run
    double initial_eval = 0.0;  // connector stage: held-out loss at step 0
    double final_eval = 0.0;
    std::uint64_t frozen_checksum_before = 0;
    std::uint64_t frozen_checksum_after = 0;
};

using ProgressFn = std::function<void(const std::string& stage, long long step, long long total, double loss)>;

class Trainer {
public:
    Trainer(RunConfig cfg, RunLayout layout, ProgressFn progress = {});

    StageReport train_identity();
    StageReport pretrain();
    StageReport train_connector();
    StageReport train_warmup();
    StageReport train_main();
    StageReport train_final();
    // Runs every missing stage up to and including s.
    StageReport run_through(Stage s);

    // Models with every completed stage up to s loaded.
    Models load_models(Stage s) const;

    const RunConfig& config() const { return cfg_; }
    const RunLayout& layout() const { return layout_; }

private:
    StageReport control_stage(Stage s);
    const ImageStore& data(const std::string& flavour) const;
    double probe_identity(const Models& m, double skip_t) const;

    RunConfig cfg_;
    RunLayout layout_;
    ProgressFn progress_;
    mutable std::map<std::string, std::unique_ptr<ImageStore>> data_;
};

void write_curve_csv(const std::vector<CurveRow>& rows, const std::filesystem::path& path);
std::vector<CurveRow> read_curve_csv(const std::filesystem::path& path);
void write_probe_csv(const std::vector<ProbeRow>& rows, const std::filesystem::path& path);
std::vector<ProbeRow> read_probe_csv(const std::filesystem::path& path);

}  // namespace remix
