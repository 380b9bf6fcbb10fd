#include "remix/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "remix/checkpoint.hpp"
#include "remix/error.hpp"
#include "remix/eval.hpp"
#include "remix/inference.hpp"

namespace remix {

namespace fs = std::filesystem;

std::string stage_name(Stage s, bool equivariant) {
    switch (s) {
        case Stage::Identity:
            return "identity";
        case Stage::Pretrain:
            return "pretrain";
        case Stage::Connector:
            return "connector";
        case Stage::Warmup:
            return "warmup_1to1";
        case Stage::Main:
            return "main_1toMany";
        default:
            return equivariant ? "equivariant" : "main_1toMany";
    }
}

namespace {

const std::vector<std::string> kDataKeys = {"seed", "image_size", "train_identities", "test_identities", "scenes"};
const std::vector<std::string> kArchKeys = {"patch",    "depth",    "model_dim", "heads",        "mlp_ratio",
                                            "text_dim", "max_rows", "max_cols",  "semantic_grid"};

std::vector<std::string> join(std::initializer_list<const std::vector<std::string>*> parts) {
    std::vector<std::string> out;
    for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::string keyed_hash(const RunConfig& cfg, const std::vector<std::string>& keys, const std::string& tag) {
    std::string text = tag + "\n";
    for (const auto& k : keys) text += k + "=" + cfg.get_text(k) + "\n";
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return fmt::format("{:016x}", h);
}

}  // namespace

std::vector<std::string> stage_keys(Stage s) {
    static const std::vector<std::string> identity = {"lr_identity", "iters_identity", "batch"};
    static const std::vector<std::string> pretrain = {"lr_pretrain", "iters_pretrain", "batch", "max_refs"};
    static const std::vector<std::string> connector = {"connector_d", "connector_l", "lr_connector",
                                                       "iters_connector"};
    static const std::vector<std::string> control = {
        "control_n", "alpha",   "beta",    "dve_hidden", "lr_ipcn", "iters_warmup", "use_dve",  "use_sve",
        "use_global", "id_loss", "lambda", "ipcn_seed",  "max_refs", "id_loss_warmup"};
    static const std::vector<std::string> main = {"iters_main"};
    static const std::vector<std::string> final_keys = {"equivariant", "iters_equivariant"};
    switch (s) {
        case Stage::Identity:
            return join({&kDataKeys, &identity});
        case Stage::Pretrain:
            return join({&kDataKeys, &kArchKeys, &pretrain});
        case Stage::Connector:
            return join({&kDataKeys, &kArchKeys, &pretrain, &connector});
        case Stage::Warmup:
            return join({&kDataKeys, &kArchKeys, &pretrain, &identity, &control});
        case Stage::Main:
            return join({&kDataKeys, &kArchKeys, &pretrain, &identity, &control, &main});
        default:
            return join({&kDataKeys, &kArchKeys, &pretrain, &identity, &control, &main, &final_keys});
    }
}

std::string stage_hash(const RunConfig& cfg, Stage s) { return keyed_hash(cfg, stage_keys(s), stage_name(s)); }

RunLayout::RunLayout(const RunConfig& cfg, std::optional<fs::path> root_override) {
    if (root_override) {
        root = *root_override;
    } else if (const char* env = std::getenv("REMIX_RUN_DIR"); env && *env) {
        root = env;
    } else {
        root = cfg.get_text("run_dir");
    }
    data = root / cfg.get_text("data_dir") / keyed_hash(cfg, kDataKeys, "data");
}

fs::path RunLayout::stage_dir(const RunConfig& cfg, Stage s) const {
    std::string name = stage_name(s, cfg.get_bool("equivariant"));
    if (s == Stage::Final) name = "final_" + name;
    return root / "stages" / fmt::format("{}-{}", name, stage_hash(cfg, s));
}

fs::path RunLayout::run_dir(const RunConfig& cfg) const { return root / cfg.hash(); }

// ---------------------------------------------------------------------------

ImageStore::ImageStore(synth::Manifest m) : manifest_(std::move(m)) {
    for (const auto& r : manifest_.records) {
        by_split_[r.split].push_back(&r);
        by_id_[r.identity_id].push_back(&r);
    }
}

ImageStore ImageStore::open(const fs::path& dataset_dir) {
    return ImageStore(synth::read_manifest(dataset_dir / "manifest.tsv"));
}

const Image& ImageStore::image(const std::string& rel) const {
    auto it = cache_.find(rel);
    if (it == cache_.end()) it = cache_.emplace(rel, load_png(manifest_.resolve(rel))).first;
    return it->second;
}

const std::vector<const synth::Record*>& ImageStore::records(const std::string& split) const {
    static const std::vector<const synth::Record*> empty;
    auto it = by_split_.find(split);
    return it == by_split_.end() ? empty : it->second;
}

const std::vector<const synth::Record*>& ImageStore::group(int identity) const {
    auto it = by_id_.find(identity);
    if (it == by_id_.end()) throw InvalidInput(fmt::format("no records for identity {}", identity));
    return it->second;
}

void ensure_datasets(const RunConfig& cfg, const RunLayout& layout, bool overwrite) {
    synth::DatasetCounts counts;
    counts.train_identities = cfg.get_i("train_identities");
    counts.test_identities = cfg.get_i("test_identities");
    counts.scenes = cfg.get_i("scenes");
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    const std::pair<const char*, synth::Mode> flavours[] = {{"one_to_one", synth::Mode::OneToOne},
                                                            {"one_to_many", synth::Mode::OneToMany},
                                                            {"editing", synth::Mode::EditingTriples}};
    for (const auto& [name, mode] : flavours) {
        const fs::path dir = layout.data / name;
        if (!overwrite && fs::exists(dir / "manifest.tsv")) continue;
        synth::build_dataset(seed, counts, mode, cfg.get_i("image_size"), dir, overwrite);
    }
}

// ---------------------------------------------------------------------------

DiffusionStep draw_step(Rng& rng, std::size_t canvas_values) {
    DiffusionStep s;
    s.tau = rng.uniform();
    s.eps = rng.normal_vector(canvas_values);
    return s;
}

StepResult control_step(const Models& m, const ControlSample& s, const StepOptions& opt, Rng& rng) {
    if (s.refs.empty()) throw InvalidInput("control step needs at least one reference");
    const int p = m.patch();
    std::vector<Latent> refs;
    for (const auto& r : s.refs) refs.push_back(encode_image(r, p));
    const Latent y = encode_image(s.target, p);

    StepResult out;
    out.clean = concat_canvas(refs, y);
    const CanvasLayout& layout = out.clean.layout;
    const int c = layout.channels;
    out.step = draw_step(rng, out.clean.values.size());
    const double tau = out.step.tau;
    const auto target_rows = layout.segment_tokens(*layout.target_segment());

    if (opt.equivariant) {
        out.noised = noise_values(out.clean.values, out.step);
    } else {
        // References stay clean; only the target is noised.
        out.noised = out.clean.values;
        for (int t : target_rows) {
            for (int j = 0; j < c; ++j) {
                const std::size_t i = static_cast<std::size_t>(t) * c + j;
                out.noised[i] = (1.0 - tau) * out.clean.values[i] + tau * out.step.eps[i];
            }
        }
    }
    const ag::Var tokens = ag::constant(layout.tokens(), c, out.noised);
    const auto& bc = m.backbone.config();
    const PositionGrid positions = assign_positions(layout, bc.max_rows, bc.max_cols);

    Conditioning cond;
    {
        ag::NoGradGuard guard;
        cond.text = m.text_condition(s.prompt);
        if (opt.use_global) cond.control.global = m.global_visual(s.refs);
    }
    cond.use_control = true;
    cond.alpha = opt.alpha;
    cond.beta = opt.beta;
    if (opt.use_dve) cond.control.dense = to_var(concat_canvas(refs, std::nullopt));
    if (opt.use_sve) cond.control.sparse = s.pose;

    const ag::Var pred = m.velocity(tokens, layout, positions, cond, tau);
    const ag::Var l_equ = opt.equivariant ? equ_loss(pred, out.step, out.clean)
                                          : region_loss(pred, out.step, out.clean, target_rows);
    out.report.l_equ = l_equ.item();
    if (opt.id_loss) {
        // One-step estimate of the clean target, decoded to pixels.
        const ag::Var x_t = gather_rows(tokens, target_rows);
        const ag::Var v_t = gather_rows(pred, target_rows);
        const ag::Var x0 = ag::sub(x_t, ag::scale(v_t, tau));
        const ag::Var pixels = decode_tokens(x0, y.height, y.width, p);
        const auto ref_embed = extract_identity(m.identity, s.refs.front());
        const ag::Var z_ref = ag::constant(1, static_cast<int>(ref_embed.size()), ref_embed);
        const ag::Var l_id = id_loss(m.identity.embed(pixels), z_ref);
        out.report.l_id = l_id.item();
        out.loss = total_loss(l_equ, l_id, opt.lambda);
    } else {
        out.loss = l_equ;
    }
    out.report.l_total = total_loss(out.report.l_equ, out.report.l_id, opt.id_loss ? opt.lambda : 0.0);
    return out;
}

// ---------------------------------------------------------------------------

void write_curve_csv(const std::vector<CurveRow>& rows, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    f << "step,l_equ,l_id,l_total\n";
    for (const auto& r : rows) f << fmt::format("{},{:.17g},{:.17g},{:.17g}\n", r.step, r.l_equ, r.l_id, r.l_total);
}

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot read " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
        rows.push_back(std::move(cols));
    }
    return rows;
}

}  // namespace

std::vector<CurveRow> read_curve_csv(const fs::path& path) {
    std::vector<CurveRow> out;
    for (const auto& c : read_csv(path)) {
        if (c.size() != 4) throw FormatError("malformed loss curve row in " + path.string());
        out.push_back({std::stoll(c[0]), std::stod(c[1]), std::stod(c[2]), std::stod(c[3])});
    }
    return out;
}

void write_probe_csv(const std::vector<ProbeRow>& rows, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    f << "step,id_sim\n";
    for (const auto& r : rows) f << fmt::format("{},{:.17g}\n", r.step, r.id_sim);
}

std::vector<ProbeRow> read_probe_csv(const fs::path& path) {
    std::vector<ProbeRow> out;
    for (const auto& c : read_csv(path)) {
        if (c.size() != 2) throw FormatError("malformed probe row in " + path.string());
        out.push_back({std::stoll(c[0]), std::stod(c[1])});
    }
    return out;
}

namespace {

// step,loss,eval_loss curves of the identity and connector stages.
struct ScalarRow {
    long long step = 0;
    double loss = 0.0;
    double eval = std::nan("");
};

void write_scalar_csv(const std::vector<ScalarRow>& rows, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    f << "step,loss,eval_loss\n";
    for (const auto& r : rows) {
        f << r.step << ',' << fmt::format("{:.17g}", r.loss) << ',';
        if (!std::isnan(r.eval)) f << fmt::format("{:.17g}", r.eval);
        f << '\n';
    }
}

std::vector<ScalarRow> read_scalar_csv(const fs::path& path) {
    std::vector<ScalarRow> out;
    for (const auto& c : read_csv(path)) {
        ScalarRow r;
        r.step = std::stoll(c.at(0));
        r.loss = std::stod(c.at(1));
        if (c.size() > 2 && !c[2].empty()) r.eval = std::stod(c[2]);
        out.push_back(r);
    }
    return out;
}

std::uint64_t combined_checksum(const std::vector<const nn::ParamStore*>& stores) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto* s : stores) {
        h ^= s->checksum();
        h *= 1099511628211ULL;
    }
    return h;
}

void freeze_all(Models& m) {
    m.backbone.params().set_trainable(false);
    m.encoder_params.set_trainable(false);
    m.connector_params.set_trainable(false);
    m.ipcn.params().set_trainable(false);
    m.identity.params().set_trainable(false);
}

std::vector<std::pair<std::string, std::vector<double>>> adam_arrays(const OptimizerState& os) {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (const auto& a : os.arrays) out.emplace_back(a.name, a.values);
    return out;
}

// Periodic snapshot with optimizer state, for resume.
void save_snapshot(const fs::path& dir, const std::string& stage, long long step, const RunConfig& cfg,
                   const std::vector<const nn::ParamStore*>& stores, const nn::Adam& opt) {
    Checkpoint ck = make_checkpoint(stage, static_cast<std::uint64_t>(step), cfg, stores);
    ck.optimizer = optimizer_state(opt);
    save_checkpoint(ck, dir / "last.ckpt");
}

// Restores a snapshot when one exists; returns the step to continue from.
long long restore_snapshot(const fs::path& dir, const std::string& stage, const std::vector<nn::ParamStore*>& stores,
                           nn::Adam& opt) {
    const fs::path snap = dir / "last.ckpt";
    if (!fs::exists(snap)) return 0;
    const Checkpoint ck = load_checkpoint(snap);
    if (ck.stage != stage) throw FormatError(fmt::format("snapshot {} belongs to stage {}", snap.string(), ck.stage));
    for (auto* s : stores) restore_params(ck, *s);
    if (ck.optimizer) opt.load_state(adam_arrays(*ck.optimizer), ck.optimizer->t);
    return static_cast<long long>(ck.step);
}

void finish_stage(const fs::path& dir, const Checkpoint& ck) {
    save_checkpoint(ck, dir / "checkpoint.ckpt");
    std::error_code ec;
    fs::remove(dir / "last.ckpt", ec);
}

template <class Row>
void truncate_rows(std::vector<Row>& rows, long long step) {
    rows.erase(std::remove_if(rows.begin(), rows.end(), [&](const Row& r) { return r.step > step; }), rows.end());
}

}  // namespace

// ---------------------------------------------------------------------------

Trainer::Trainer(RunConfig cfg, RunLayout layout, ProgressFn progress)
    : cfg_(std::move(cfg)), layout_(std::move(layout)), progress_(std::move(progress)) {}

const ImageStore& Trainer::data(const std::string& flavour) const {
    auto it = data_.find(flavour);
    if (it != data_.end()) return *it->second;
    const fs::path dir = layout_.data / flavour;
    if (!fs::exists(dir / "manifest.tsv")) {
        throw MissingCheckpoint(fmt::format("dataset '{}' not found under {}; run synth-data first", flavour,
                                            layout_.data.string()));
    }
    auto store = std::make_unique<ImageStore>(ImageStore::open(dir));
    const auto& m = store->manifest();
    if (m.image_size != cfg_.get_i("image_size")) {
        throw FormatError(fmt::format("dataset {} has image size {}, config asks for {}", dir.string(), m.image_size,
                                      cfg_.get_i("image_size")));
    }
    return *data_.emplace(flavour, std::move(store)).first->second;
}

Models Trainer::load_models(Stage s) const {
    Models m(cfg_);
    const auto ck = [&](Stage st) { return layout_.stage_dir(cfg_, st) / "checkpoint.ckpt"; };
    if (s == Stage::Identity || fs::exists(ck(Stage::Identity)) || s >= Stage::Warmup) {
        load_component(m, Component::Identity, ck(Stage::Identity));
    }
    if (s == Stage::Identity) return m;
    load_component(m, Component::Pretrain, ck(Stage::Pretrain));
    if (s == Stage::Connector || fs::exists(ck(Stage::Connector))) {
        load_component(m, Component::Connector, ck(Stage::Connector));
    }
    if (s >= Stage::Warmup) load_component(m, Component::ControlNet, ck(s));
    return m;
}

StageReport Trainer::run_through(Stage s) {
    StageReport r = train_identity();
    if (s == Stage::Identity) return r;
    r = pretrain();
    if (s == Stage::Pretrain) return r;
    if (s == Stage::Connector) return train_connector();
    r = train_warmup();
    if (s == Stage::Warmup) return r;
    r = train_main();
    if (s == Stage::Main) return r;
    return train_final();
}

StageReport Trainer::train_identity() {
    const fs::path dir = layout_.stage_dir(cfg_, Stage::Identity);
    StageReport rep;
    rep.stage = stage_name(Stage::Identity);
    rep.checkpoint = dir / "checkpoint.ckpt";
    if (fs::exists(rep.checkpoint)) {
        rep.cached = true;
        return rep;
    }
    const ImageStore& store = data("one_to_many");
    const auto& train = store.records("train");
    if (train.empty()) throw InvalidInput("identity stage: no training records");
    Models m(cfg_);
    freeze_all(m);
    m.identity.params().set_trainable(true);
    nn::Adam opt({&m.identity.params()}, cfg_.get_real("lr_identity"));
    const std::string tag = rep.stage;
    long long step = restore_snapshot(dir, tag, {&m.identity.params()}, opt);
    std::vector<ScalarRow> rows;
    if (step > 0 && fs::exists(dir / "loss.csv")) rows = read_scalar_csv(dir / "loss.csv");
    truncate_rows(rows, step);

    const long long iters = cfg_.get_int("iters_identity");
    const int batch = std::max(cfg_.get_i("batch"), 8);
    const auto seed = static_cast<std::uint64_t>(cfg_.get_int("seed"));
    const auto dseed = store.manifest().seed;
    for (; step < iters; ++step) {
        Rng rng(derive_seed(seed, 0x1d, static_cast<std::uint64_t>(step)));
        double total = 0.0;
        for (int b = 0; b < batch; ++b) {
            const auto* r = train[rng.uniform_int(static_cast<int>(train.size()))];
            const synth::IdentitySpec spec = synth::make_identity(dseed, r->identity_id);
            const int labels[] = {spec.body_shape, spec.primary_color, spec.secondary_color, spec.accessory,
                                  spec.texture_motif};
            const auto logits = m.identity.logits(image_to_var(store.image(r->image_path)));
            ag::Var loss;
            for (std::size_t h = 0; h < logits.size(); ++h) {
                const int label[] = {labels[h]};
                const ag::Var ce = ag::cross_entropy(logits[h], label);
                loss = loss.defined() ? ag::add(loss, ce) : ce;
            }
            loss = ag::scale(loss, 1.0 / static_cast<double>(logits.size()));
            total += loss.item();
            loss.backward(1.0 / batch);
        }
        opt.step();
        rows.push_back({step + 1, total / batch, std::nan("")});
        if (progress_) progress_(tag, step + 1, iters, total / batch);
        if ((step + 1) % cfg_.get_int("checkpoint_every") == 0 && step + 1 < iters) {
            save_snapshot(dir, tag, step + 1, cfg_, {&m.identity.params()}, opt);
            write_scalar_csv(rows, dir / "loss.csv");
        }
    }
    write_scalar_csv(rows, dir / "loss.csv");
    finish_stage(dir, make_checkpoint(tag, static_cast<std::uint64_t>(iters), cfg_, {&m.identity.params()}));
    return rep;
}

StageReport Trainer::pretrain() {
    const fs::path dir = layout_.stage_dir(cfg_, Stage::Pretrain);
    StageReport rep;
    rep.stage = stage_name(Stage::Pretrain);
    rep.checkpoint = dir / "checkpoint.ckpt";
    if (fs::exists(rep.checkpoint)) {
        rep.cached = true;
        if (fs::exists(dir / "loss.csv")) rep.curve = read_curve_csv(dir / "loss.csv");
        return rep;
    }
    const ImageStore& store = data("one_to_many");
    const auto& train = store.records("train");
    if (train.empty()) throw InvalidInput("pretrain: no training records");
    Models m(cfg_);
    freeze_all(m);
    m.backbone.params().set_trainable(true);
    m.encoder_params.set_trainable(true);
    std::vector<nn::ParamStore*> stores = {&m.backbone.params(), &m.encoder_params};
    const std::vector<const nn::ParamStore*> cstores = {&m.backbone.params(), &m.encoder_params};
    nn::Adam opt(stores, cfg_.get_real("lr_pretrain"));
    const std::string tag = rep.stage;
    long long step = restore_snapshot(dir, tag, stores, opt);
    if (step > 0 && fs::exists(dir / "loss.csv")) rep.curve = read_curve_csv(dir / "loss.csv");
    truncate_rows(rep.curve, step);

    const long long iters = cfg_.get_int("iters_pretrain");
    const int batch = cfg_.get_i("batch");
    const int p = m.patch(), side = m.latent_side();
    const int max_refs = cfg_.get_i("max_refs");
    const auto& bc = m.backbone.config();
    const auto seed = static_cast<std::uint64_t>(cfg_.get_int("seed"));
    for (; step < iters; ++step) {
        Rng rng(derive_seed(seed, 0x9e, static_cast<std::uint64_t>(step)));
        double total = 0.0;
        for (int b = 0; b < batch; ++b) {
            const auto* r = train[rng.uniform_int(static_cast<int>(train.size()))];
            std::vector<Latent> lead;
            const bool single = rng.uniform() < 0.5;
            if (!single) {
                const int extra = 1 + rng.uniform_int(max_refs);
                for (int e = 0; e < extra; ++e) {
                    const auto* o = train[rng.uniform_int(static_cast<int>(train.size()))];
                    lead.push_back(encode_image(store.image(o->image_path), p));
                }
            }
            const LatentCanvas clean = concat_canvas(lead, encode_image(store.image(r->image_path), p));
            PositionGrid pos = assign_positions(clean.layout, bc.max_rows, bc.max_cols);
            if (single) {
                // Random origin so target indices seen later at (h, sum w) are familiar.
                const int drow = rng.uniform() < 0.5 ? 0 : side;
                const int dcol = rng.uniform_int(std::min(max_refs * side, bc.max_cols - side) + 1);
                pos = offset_positions(pos, drow, dcol);
            }
            const DiffusionStep st = draw_step(rng, clean.values.size());

            // Text: full caption, scene plus semantic tokens of another scene, or scene only.
            const double u = rng.uniform();
            std::vector<ag::Var> values;
            std::vector<std::string> prompt;
            if (u < 0.4) {
                prompt = split_tokens(r->caption);
            } else {
                prompt = split_tokens(r->instruction);
                if (u < 0.8) {
                    const auto& g = store.group(r->identity_id);
                    const synth::Record* other = r;
                    while (other == r && g.size() > 1) other = g[rng.uniform_int(static_cast<int>(g.size()))];
                    values.push_back(m.semantic.encode(store.image(other->image_path)));
                }
            }
            const TextCondition text = m.text_condition(prompt, values);
            const ag::Var tokens = ag::constant(clean.layout.tokens(), clean.layout.channels,
                                                noise_values(clean.values, st));
            const ag::Var pred = m.backbone.forward(tokens, pos, text.stream, text.pooled, st.tau);
            const ag::Var loss = equ_loss(pred, st, clean);
            total += loss.item();
            loss.backward(1.0 / batch);
        }
        opt.step();
        const double l = total / batch;
        rep.curve.push_back({step + 1, l, 0.0, total_loss(l, 0.0, 0.0)});
        if (progress_) progress_(tag, step + 1, iters, l);
        if ((step + 1) % cfg_.get_int("checkpoint_every") == 0 && step + 1 < iters) {
            save_snapshot(dir, tag, step + 1, cfg_, cstores, opt);
            write_curve_csv(rep.curve, dir / "loss.csv");
        }
    }
    write_curve_csv(rep.curve, dir / "loss.csv");
    finish_stage(dir, make_checkpoint(tag, static_cast<std::uint64_t>(iters), cfg_, cstores));
    return rep;
}

StageReport Trainer::train_connector() {
    const fs::path dir = layout_.stage_dir(cfg_, Stage::Connector);
    StageReport rep;
    rep.stage = stage_name(Stage::Connector);
    rep.checkpoint = dir / "checkpoint.ckpt";
    if (fs::exists(rep.checkpoint)) {
        rep.cached = true;
        if (fs::exists(dir / "loss.csv")) {
            const auto rows = read_scalar_csv(dir / "loss.csv");
            for (const auto& r : rows) {
                if (std::isnan(r.eval)) continue;
                if (r.step == 0) rep.initial_eval = r.eval;
                rep.final_eval = r.eval;
            }
        }
        return rep;
    }
    const fs::path pre = layout_.stage_dir(cfg_, Stage::Pretrain) / "checkpoint.ckpt";
    if (!fs::exists(pre)) {
        throw MissingCheckpoint("stage connector needs stage pretrain first (" + pre.string() + " not found)");
    }
    Models m(cfg_);
    load_component(m, Component::Pretrain, pre);
    freeze_all(m);
    m.connector_params.set_trainable(true);
    const std::vector<const nn::ParamStore*> frozen = {&m.backbone.params(), &m.encoder_params};
    rep.frozen_checksum_before = combined_checksum(frozen);

    const ImageStore& store = data("editing");
    const auto& train = store.records("train");
    const auto& test = store.records("test");
    if (train.empty() || test.empty()) throw InvalidInput("connector stage needs train and test editing records");

    const double lr_connector = cfg_.get_real("lr_connector");
    nn::Adam opt({&m.connector_params}, lr_connector);
    const std::string tag = rep.stage;
    long long step = restore_snapshot(dir, tag, {&m.connector_params}, opt);
    if (step == 0) m.connector.zero_output_projections();  // value starts as the key
    std::vector<ScalarRow> rows;
    if (step > 0 && fs::exists(dir / "loss.csv")) rows = read_scalar_csv(dir / "loss.csv");
    truncate_rows(rows, step);

    auto edit_loss = [&](const synth::Record& r) {
        const Image& src = store.image(r.ref_path);
        ag::Var target;
        {
            ag::NoGradGuard guard;
            target = m.semantic.encode(store.image(r.image_path));
        }
        return connector_loss(m.connect(split_tokens(r.instruction), src), target);
    };
    const std::size_t n_eval = std::min<std::size_t>(test.size(), 32);
    auto eval_loss = [&] {
        ag::NoGradGuard guard;
        double s = 0.0;
        for (std::size_t i = 0; i < n_eval; ++i) s += edit_loss(*test[i]).item();
        return s / static_cast<double>(n_eval);
    };

    const long long iters = cfg_.get_int("iters_connector");
    const long long eval_every = std::max<long long>(1, iters / 20);
    const int batch = cfg_.get_i("batch");
    const auto seed = static_cast<std::uint64_t>(cfg_.get_int("seed"));
    if (step == 0) rows.push_back({0, std::nan(""), eval_loss()});
    for (; step < iters; ++step) {
        Rng rng(derive_seed(seed, 0xc0, static_cast<std::uint64_t>(step)));
        double total = 0.0;
        for (int b = 0; b < batch; ++b) {
            const ag::Var loss = edit_loss(*train[rng.uniform_int(static_cast<int>(train.size()))]);
            total += loss.item();
            loss.backward(1.0 / batch);
        }
        // Cosine decay so the held-out loss settles instead of jittering at the Adam noise floor.
        opt.set_lr(lr_connector * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(iters))));
        opt.step();
        ScalarRow row{step + 1, total / batch, std::nan("")};
        if ((step + 1) % eval_every == 0 || step + 1 == iters) row.eval = eval_loss();
        rows.push_back(row);
        if (progress_) progress_(tag, step + 1, iters, row.loss);
        if ((step + 1) % cfg_.get_int("checkpoint_every") == 0 && step + 1 < iters) {
            save_snapshot(dir, tag, step + 1, cfg_, {&m.connector_params}, opt);
            write_scalar_csv(rows, dir / "loss.csv");
        }
    }
    rep.frozen_checksum_after = combined_checksum(frozen);
    if (rep.frozen_checksum_after != rep.frozen_checksum_before) {
        throw Error("connector stage modified backbone or semantic-encoder parameters");
    }
    for (const auto& r : rows) {
        if (std::isnan(r.eval)) continue;
        if (r.step == 0) rep.initial_eval = r.eval;
        rep.final_eval = r.eval;
    }
    write_scalar_csv(rows, dir / "loss.csv");
    finish_stage(dir, make_checkpoint(tag, static_cast<std::uint64_t>(iters), cfg_, {&m.connector_params}));
    return rep;
}

StageReport Trainer::train_warmup() { return control_stage(Stage::Warmup); }
StageReport Trainer::train_main() { return control_stage(Stage::Main); }
StageReport Trainer::train_final() { return control_stage(Stage::Final); }

double Trainer::probe_identity(const Models& m, double skip_t) const {
    const ImageStore& store = data("one_to_many");
    const int want = cfg_.get_i("probe_identities");
    std::set<int> ids;
    for (const auto* r : store.records("test")) {
        if (static_cast<int>(ids.size()) == want) break;
        ids.insert(r->identity_id);
    }
    if (ids.empty()) return 0.0;
    double total = 0.0;
    int n = 0;
    const auto seed = static_cast<std::uint64_t>(cfg_.get_int("seed"));
    for (int id : ids) {
        const auto& g = store.group(id);
        if (g.size() < 2) continue;
        ConditionBundle b;
        b.dense_refs = {store.image(g[0]->image_path)};
        b.sparse_map = store.image(g[1]->pose_path);
        b.instruction = split_tokens(g[1]->instruction);
        b.skip_t = skip_t;
        b.alpha = cfg_.get_real("alpha");
        b.beta = cfg_.get_real("beta");
        b.seed = derive_seed(seed, 0x9b, static_cast<std::uint64_t>(id));
        b.use_connector = false;
        b.use_dve = cfg_.get_bool("use_dve");
        b.use_sve = cfg_.get_bool("use_sve");
        b.use_global = cfg_.get_bool("use_global");
        const SampleResult r = sample(m, b, cfg_.get_i("probe_steps"));
        total += identity_similarity(m.identity, r.generated, b.dense_refs.front());
        ++n;
    }
    return n ? total / n : 0.0;
}

StageReport Trainer::control_stage(Stage s) {
    const auto tag_of = [&](Stage st) { return stage_name(st, cfg_.get_bool("equivariant")); };
    const bool equivariant_final = s == Stage::Final && cfg_.get_bool("equivariant");
    const fs::path dir = layout_.stage_dir(cfg_, s);
    StageReport rep;
    rep.stage = stage_name(s, cfg_.get_bool("equivariant"));
    rep.checkpoint = dir / "checkpoint.ckpt";
    if (fs::exists(rep.checkpoint)) {
        rep.cached = true;
        if (fs::exists(dir / "loss.csv")) rep.curve = read_curve_csv(dir / "loss.csv");
        if (fs::exists(dir / "probe.csv")) rep.probe = read_probe_csv(dir / "probe.csv");
        return rep;
    }

    Models m(cfg_);
    const auto ck = [&](Stage st) { return layout_.stage_dir(cfg_, st) / "checkpoint.ckpt"; };
    const Stage prereq[] = {Stage::Identity, Stage::Pretrain, Stage::Warmup, Stage::Main};
    for (Stage p : prereq) {
        if (p >= s) continue;
        if (!fs::exists(ck(p))) {
            throw MissingCheckpoint(fmt::format("stage {} needs stage {} first ({} not found)", tag_of(s),
                                                stage_name(p), ck(p).string()));
        }
    }
    load_component(m, Component::Identity, ck(Stage::Identity));
    load_component(m, Component::Pretrain, ck(Stage::Pretrain));
    if (s == Stage::Warmup) {
        m.ipcn.init_from_backbone(m.backbone);
    } else {
        load_component(m, Component::ControlNet, ck(s == Stage::Main ? Stage::Warmup : Stage::Main));
    }
    freeze_all(m);
    m.ipcn.params().set_trainable(true);
    nn::Adam opt({&m.ipcn.params()}, cfg_.get_real("lr_ipcn"));
    const std::string tag = rep.stage;
    long long step = restore_snapshot(dir, tag, {&m.ipcn.params()}, opt);
    if (step > 0) {
        if (fs::exists(dir / "loss.csv")) rep.curve = read_curve_csv(dir / "loss.csv");
        if (fs::exists(dir / "probe.csv")) rep.probe = read_probe_csv(dir / "probe.csv");
    }
    truncate_rows(rep.curve, step);
    truncate_rows(rep.probe, step);

    StepOptions opt_step;
    opt_step.equivariant = equivariant_final;
    opt_step.id_loss = cfg_.get_bool("id_loss") && (s != Stage::Warmup || cfg_.get_bool("id_loss_warmup"));
    opt_step.lambda = cfg_.get_real("lambda");
    opt_step.use_dve = cfg_.get_bool("use_dve");
    opt_step.use_sve = cfg_.get_bool("use_sve");
    opt_step.use_global = cfg_.get_bool("use_global");
    opt_step.alpha = cfg_.get_real("alpha");
    opt_step.beta = cfg_.get_real("beta");

    const ImageStore& store = data(s == Stage::Warmup ? "one_to_one" : "one_to_many");
    const auto& train = store.records("train");
    if (train.empty()) throw InvalidInput(tag + ": no training records");
    const long long iters = cfg_.get_int(s == Stage::Warmup ? "iters_warmup"
                                         : s == Stage::Main ? "iters_main"
                                                            : "iters_equivariant");
    const int batch = cfg_.get_i("batch");
    const int max_refs = cfg_.get_i("max_refs");
    const long long probe_every = cfg_.get_int("probe_every");
    const double probe_skip = equivariant_final ? cfg_.get_real("skip_t") : 0.0;
    const std::uint64_t stage_seed = derive_seed(static_cast<std::uint64_t>(cfg_.get_int("seed")),
                                                 0xc7 + static_cast<std::uint64_t>(s),
                                                 static_cast<std::uint64_t>(cfg_.get_int("ipcn_seed")));

    auto draw_sample = [&](Rng& rng) {
        const auto* r = train[rng.uniform_int(static_cast<int>(train.size()))];
        ControlSample cs;
        cs.target = store.image(r->image_path);
        cs.pose = store.image(r->pose_path);
        cs.prompt = split_tokens(r->instruction);
        if (s == Stage::Warmup) {
            cs.refs = {store.image(r->ref_path)};
            return cs;
        }
        std::vector<const synth::Record*> others;
        for (const auto* o : store.group(r->identity_id)) {
            if (o != r) others.push_back(o);
        }
        if (others.empty()) throw InvalidInput("one-to-many training needs at least two scenes per identity");
        const int n = std::min(1 + rng.uniform_int(max_refs), static_cast<int>(others.size()));
        for (int i = 0; i < n; ++i) {
            const int j = i + rng.uniform_int(static_cast<int>(others.size()) - i);
            std::swap(others[i], others[j]);
            cs.refs.push_back(store.image(others[i]->image_path));
        }
        return cs;
    };

    if (probe_every > 0 && step == 0) rep.probe.push_back({0, probe_identity(m, probe_skip)});
    for (; step < iters; ++step) {
        Rng rng(derive_seed(stage_seed, static_cast<std::uint64_t>(step)));
        LossReport mean;
        for (int b = 0; b < batch; ++b) {
            const ControlSample cs = draw_sample(rng);
            const StepResult res = control_step(m, cs, opt_step, rng);
            res.loss.backward(1.0 / batch);
            mean.l_equ += res.report.l_equ / batch;
            mean.l_id += res.report.l_id / batch;
        }
        opt.step();
        mean.l_total = total_loss(mean.l_equ, mean.l_id, opt_step.id_loss ? opt_step.lambda : 0.0);
        rep.curve.push_back({step + 1, mean.l_equ, mean.l_id, mean.l_total});
        if (progress_) progress_(tag, step + 1, iters, mean.l_total);
        if (probe_every > 0 && ((step + 1) % probe_every == 0 || step + 1 == iters)) {
            rep.probe.push_back({step + 1, probe_identity(m, probe_skip)});
        }
        if ((step + 1) % cfg_.get_int("checkpoint_every") == 0 && step + 1 < iters) {
            save_snapshot(dir, tag, step + 1, cfg_, {&m.ipcn.params()}, opt);
            write_curve_csv(rep.curve, dir / "loss.csv");
            write_probe_csv(rep.probe, dir / "probe.csv");
        }
    }
    write_curve_csv(rep.curve, dir / "loss.csv");
    write_probe_csv(rep.probe, dir / "probe.csv");
    finish_stage(dir, make_checkpoint(tag, static_cast<std::uint64_t>(iters), cfg_, {&m.ipcn.params()}));
    return rep;
}

}  // namespace remix
