#include "remix/models.hpp"

#include <fmt/format.h>

#include "remix/data_synth.hpp"
#include "remix/error.hpp"

namespace remix {

BackboneConfig backbone_config(const RunConfig& cfg) {
    BackboneConfig b;
    const int p = cfg.get_i("patch");
    b.channels = 3 * p * p;
    b.depth = cfg.get_i("depth");
    b.model_dim = cfg.get_i("model_dim");
    b.heads = cfg.get_i("heads");
    b.mlp_ratio = cfg.get_i("mlp_ratio");
    b.text_dim = cfg.get_i("text_dim");
    b.max_rows = cfg.get_i("max_rows");
    b.max_cols = cfg.get_i("max_cols");
    b.validate();
    return b;
}

ConnectorConfig connector_config(const RunConfig& cfg) {
    ConnectorConfig c;
    c.blocks = cfg.get_i("connector_d");
    c.layers = cfg.get_i("connector_l");
    c.dim = cfg.get_i("text_dim");
    c.heads = cfg.get_i("heads");
    c.mlp_ratio = cfg.get_i("mlp_ratio");
    c.validate();
    return c;
}

ControlNetConfig controlnet_config(const RunConfig& cfg) {
    ControlNetConfig c;
    c.blocks = cfg.get_i("control_n");
    c.alpha = cfg.get_real("alpha");
    c.beta = cfg.get_real("beta");
    c.dve_hidden = cfg.get_i("dve_hidden");
    return c;
}

std::vector<int> identity_heads() {
    return {synth::kShapes, synth::kColors, synth::kColors, synth::kAccessories, synth::kTextures};
}

namespace {

int checked_image_size(const RunConfig& cfg) {
    const int s = cfg.get_i("image_size");
    const int p = cfg.get_i("patch");
    if (s <= 0 || s % 32 != 0) throw ConfigError(fmt::format("image_size {} must be a positive multiple of 32", s));
    if (p <= 0 || s % p != 0) throw ConfigError(fmt::format("patch {} must divide image_size {}", p, s));
    return s;
}

Rng component_rng(const RunConfig& cfg, std::uint64_t tag) {
    return Rng(derive_seed(static_cast<std::uint64_t>(cfg.get_int("seed")), tag));
}

// Constructor helpers: each network draws from its own stream.
TextEncoder make_text(nn::ParamStore& ps, const RunConfig& cfg, int vocab) {
    Rng rng = component_rng(cfg, 11);
    return TextEncoder(ps, "text", vocab, cfg.get_i("text_dim"), rng);
}

SemanticEncoder make_semantic(nn::ParamStore& ps, const RunConfig& cfg) {
    Rng rng = component_rng(cfg, 12);
    return SemanticEncoder(ps, "semantic", cfg.get_i("image_size"), cfg.get_i("text_dim"), cfg.get_i("semantic_grid"),
                           rng);
}

InstructionEncoder make_instruction(nn::ParamStore& ps, const RunConfig& cfg, int vocab) {
    Rng rng = component_rng(cfg, 13);
    return InstructionEncoder(ps, "instr", vocab, cfg.get_i("text_dim"), cfg.get_i("heads"), cfg.get_i("image_size"),
                              rng);
}

Connector make_connector(nn::ParamStore& ps, const RunConfig& cfg) {
    Rng rng = component_rng(cfg, 14);
    return Connector(ps, "connector", connector_config(cfg), rng);
}

}  // namespace

Models::Models(const RunConfig& cfg)
    : backbone(backbone_config(cfg), derive_seed(static_cast<std::uint64_t>(cfg.get_int("seed")), 10)),
      text(make_text(encoder_params, cfg, static_cast<int>(synth::vocabulary_symbols().size()) + 1)),
      semantic(make_semantic(encoder_params, cfg)),
      instruction(make_instruction(connector_params, cfg, static_cast<int>(synth::vocabulary_symbols().size()) + 1)),
      connector(make_connector(connector_params, cfg)),
      ipcn(controlnet_config(cfg), backbone_config(cfg), cfg.get_i("patch"),
           derive_seed(static_cast<std::uint64_t>(cfg.get_int("seed")), 15,
                       static_cast<std::uint64_t>(cfg.get_int("ipcn_seed")))),
      identity(cfg.get_i("image_size"), identity_heads(),
               derive_seed(static_cast<std::uint64_t>(cfg.get_int("seed")), 16)),
      cfg_(cfg),
      vocab_(synth::vocabulary_symbols()),
      image_size_(checked_image_size(cfg)),
      patch_(cfg.get_i("patch")) {
    if (vocab_.size() != static_cast<int>(synth::vocabulary_symbols().size()) + 1) {
        throw ConfigError("vocabulary contains duplicate symbols");
    }
    if (cfg.get_i("max_refs") < 1) throw ConfigError("max_refs must be at least 1");
}

TextCondition Models::text_condition(const std::vector<std::string>& prompt, const std::vector<ag::Var>& values) const {
    const auto ids = vocab_.ids(prompt);
    ag::Var tokens;
    if (!ids.empty()) tokens = text.encode(ids);
    TextCondition out;
    out.stream = compose_text_stream(values, tokens);
    out.pooled = ag::mean_rows(out.stream);
    return out;
}

ag::Var Models::connect(const std::vector<std::string>& instr, const Image& img) const {
    const auto ids = vocab_.ids(instr);
    ag::Var key;
    {
        ag::NoGradGuard guard;
        key = semantic.encode(img);
    }
    return connector(instruction.encode(ids, img), key);
}

ag::Var Models::global_visual(const std::vector<Image>& refs) const {
    if (refs.empty()) throw InvalidInput("global visual embedding needs at least one reference");
    std::vector<ag::Var> pooled;
    for (const auto& r : refs) pooled.push_back(semantic.pooled(r));
    return ag::mean_rows(ag::concat_rows(pooled));
}

ag::Var Models::velocity(const ag::Var& tokens, const CanvasLayout& layout, const PositionGrid& positions,
                         const Conditioning& cond, double tau) const {
    if (!cond.use_control) return backbone.forward(tokens, positions, cond.text.stream, cond.text.pooled, tau);
    const auto residuals = ipcn.control_branch_forward(backbone, tokens, positions, layout, cond.text.stream,
                                                       cond.text.pooled, tau, cond.control, cond.alpha, cond.beta);
    return backbone.forward(tokens, positions, cond.text.stream, cond.text.pooled, tau, &residuals);
}

std::string component_name(Component c) {
    switch (c) {
        case Component::Identity:
            return "identity";
        case Component::Pretrain:
            return "pretrain";
        case Component::Connector:
            return "connector";
        default:
            return "ipcn";
    }
}

std::vector<nn::ParamStore*> component_stores(Models& models, Component c) {
    switch (c) {
        case Component::Identity:
            return {&models.identity.params()};
        case Component::Pretrain:
            return {&models.backbone.params(), &models.encoder_params};
        case Component::Connector:
            return {&models.connector_params};
        default:
            return {&models.ipcn.params()};
    }
}

Checkpoint make_checkpoint(const std::string& stage, std::uint64_t step, const RunConfig& cfg,
                           const std::vector<const nn::ParamStore*>& stores) {
    Checkpoint ck;
    ck.stage = stage;
    ck.step = step;
    for (const auto& [k, v] : cfg.values()) ck.config.emplace_back(k, v);
    ck.config.emplace_back("config_hash", cfg.hash());
    for (const auto* ps : stores) append_params(ck, *ps);
    return ck;
}

void load_component(Models& models, Component c, const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw MissingCheckpoint(fmt::format("stage '{}' has not been run: {} not found", component_name(c),
                                            path.string()));
    }
    const Checkpoint ck = load_checkpoint(path);
    for (auto* ps : component_stores(models, c)) restore_params(ck, *ps);
}

}  // namespace remix
