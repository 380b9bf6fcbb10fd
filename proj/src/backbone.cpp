#include "remix/backbone.hpp"

#include <fmt/format.h>

#include "remix/error.hpp"

namespace remix {

void BackboneConfig::validate() const {
    if (depth < 2) throw ConfigError("backbone depth must be >= 2");
    if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0) {
        throw ConfigError(fmt::format("model_dim {} not divisible by heads {}", model_dim, heads));
    }
    if (model_dim % 4 != 0) throw ConfigError("model_dim must be a multiple of 4");
    if (text_dim <= 0 || channels <= 0 || mlp_ratio <= 0) throw ConfigError("backbone widths must be positive");
    if (max_rows <= 0 || max_cols <= 0) throw ConfigError("max_positions must be positive");
}

PositionGrid assign_positions(const CanvasLayout& layout, int max_rows, int max_cols) {
    layout.validate();
    const int h = layout.height;
    const int ref_w = layout.reference_width();
    const auto target = layout.target_segment();
    const bool has_refs = ref_w > 0;
    const int origin_row = has_refs ? h : 0;
    const int origin_col = ref_w;

    int need_rows = has_refs ? h : 0;
    int need_cols = ref_w;
    if (target) {
        need_rows = std::max(need_rows, origin_row + h);
        need_cols = std::max(need_cols, origin_col + layout.segment_widths[*target]);
    }
    if (need_rows > max_rows || need_cols > max_cols) {
        throw InvalidInput(fmt::format(
            "positions need {} rows x {} cols but max_positions is ({}, {}); raise max_rows/max_cols to at least "
            "that",
            need_rows, need_cols, max_rows, max_cols));
    }

    const int total = layout.width();
    PositionGrid g;
    g.rows.resize(static_cast<std::size_t>(h) * total);
    g.cols.resize(g.rows.size());
    const int target_off = target ? layout.segment_offset(*target) : total;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < total; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * total + c;
            if (c < target_off) {
                g.rows[i] = r;
                g.cols[i] = c;
            } else {
                g.rows[i] = origin_row + r;
                g.cols[i] = origin_col + (c - target_off);
            }
        }
    return g;
}

PositionGrid offset_positions(const PositionGrid& g, int drow, int dcol) {
    PositionGrid out = g;
    for (auto& r : out.rows) r += drow;
    for (auto& c : out.cols) c += dcol;
    return out;
}

std::vector<double> timestep_features(double tau, int dim) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidInput(fmt::format("timestep {} outside [0,1]", tau));
    return nn::sinusoid(1000.0 * tau, dim);
}

ag::Var positional_table_2d(const PositionGrid& g, int dim) {
    const int half = dim / 2;
    std::vector<double> values;
    values.reserve(g.size() * dim);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto r = nn::sinusoid(g.rows[i], half);
        const auto c = nn::sinusoid(g.cols[i], half);
        values.insert(values.end(), r.begin(), r.end());
        values.insert(values.end(), c.begin(), c.end());
    }
    return ag::constant(static_cast<int>(g.size()), dim, std::move(values));
}

Backbone::Backbone(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int d = cfg_.model_dim;
    img_in_ = nn::Linear(params_, "backbone.img_in", cfg_.channels, d, rng);
    txt_in_ = nn::Linear(params_, "backbone.txt_in", cfg_.text_dim, d, rng);
    time_mlp_ = nn::Mlp(params_, "backbone.time", d, d, d, rng);
    pooled_mlp_ = nn::Mlp(params_, "backbone.pooled", cfg_.text_dim, d, d, rng);
    for (int i = 0; i < cfg_.depth; ++i) {
        blocks_.emplace_back(params_, fmt::format("backbone.block{}", i), d, cfg_.heads, cfg_.mlp_ratio, rng);
    }
    final_mod_ = nn::Linear(params_, "backbone.final_mod", d, 2 * d, rng, nn::Init::Zero);
    final_out_ = nn::Linear(params_, "backbone.final_out", d, cfg_.channels, rng, nn::Init::Zero);
}

ag::Var Backbone::embed_timestep(double tau) const {
    auto f = timestep_features(tau, cfg_.model_dim);
    return time_mlp_(ag::constant(1, cfg_.model_dim, std::move(f)));
}

ag::Var Backbone::condition(double tau, const ag::Var& pooled) const {
    if (pooled.rows() != 1 || pooled.cols() != cfg_.text_dim) {
        throw InvalidInput(fmt::format("pooled vector must be [1,{}], got [{},{}]", cfg_.text_dim, pooled.rows(),
                                       pooled.cols()));
    }
    return ag::add(embed_timestep(tau), pooled_mlp_(pooled));
}

void Backbone::check_positions(const PositionGrid& g, int tokens) const {
    if (static_cast<int>(g.size()) != tokens || g.cols.size() != g.rows.size()) {
        throw InvalidInput(fmt::format("position grid covers {} tokens, canvas has {}", g.size(), tokens));
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g.rows[i] < 0 || g.cols[i] < 0 || g.rows[i] >= cfg_.max_rows || g.cols[i] >= cfg_.max_cols) {
            throw InvalidInput(fmt::format("position ({}, {}) outside max_positions ({}, {})", g.rows[i], g.cols[i],
                                           cfg_.max_rows, cfg_.max_cols));
        }
    }
}

ag::Var Backbone::embed_image(const ag::Var& tokens, const PositionGrid& g) const {
    if (tokens.cols() != cfg_.channels) {
        throw InvalidInput(fmt::format("canvas has {} channels, backbone expects {}", tokens.cols(), cfg_.channels));
    }
    check_positions(g, tokens.rows());
    return ag::add(img_in_(tokens), positional_table_2d(g, cfg_.model_dim));
}

ag::Var Backbone::embed_text(const ag::Var& text) const {
    if (text.cols() != cfg_.text_dim) {
        throw InvalidInput(fmt::format("text width {} != text_dim {}", text.cols(), cfg_.text_dim));
    }
    if (text.rows() == 0) throw InvalidInput("text stream is empty");
    return ag::add(txt_in_(text), nn::positional_table_1d(text.rows(), cfg_.model_dim));
}

ag::Var Backbone::forward(const ag::Var& tokens, const PositionGrid& positions, const ag::Var& text,
                          const ag::Var& pooled, double tau, const std::vector<ag::Var>* residuals) const {
    if (residuals && static_cast<int>(residuals->size()) != cfg_.depth) {
        throw InvalidInput("residual list must have one entry per backbone block");
    }
    ag::Var img = embed_image(tokens, positions);
    ag::Var txt = embed_text(text);
    const ag::Var cond = condition(tau, pooled);
    for (int i = 0; i < cfg_.depth; ++i) {
        std::tie(img, txt) = blocks_[i](img, txt, cond);
        if (residuals && (*residuals)[i].defined()) img = ag::add(img, (*residuals)[i]);
    }
    const ag::Var m = final_mod_(ag::silu(cond));
    const int d = cfg_.model_dim;
    return final_out_(ag::modulate(ag::layer_norm(img), ag::slice_cols(m, 0, d), ag::slice_cols(m, d, d)));
}

LatentCanvas backbone_forward(const Backbone& model, const LatentCanvas& canvas, const PositionGrid& positions,
                              const ag::Var& text, const ag::Var& pooled, double tau) {
    canvas.layout.validate();
    if (canvas.values.size() != static_cast<std::size_t>(canvas.layout.tokens()) * canvas.layout.channels) {
        throw CorruptCanvas("canvas values do not match layout");
    }
    ag::NoGradGuard guard;
    const ag::Var v = model.forward(to_var(canvas), positions, text, pooled, tau);
    LatentCanvas out;
    out.layout = canvas.layout;
    out.values.assign(v.data().begin(), v.data().end());
    return out;
}

}  // namespace remix
