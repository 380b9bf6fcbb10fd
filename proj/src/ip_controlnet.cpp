#include "remix/ip_controlnet.hpp"

#include <fmt/format.h>

#include <bit>

#include "remix/error.hpp"

namespace remix {

void ControlNetConfig::validate(int backbone_depth) const {
    if (blocks < 1) throw ConfigError("control branch needs N >= 1");
    if (blocks > backbone_depth) {
        throw ConfigError(fmt::format("control branch N={} exceeds backbone depth {}", blocks, backbone_depth));
    }
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("alpha and beta must be non-negative");
    if (dve_hidden <= 0 || sve_hidden <= 0) throw ConfigError("encoder widths must be positive");
}

std::vector<int> fusion_schedule(int depth, int blocks) {
    if (blocks < 1 || blocks > depth) throw InvalidInput(fmt::format("N={} invalid for depth {}", blocks, depth));
    std::vector<int> out(depth);
    for (int j = 0; j < depth; ++j) out[j] = j % blocks;
    return out;
}

DenseVisualEncoder::DenseVisualEncoder(nn::ParamStore& ps, const std::string& name, int channels, int hidden,
                                       Rng& rng) {
    for (int i = 0; i < kLayers; ++i) {
        const int in = i == 0 ? channels : hidden;
        const int out = i == kLayers - 1 ? channels : hidden;
        convs_.emplace_back(ps, fmt::format("{}.conv{}", name, i), in, out, 3, 1, rng);
    }
}

ag::Var DenseVisualEncoder::operator()(const ag::Var& tokens, int height, int width) const {
    if (tokens.rows() != height * width) throw InvalidInput("dve: token count does not match grid");
    ag::Var x = tokens;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = convs_[i](x, height, width);
        if (i + 1 < convs_.size()) x = ag::silu(x);
    }
    return x;
}

SparseVisualEncoder::SparseVisualEncoder(nn::ParamStore& ps, const std::string& name, int patch, int channels,
                                         int hidden, int layers, Rng& rng) {
    if (patch <= 0 || !std::has_single_bit(static_cast<unsigned>(patch))) {
        throw ConfigError("sparse encoder needs a power-of-two patch size");
    }
    const int strided = std::countr_zero(static_cast<unsigned>(patch));
    const int total = std::max(layers, strided + 1);
    int in = 3;
    for (int i = 0; i < total; ++i) {
        const int stride = i < strided ? 2 : 1;
        const int out = i == total - 1 ? channels : hidden;
        convs_.emplace_back(ps, fmt::format("{}.conv{}", name, i), in, out, 3, stride, rng);
        in = out;
    }
    total_stride_ = patch;
}

ag::Var SparseVisualEncoder::operator()(const Image& map) const {
    validate_image(map);
    if (map.height % total_stride_ != 0 || map.width % total_stride_ != 0) {
        throw InvalidInput(fmt::format("sparse map {}x{} not divisible by stride {}", map.height, map.width,
                                       total_stride_));
    }
    ag::Var x = image_to_var(map);
    int h = map.height, w = map.width;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = convs_[i](x, h, w);
        if (convs_[i].stride == 2) {
            h /= 2;
            w /= 2;
        }
        if (i + 1 < convs_.size()) x = ag::silu(x);
    }
    return x;
}

IPControlNet::IPControlNet(const ControlNetConfig& cfg, const BackboneConfig& bcfg, int patch, std::uint64_t seed)
    : cfg_(cfg), bcfg_(bcfg) {
    cfg_.validate(bcfg_.depth);
    if (bcfg_.channels != 3 * patch * patch) throw ConfigError("patch size disagrees with backbone channels");
    Rng rng(seed);
    const int c = bcfg_.channels, d = bcfg_.model_dim;
    dve_ = DenseVisualEncoder(params_, "ipcn.dve", c, cfg_.dve_hidden, rng);
    sve_ = SparseVisualEncoder(params_, "ipcn.sve", patch, c, cfg_.sve_hidden, cfg_.sve_layers, rng);
    c0_ = nn::Linear(params_, "ipcn.c0", c, c, rng, nn::Init::Zero);
    c1_ = nn::Linear(params_, "ipcn.c1", c, c, rng, nn::Init::Zero);
    global_ = nn::Linear(params_, "ipcn.global", bcfg_.text_dim, bcfg_.text_dim, rng, nn::Init::Zero);
    img_in_ = nn::Linear(params_, "ipcn.img_in", c, d, rng);
    txt_in_ = nn::Linear(params_, "ipcn.txt_in", bcfg_.text_dim, d, rng);
    for (int i = 0; i < cfg_.blocks; ++i) {
        blocks_.emplace_back(params_, fmt::format("ipcn.block{}", i), d, bcfg_.heads, bcfg_.mlp_ratio, rng);
    }
    for (int i = 0; i < cfg_.blocks; ++i) {
        fusion_.emplace_back(params_, fmt::format("ipcn.fusion{}", i), d, d, rng, nn::Init::Zero);
    }
}

void IPControlNet::init_from_backbone(const Backbone& backbone) {
    params_.copy_matching(backbone.params(), "backbone.", "ipcn.");
}

ag::Var inject(const ag::Var& eps, const CanvasLayout& layout, const ag::Var& dense, const ag::Var& sparse,
               double alpha, double beta) {
    const int c = eps.cols();
    if (eps.rows() != layout.tokens()) throw InvalidInput("inject: stream does not match canvas layout");
    std::vector<ag::Var> parts;
    std::vector<int> source(layout.tokens(), -1);
    int offset = 0;
    if (dense.defined() && alpha != 0.0) {
        const auto idx = layout.reference_tokens();
        if (dense.rows() != static_cast<int>(idx.size()) || dense.cols() != c) {
            throw InvalidInput(fmt::format("inject: dense features [{},{}] do not cover {} reference tokens",
                                           dense.rows(), dense.cols(), idx.size()));
        }
        for (std::size_t i = 0; i < idx.size(); ++i) source[idx[i]] = offset + static_cast<int>(i);
        parts.push_back(ag::scale(dense, alpha));
        offset += dense.rows();
    }
    if (sparse.defined() && beta != 0.0) {
        const auto target = layout.target_segment();
        if (!target) throw InvalidInput("inject: sparse features given but canvas has no target segment");
        const auto idx = layout.segment_tokens(*target);
        if (sparse.rows() != static_cast<int>(idx.size()) || sparse.cols() != c) {
            throw InvalidInput(fmt::format("inject: sparse features [{},{}] do not match target grid of {} tokens",
                                           sparse.rows(), sparse.cols(), idx.size()));
        }
        for (std::size_t i = 0; i < idx.size(); ++i) source[idx[i]] = offset + static_cast<int>(i);
        parts.push_back(ag::scale(sparse, beta));
        offset += sparse.rows();
    }
    if (parts.empty()) return eps;
    parts.push_back(ag::constant(1, c, 0.0));
    const ag::Var stacked = ag::concat_rows(parts);
    std::vector<int> index(static_cast<std::size_t>(layout.tokens()) * c);
    for (int t = 0; t < layout.tokens(); ++t) {
        const int row = source[t] < 0 ? offset : source[t];
        for (int j = 0; j < c; ++j) index[static_cast<std::size_t>(t) * c + j] = row * c + j;
    }
    return ag::add(eps, ag::gather(stacked, layout.tokens(), c, std::move(index)));
}

ag::Var IPControlNet::control_stream(const ag::Var& base, const CanvasLayout& layout, const ControlInputs& in,
                                     double alpha, double beta) const {
    ag::Var dense, sparse;
    if (in.dense && alpha != 0.0) {
        if (layout.reference_width() == 0) throw InvalidInput("dense features given but canvas has no references");
        dense = c0_(dve_(*in.dense, layout.height, layout.reference_width()));
    }
    if (in.sparse && beta != 0.0) {
        const auto target = layout.target_segment();
        if (!target) throw InvalidInput("sparse map given but canvas has no target segment");
        if (in.sparse->height / sve_.total_stride() != layout.height ||
            in.sparse->width / sve_.total_stride() != layout.segment_widths[*target]) {
            throw InvalidInput("sparse map does not align with the target latent grid");
        }
        sparse = c1_(sve_(*in.sparse));
    }
    return inject(base, layout, dense, sparse, alpha, beta);
}

std::vector<ag::Var> IPControlNet::control_branch_forward(const Backbone& backbone, const ag::Var& tokens,
                                                          const PositionGrid& positions, const CanvasLayout& layout,
                                                          const ag::Var& text, const ag::Var& pooled, double tau,
                                                          const ControlInputs& in, double alpha,
                                                          double beta) const {
    if (cfg_.blocks > backbone.config().depth) throw InvalidInput("control branch deeper than backbone");
    const int d = bcfg_.model_dim;
    const ag::Var stream = control_stream(tokens, layout, in, alpha, beta);
    ag::Var img = ag::add(img_in_(stream), positional_table_2d(positions, d));

    ag::Var txt_src = text;
    if (in.global) {
        const ag::Var parts[] = {text, global_(*in.global)};
        txt_src = ag::concat_rows(parts);
    }
    ag::Var txt = ag::add(txt_in_(txt_src), nn::positional_table_1d(txt_src.rows(), d));
    const ag::Var cond = backbone.condition(tau, pooled);

    std::vector<ag::Var> outs;
    outs.reserve(blocks_.size());
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        std::tie(img, txt) = blocks_[i](img, txt, cond);
        outs.push_back(fusion_[i](img));
    }
    const auto schedule = fusion_schedule(backbone.config().depth, cfg_.blocks);
    std::vector<ag::Var> residuals(schedule.size());
    for (std::size_t j = 0; j < schedule.size(); ++j) residuals[j] = outs[schedule[j]];
    return residuals;
}

}  // namespace remix
