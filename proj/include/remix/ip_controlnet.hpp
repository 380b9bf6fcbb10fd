#pragma once

// Pixel-level conditioning branch: dense (DVE) and sparse (SVE) encoders,
// zero-initialised adapters, a global visual token and a control copy of the
// first backbone blocks whose outputs are fused back cyclically.

#include <optional>
#include <vector>

#include "remix/backbone.hpp"
#include "remix/image.hpp"
#include "remix/latent_codec.hpp"
#include "remix/nn.hpp"

namespace remix {

struct ControlNetConfig {
    int blocks = 4;  // N
    double alpha = 1.0;
    double beta = 1.0;
    int dve_hidden = 56;
    int sve_hidden = 32;
    int sve_layers = 6;
    void validate(int backbone_depth) const;
};

// Backbone block j receives the residual of control block schedule[j].
std::vector<int> fusion_schedule(int depth, int blocks);

// Six stride-1 3x3 convolutions with SiLU in between.
class DenseVisualEncoder {
public:
    DenseVisualEncoder() = default;
    DenseVisualEncoder(nn::ParamStore& ps, const std::string& name, int channels, int hidden, Rng& rng);
    ag::Var operator()(const ag::Var& tokens, int height, int width) const;  // [h*w, c] -> [h*w, c]
    static constexpr int kLayers = 6;
    int layer_count() const { return static_cast<int>(convs_.size()); }

private:
    std::vector<nn::Conv2d> convs_;
};

// Strided convolutions over the raw sparse map down to the latent grid.
class SparseVisualEncoder {
public:
    SparseVisualEncoder() = default;
    SparseVisualEncoder(nn::ParamStore& ps, const std::string& name, int patch, int channels, int hidden, int layers,
                        Rng& rng);
    // Returns [(H/p)*(W/p), c]; rejects maps not divisible by the stride product.
    ag::Var operator()(const Image& map) const;
    int total_stride() const { return total_stride_; }

private:
    int total_stride_ = 1;
    std::vector<nn::Conv2d> convs_;
};

// Optional conditioning signals for one forward pass.
struct ControlInputs {
    std::optional<ag::Var> dense;      // clean reference tokens, reference-canvas order [h*Wref, c]
    std::optional<Image> sparse;       // raw pose map for the target
    std::optional<ag::Var> global;     // pooled semantic features of the references [1, text_dim]
};

class IPControlNet {
public:
    IPControlNet(const ControlNetConfig& cfg, const BackboneConfig& bcfg, int patch, std::uint64_t seed);

    const ControlNetConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    // Copies embedders and the first N blocks from the backbone.
    void init_from_backbone(const Backbone& backbone);

    const DenseVisualEncoder& dve() const { return dve_; }
    const SparseVisualEncoder& sve() const { return sve_; }
    ag::Var c0(const ag::Var& x) const { return c0_(x); }
    ag::Var c1(const ag::Var& x) const { return c1_(x); }
    ag::Var global_visual_embed(const ag::Var& pooled_semantic) const { return global_(pooled_semantic); }

    // Stream entering the control blocks: base plus alpha*C0(DVE(dense)) on
    // reference tokens and beta*C1(SVE(sparse)) on target tokens.
    ag::Var control_stream(const ag::Var& base, const CanvasLayout& layout, const ControlInputs& in, double alpha,
                           double beta) const;

    // One residual per backbone block, each through its zero-init fusion.
    std::vector<ag::Var> control_branch_forward(const Backbone& backbone, const ag::Var& tokens,
                                                const PositionGrid& positions, const CanvasLayout& layout,
                                                const ag::Var& text, const ag::Var& pooled, double tau,
                                                const ControlInputs& in, double alpha, double beta) const;

private:
    ControlNetConfig cfg_;
    BackboneConfig bcfg_;
    nn::ParamStore params_;
    DenseVisualEncoder dve_;
    SparseVisualEncoder sve_;
    nn::Linear c0_, c1_, global_;
    nn::Linear img_in_, txt_in_;
    std::vector<nn::MMDiTBlock> blocks_;
    std::vector<nn::Linear> fusion_;
};

// eps + alpha*dense + beta*sparse, with dense placed on the reference tokens
// and sparse on the target tokens of the layout. Either may be undefined.
ag::Var inject(const ag::Var& eps, const CanvasLayout& layout, const ag::Var& dense, const ag::Var& sparse,
               double alpha, double beta);

}  // namespace remix
