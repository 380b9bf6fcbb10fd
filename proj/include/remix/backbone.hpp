#pragma once

// Small MMDiT flow-matching backbone predicting velocities over latent
// canvases from a joint image/text token stream.

#include <vector>

#include "remix/latent_codec.hpp"
#include "remix/nn.hpp"

namespace remix {

struct BackboneConfig {
    int channels = 192;  // latent channels, 3*p*p
    int depth = 8;
    int model_dim = 256;
    int heads = 8;
    int mlp_ratio = 2;
    int text_dim = 256;
    int max_rows = 64;
    int max_cols = 256;

    void validate() const;
};

struct PositionGrid {
    std::vector<int> rows;
    std::vector<int> cols;

    std::size_t size() const { return rows.size(); }
};

// Reference segments keep their canvas coordinates; the target segment is
// shifted so its upper-left index sits at (h, sum of reference widths).
// Throws InvalidInput when an index would reach max_rows/max_cols.
PositionGrid assign_positions(const CanvasLayout& layout, int max_rows, int max_cols);
PositionGrid offset_positions(const PositionGrid& g, int drow, int dcol);

// Sinusoid of 1000*tau; rejects tau outside [0,1].
std::vector<double> timestep_features(double tau, int dim);
// [rows, dim] encoding: first half row sinusoid, second half column sinusoid.
ag::Var positional_table_2d(const PositionGrid& g, int dim);

class Backbone {
public:
    Backbone(const BackboneConfig& cfg, std::uint64_t seed);

    const BackboneConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    ag::Var embed_timestep(double tau) const;                          // [1, model_dim]
    ag::Var condition(double tau, const ag::Var& pooled) const;         // time + pooled
    ag::Var embed_image(const ag::Var& tokens, const PositionGrid& g) const;
    ag::Var embed_text(const ag::Var& text) const;                      // [L, text_dim] -> [L, model_dim]

    // tokens [T, channels], text [L, text_dim], pooled [1, text_dim].
    // residuals, when given, has one entry per block (undefined = none) added
    // to the image stream after that block.
    ag::Var forward(const ag::Var& tokens, const PositionGrid& positions, const ag::Var& text,
                    const ag::Var& pooled, double tau, const std::vector<ag::Var>* residuals = nullptr) const;

    const std::vector<nn::MMDiTBlock>& blocks() const { return blocks_; }
    const nn::Linear& img_in() const { return img_in_; }
    const nn::Linear& txt_in() const { return txt_in_; }

private:
    void check_positions(const PositionGrid& g, int tokens) const;

    BackboneConfig cfg_;
    nn::ParamStore params_;
    nn::Linear img_in_, txt_in_;
    nn::Mlp time_mlp_, pooled_mlp_;
    std::vector<nn::MMDiTBlock> blocks_;
    nn::Linear final_mod_, final_out_;
};

// Velocity prediction for a canvas: output values share the canvas layout.
LatentCanvas backbone_forward(const Backbone& model, const LatentCanvas& canvas, const PositionGrid& positions,
                              const ag::Var& text, const ag::Var& pooled, double tau);

}  // namespace remix
