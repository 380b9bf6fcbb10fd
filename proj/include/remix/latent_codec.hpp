#pragma once

// Exact space-to-depth image codec and the horizontal latent canvas used to
// denoise references and targets side by side.

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "remix/autograd.hpp"
#include "remix/image.hpp"

namespace remix {

// h x w x c grid, row-major; c = 3*p*p for patch size p.
struct Latent {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> values;

    Latent() = default;
    Latent(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, fill) {}

    int tokens() const { return height * width; }
    bool operator==(const Latent& o) const = default;
};

enum class SegmentRole { Reference, Target };

struct CanvasLayout {
    int height = 0;
    int channels = 0;
    std::vector<int> segment_widths;
    std::vector<SegmentRole> segment_roles;

    int width() const;
    int tokens() const { return height * width(); }
    int segment_count() const { return static_cast<int>(segment_widths.size()); }
    int reference_width() const;  // sum of reference segment widths
    std::optional<int> target_segment() const;
    int segment_offset(int segment) const;  // first column of a segment
    // Canvas token indices (row-major) that belong to a segment, in the
    // segment's own row-major order.
    std::vector<int> segment_tokens(int segment) const;
    // Token indices of all reference segments in reference-canvas order
    // (h x reference_width), i.e. as if the references alone were concatenated.
    std::vector<int> reference_tokens() const;
    void validate() const;
    bool operator==(const CanvasLayout& o) const = default;
};

struct LatentCanvas {
    CanvasLayout layout;
    std::vector<double> values;  // layout.height x layout.width() x channels

    bool operator==(const LatentCanvas& o) const = default;
};

// Space-to-depth then [0,1] -> [-1,1]. Requires H, W divisible by patch.
Latent encode_image(const Image& img, int patch);
// Exact inverse of encode_image, clamped to [0,1]. Requires c == 3*p*p.
Image decode_latent(const Latent& z, int patch);

// References left to right, then the optional target. Heights and channels
// must agree; at least one latent is required.
LatentCanvas concat_canvas(std::span<const Latent> refs, const std::optional<Latent>& target);
std::pair<std::vector<Latent>, std::optional<Latent>> split_canvas(const LatentCanvas& canvas);

// Autograd bridges. Tokens are laid out as [h*w, c].
ag::Var to_var(const Latent& z);
ag::Var to_var(const LatentCanvas& canvas);
ag::Var image_to_var(const Image& img);  // [H*W, 3]
Latent latent_from_values(int h, int w, int c, std::span<const double> values);
// Differentiable decode of [h*w, c] tokens into [H*W, 3] pixels (no clamp).
ag::Var decode_tokens(const ag::Var& tokens, int h, int w, int patch);
// Rows of `tokens` listed in `rows`, as a new [rows.size(), c] variable.
ag::Var gather_rows(const ag::Var& tokens, std::span<const int> rows);

}  // namespace remix
