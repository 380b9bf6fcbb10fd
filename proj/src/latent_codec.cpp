#include "remix/latent_codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "remix/error.hpp"

namespace remix {

int CanvasLayout::width() const { return std::accumulate(segment_widths.begin(), segment_widths.end(), 0); }

int CanvasLayout::reference_width() const {
    int w = 0;
    for (std::size_t i = 0; i < segment_widths.size(); ++i) {
        if (segment_roles[i] == SegmentRole::Reference) w += segment_widths[i];
    }
    return w;
}

std::optional<int> CanvasLayout::target_segment() const {
    for (std::size_t i = 0; i < segment_roles.size(); ++i) {
        if (segment_roles[i] == SegmentRole::Target) return static_cast<int>(i);
    }
    return std::nullopt;
}

int CanvasLayout::segment_offset(int segment) const {
    return std::accumulate(segment_widths.begin(), segment_widths.begin() + segment, 0);
}

std::vector<int> CanvasLayout::segment_tokens(int segment) const {
    const int total = width();
    const int off = segment_offset(segment);
    const int w = segment_widths[segment];
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(height) * w);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < w; ++c) out.push_back(r * total + off + c);
    return out;
}

std::vector<int> CanvasLayout::reference_tokens() const {
    const int total = width();
    std::vector<int> cols;
    for (int s = 0; s < segment_count(); ++s) {
        if (segment_roles[s] != SegmentRole::Reference) continue;
        const int off = segment_offset(s);
        for (int c = 0; c < segment_widths[s]; ++c) cols.push_back(off + c);
    }
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(height) * cols.size());
    for (int r = 0; r < height; ++r)
        for (int c : cols) out.push_back(r * total + c);
    return out;
}

void CanvasLayout::validate() const {
    if (segment_widths.size() != segment_roles.size()) throw CorruptCanvas("segment widths/roles length differ");
    if (segment_widths.empty()) throw CorruptCanvas("canvas has no segments");
    if (height <= 0 || channels <= 0) throw CorruptCanvas("canvas has empty extent");
    int targets = 0;
    for (std::size_t i = 0; i < segment_widths.size(); ++i) {
        if (segment_widths[i] <= 0) throw CorruptCanvas("segment with non-positive width");
        if (segment_roles[i] == SegmentRole::Target) {
            ++targets;
            if (i + 1 != segment_widths.size()) throw CorruptCanvas("target segment must be last");
        }
    }
    if (targets > 1) throw CorruptCanvas("more than one target segment");
}

Latent encode_image(const Image& img, int patch) {
    if (patch <= 0) throw InvalidInput("patch size must be positive");
    validate_image(img);
    if (img.height % patch != 0 || img.width % patch != 0) {
        throw InvalidInput("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                           " not divisible by patch size " + std::to_string(patch));
    }
    const int h = img.height / patch, w = img.width / patch, c = 3 * patch * patch;
    Latent z(h, w, c);
    for (int ty = 0; ty < h; ++ty)
        for (int tx = 0; tx < w; ++tx) {
            double* dst = &z.values[(static_cast<std::size_t>(ty) * w + tx) * c];
            for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx)
                    for (int ch = 0; ch < 3; ++ch) {
                        const double v = img.at(ty * patch + dy, tx * patch + dx, ch);
                        dst[(dy * patch + dx) * 3 + ch] = 2.0 * v - 1.0;
                    }
        }
    return z;
}

Image decode_latent(const Latent& z, int patch) {
    if (patch <= 0) throw InvalidInput("patch size must be positive");
    if (z.channels != 3 * patch * patch) {
        throw InvalidInput("latent has " + std::to_string(z.channels) + " channels, expected " +
                           std::to_string(3 * patch * patch) + " for patch " + std::to_string(patch));
    }
    if (z.values.size() != static_cast<std::size_t>(z.height) * z.width * z.channels) {
        throw InvalidInput("latent buffer does not match its shape");
    }
    Image img(z.height * patch, z.width * patch);
    const int c = z.channels;
    for (int ty = 0; ty < z.height; ++ty)
        for (int tx = 0; tx < z.width; ++tx) {
            const double* src = &z.values[(static_cast<std::size_t>(ty) * z.width + tx) * c];
            for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx)
                    for (int ch = 0; ch < 3; ++ch) {
                        const double v = (src[(dy * patch + dx) * 3 + ch] + 1.0) * 0.5;
                        img.at(ty * patch + dy, tx * patch + dx, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                    }
        }
    return img;
}

LatentCanvas concat_canvas(std::span<const Latent> refs, const std::optional<Latent>& target) {
    std::vector<const Latent*> parts;
    for (const auto& r : refs) parts.push_back(&r);
    if (target) parts.push_back(&*target);
    if (parts.empty()) throw InvalidInput("concat_canvas: no latents");
    const int h = parts[0]->height, c = parts[0]->channels;
    LatentCanvas canvas;
    canvas.layout.height = h;
    canvas.layout.channels = c;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (parts[i]->height != h || parts[i]->channels != c) {
            throw InvalidInput("concat_canvas: latents disagree in height or channels");
        }
        canvas.layout.segment_widths.push_back(parts[i]->width);
        canvas.layout.segment_roles.push_back((target && i + 1 == parts.size()) ? SegmentRole::Target
                                                                                 : SegmentRole::Reference);
    }
    const int total = canvas.layout.width();
    canvas.values.resize(static_cast<std::size_t>(h) * total * c);
    for (int r = 0; r < h; ++r) {
        int off = 0;
        for (const Latent* p : parts) {
            std::copy_n(&p->values[static_cast<std::size_t>(r) * p->width * c], static_cast<std::size_t>(p->width) * c,
                        &canvas.values[(static_cast<std::size_t>(r) * total + off) * c]);
            off += p->width;
        }
    }
    return canvas;
}

std::pair<std::vector<Latent>, std::optional<Latent>> split_canvas(const LatentCanvas& canvas) {
    canvas.layout.validate();
    const auto& L = canvas.layout;
    const int total = L.width(), c = L.channels;
    if (canvas.values.size() != static_cast<std::size_t>(L.height) * total * c) {
        throw CorruptCanvas("canvas values do not match layout " + std::to_string(L.height) + "x" +
                            std::to_string(total) + "x" + std::to_string(c));
    }
    std::vector<Latent> refs;
    std::optional<Latent> target;
    int off = 0;
    for (int s = 0; s < L.segment_count(); ++s) {
        const int w = L.segment_widths[s];
        Latent z(L.height, w, c);
        for (int r = 0; r < L.height; ++r) {
            std::copy_n(&canvas.values[(static_cast<std::size_t>(r) * total + off) * c], static_cast<std::size_t>(w) * c,
                        &z.values[static_cast<std::size_t>(r) * w * c]);
        }
        off += w;
        if (L.segment_roles[s] == SegmentRole::Target) {
            target = std::move(z);
        } else {
            refs.push_back(std::move(z));
        }
    }
    return {std::move(refs), std::move(target)};
}

ag::Var to_var(const Latent& z) { return ag::constant(z.tokens(), z.channels, z.values); }

ag::Var to_var(const LatentCanvas& canvas) {
    return ag::constant(canvas.layout.tokens(), canvas.layout.channels, canvas.values);
}

ag::Var image_to_var(const Image& img) {
    std::vector<double> v(img.pixels.begin(), img.pixels.end());
    return ag::constant(img.height * img.width, 3, std::move(v));
}

Latent latent_from_values(int h, int w, int c, std::span<const double> values) {
    if (values.size() != static_cast<std::size_t>(h) * w * c) throw InvalidInput("latent_from_values: size mismatch");
    Latent z(h, w, c);
    std::copy(values.begin(), values.end(), z.values.begin());
    return z;
}

ag::Var decode_tokens(const ag::Var& tokens, int h, int w, int patch) {
    const int c = 3 * patch * patch;
    if (tokens.rows() != h * w || tokens.cols() != c) throw InvalidInput("decode_tokens: shape mismatch");
    const int H = h * patch, W = w * patch;
    std::vector<int> index(static_cast<std::size_t>(H) * W * 3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                const int token = (y / patch) * w + (x / patch);
                const int inner = ((y % patch) * patch + (x % patch)) * 3 + ch;
                index[(static_cast<std::size_t>(y) * W + x) * 3 + ch] = token * c + inner;
            }
    return ag::scale(ag::add_scalar(ag::gather(tokens, H * W, 3, std::move(index)), 1.0), 0.5);
}

ag::Var gather_rows(const ag::Var& tokens, std::span<const int> rows) {
    const int c = tokens.cols();
    std::vector<int> index;
    index.reserve(rows.size() * c);
    for (int r : rows)
        for (int j = 0; j < c; ++j) index.push_back(r * c + j);
    return ag::gather(tokens, static_cast<int>(rows.size()), c, std::move(index));
}

}  // namespace remix
