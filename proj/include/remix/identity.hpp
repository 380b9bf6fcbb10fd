#pragma once

// Identity encoder: a small CNN whose L2-normalised penultimate features serve
// as identity embeddings. Trained by classifying the synthetic attributes.

#include <array>
#include <vector>

#include "remix/image.hpp"
#include "remix/nn.hpp"

namespace remix {

class IdentityEncoder {
public:
    static constexpr int kEmbedDim = 64;

    // head_sizes: number of classes for each attribute head.
    IdentityEncoder(int image_size, std::vector<int> head_sizes, std::uint64_t seed);

    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    int image_size() const { return image_size_; }

    // pixels [H*W, 3] in [0,1] -> unit-norm [1, kEmbedDim]. Differentiable.
    ag::Var embed(const ag::Var& pixels) const;
    // Logits of each attribute head for one image.
    std::vector<ag::Var> logits(const ag::Var& pixels) const;

private:
    ag::Var features(const ag::Var& pixels) const;

    int image_size_;
    nn::ParamStore params_;
    std::vector<nn::Conv2d> convs_;
    nn::Linear proj_;
    std::vector<nn::Linear> heads_;
    int pooled_side_ = 2;
};

// Unit-norm identity embedding of an image.
std::vector<double> extract_identity(const IdentityEncoder& enc, const Image& img);

}  // namespace remix
