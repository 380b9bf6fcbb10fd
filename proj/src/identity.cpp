#include "remix/identity.hpp"

#include <fmt/format.h>

#include "remix/error.hpp"
#include "remix/latent_codec.hpp"

namespace remix {

IdentityEncoder::IdentityEncoder(int image_size, std::vector<int> head_sizes, std::uint64_t seed)
    : image_size_(image_size) {
    if (image_size < 8 || image_size % 8 != 0) throw ConfigError("identity encoder needs image size divisible by 8");
    Rng rng(seed);
    const int widths[] = {24, 48, 48};
    int in = 3;
    for (int i = 0; i < 3; ++i) {
        convs_.emplace_back(params_, fmt::format("identity.conv{}", i), in, widths[i], 3, 2, rng);
        in = widths[i];
    }
    const int flat = pooled_side_ * pooled_side_ * in;
    proj_ = nn::Linear(params_, "identity.proj", flat, kEmbedDim, rng);
    for (std::size_t i = 0; i < head_sizes.size(); ++i) {
        heads_.emplace_back(params_, fmt::format("identity.head{}", i), kEmbedDim, head_sizes[i], rng, nn::Init::Normal,
                            4.0);
    }
}

ag::Var IdentityEncoder::features(const ag::Var& pixels) const {
    if (pixels.rows() != image_size_ * image_size_ || pixels.cols() != 3) {
        throw InvalidInput(fmt::format("identity encoder expects {}x{} RGB input", image_size_, image_size_));
    }
    ag::Var x = ag::add_scalar(ag::scale(pixels, 2.0), -1.0);
    int side = image_size_;
    for (const auto& conv : convs_) {
        x = ag::silu(conv(x, side, side));
        side /= 2;
    }
    if (side != pooled_side_) x = ag::avg_pool(x, side, side, side / pooled_side_);
    x = ag::reshape(x, 1, x.rows() * x.cols());
    return proj_(x);
}

ag::Var IdentityEncoder::embed(const ag::Var& pixels) const { return ag::l2_normalize_rows(features(pixels)); }

std::vector<ag::Var> IdentityEncoder::logits(const ag::Var& pixels) const {
    const ag::Var e = embed(pixels);
    std::vector<ag::Var> out;
    for (const auto& h : heads_) out.push_back(h(e));
    return out;
}

std::vector<double> extract_identity(const IdentityEncoder& enc, const Image& img) {
    validate_image(img);
    ag::NoGradGuard guard;
    const ag::Var e = enc.embed(image_to_var(img));
    return {e.data().begin(), e.data().end()};
}

}  // namespace remix
