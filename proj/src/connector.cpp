#include "remix/connector.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

#include "remix/error.hpp"
#include "remix/latent_codec.hpp"

namespace remix {

Vocabulary::Vocabulary(const std::vector<std::string>& symbols) {
    symbols_.push_back(kUnk);
    ids_[kUnk] = 0;
    for (const auto& s : symbols) {
        if (s.empty() || ids_.count(s)) continue;
        ids_[s] = static_cast<int>(symbols_.size());
        symbols_.push_back(s);
    }
}

int Vocabulary::id(const std::string& symbol) const {
    auto it = ids_.find(symbol);
    return it == ids_.end() ? 0 : it->second;
}

std::vector<int> Vocabulary::ids(std::span<const std::string> tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write vocabulary: " + path.string());
    for (std::size_t i = 1; i < symbols_.size(); ++i) f << symbols_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot read vocabulary: " + path.string());
    std::vector<std::string> symbols;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) symbols.push_back(line);
    }
    return Vocabulary(symbols);
}

std::vector<std::string> split_tokens(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    std::string t;
    while (in >> t) out.push_back(t);
    return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

namespace {

ag::Var lookup(const ag::Var& table, std::span<const int> ids) {
    const int d = table.cols();
    std::vector<int> index;
    index.reserve(ids.size() * d);
    for (int id : ids) {
        if (id < 0 || id >= table.rows()) throw InvalidInput(fmt::format("token id {} outside vocabulary", id));
        for (int j = 0; j < d; ++j) index.push_back(id * d + j);
    }
    return ag::gather(table, static_cast<int>(ids.size()), d, std::move(index));
}

// Image to [-1,1] tokens laid out as [H*W, 3].
ag::Var centered(const Image& img) {
    validate_image(img);
    return ag::add_scalar(ag::scale(image_to_var(img), 2.0), -1.0);
}

}  // namespace

TextEncoder::TextEncoder(nn::ParamStore& ps, const std::string& name, int vocab_size, int dim, Rng& rng) {
    table_ = ps.add(name + ".table", vocab_size, dim, rng, nn::Init::Normal, 1.0);
}

ag::Var TextEncoder::encode(std::span<const int> ids) const {
    if (ids.empty()) return {};
    return lookup(table_, ids);
}

InstructionEncoder::InstructionEncoder(nn::ParamStore& ps, const std::string& name, int vocab_size, int dim,
                                       int heads, int image_size, Rng& rng)
    : dim_(dim), image_size_(image_size), patch_(image_size / 4) {
    if (image_size % 4 != 0) throw ConfigError("instruction encoder image size must be divisible by 4");
    table_ = ps.add(name + ".table", vocab_size, dim, rng, nn::Init::Normal, 1.0);
    patch_in_ = nn::Linear(ps, name + ".patch_in", 3 * patch_ * patch_, dim, rng);
    for (int i = 0; i < 2; ++i) layers_.emplace_back(ps, fmt::format("{}.layer{}", name, i), dim, heads, 2, rng);
}

InstructionEmbedding InstructionEncoder::encode(std::span<const int> ids, const Image& ref) const {
    if (ids.empty()) throw InvalidInput("instruction must contain at least one symbol");
    if (ref.height != image_size_ || ref.width != image_size_) {
        throw InvalidInput(fmt::format("instruction encoder expects {}x{} images", image_size_, image_size_));
    }
    const Latent patches = encode_image(ref, patch_);
    const ag::Var parts[] = {lookup(table_, ids), patch_in_(to_var(patches))};
    ag::Var x = ag::concat_rows(parts);
    x = ag::add(x, nn::positional_table_1d(x.rows(), dim_));
    for (const auto& layer : layers_) x = layer(x);
    return {x, ag::mean_rows(x)};
}

SemanticEncoder::SemanticEncoder(nn::ParamStore& ps, const std::string& name, int image_size, int dim, int grid,
                                 Rng& rng)
    : image_size_(image_size), dim_(dim), grid_(grid) {
    if (grid <= 0 || image_size % grid != 0) throw ConfigError("semantic grid must divide the image size");
    int side = image_size, in = 3, out = 16, i = 0;
    while (side > grid && side % 2 == 0) {
        convs_.emplace_back(ps, fmt::format("{}.conv{}", name, i++), in, out, 3, 2, rng);
        side /= 2;
        in = out;
        out = std::min(out * 2, 64);
    }
    if (side != grid) throw ConfigError("image size / semantic grid must be a power of two");
    convs_.emplace_back(ps, fmt::format("{}.conv{}", name, i), in, in, 3, 1, rng);
    head_ = nn::Mlp(ps, name + ".head", in, dim, dim, rng);
    pos_ = ps.add(name + ".pos", grid * grid, dim, rng, nn::Init::Normal, 0.1);
}

ag::Var SemanticEncoder::encode(const Image& img) const {
    if (img.height != image_size_ || img.width != image_size_) {
        throw InvalidInput(fmt::format("semantic encoder expects {}x{} images", image_size_, image_size_));
    }
    ag::Var x = centered(img);
    int side = image_size_;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = convs_[i](x, side, side);
        side = (side + 2 * (convs_[i].kernel / 2) - convs_[i].kernel) / convs_[i].stride + 1;
        x = ag::silu(x);
    }
    return ag::add(head_(x), pos_);
}

void ConnectorConfig::validate() const {
    if (blocks < 1 || layers < 1) throw ConfigError("connector needs d >= 1 and l >= 1");
    if (dim <= 0 || heads <= 0 || dim % heads != 0) throw ConfigError("connector dim must be divisible by heads");
}

Connector::Connector(nn::ParamStore& ps, const std::string& name, const ConnectorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int D = cfg_.dim;
    query_map_ = nn::Mlp(ps, name + ".query_map", D, D, D, rng);
    global_map_ = nn::Mlp(ps, name + ".global_map", D, D, D, rng);
    for (int i = 0; i < cfg_.blocks; ++i) {
        blocks_.emplace_back(ps, fmt::format("{}.block{}", name, i), D, cfg_.heads, cfg_.mlp_ratio, rng);
    }
    for (int i = 0; i < cfg_.layers; ++i) {
        cross_.emplace_back(ps, fmt::format("{}.cross{}", name, i), D, cfg_.heads, cfg_.mlp_ratio, rng, 0.1);
    }
}

ag::Var Connector::operator()(const InstructionEmbedding& query, const ag::Var& key) const {
    const int D = cfg_.dim;
    if (query.tokens.cols() != D || query.pooled.cols() != D || key.cols() != D) {
        throw InvalidInput(fmt::format("connector expects width {}, got query {} key {}", D, query.tokens.cols(),
                                       key.cols()));
    }
    ag::Var q = ag::add(query_map_(query.tokens), nn::positional_table_1d(query.tokens.rows(), D));
    ag::Var k = key;
    const ag::Var cond = global_map_(query.pooled);
    for (const auto& b : blocks_) std::tie(k, q) = b(k, q, cond);
    const ag::Var parts[] = {q, k};
    const ag::Var context = ag::concat_rows(parts);
    ag::Var v = key;
    for (const auto& layer : cross_) v = layer(v, context);
    return v;
}

void Connector::zero_output_projections() {
    for (auto& layer : cross_) {
        for (ag::Var p : {layer.out.weight, layer.out.bias, layer.fc2.weight, layer.fc2.bias}) {
            std::fill(p.data().begin(), p.data().end(), 0.0);
        }
    }
}

ag::Var connector_loss(const ag::Var& value, const ag::Var& target) {
    if (value.rows() != target.rows() || value.cols() != target.cols()) {
        throw InvalidInput(fmt::format("connector_loss shape mismatch [{},{}] vs [{},{}]", value.rows(), value.cols(),
                                       target.rows(), target.cols()));
    }
    return ag::mse(value, target);
}

ag::Var compose_text_stream(std::span<const ag::Var> values, const ag::Var& text) {
    std::vector<ag::Var> parts;
    int width = -1;
    auto take = [&](const ag::Var& v) {
        if (!v.defined() || v.rows() == 0) return;
        if (width >= 0 && v.cols() != width) {
            throw InvalidInput(fmt::format("text stream width mismatch: {} vs {}", v.cols(), width));
        }
        width = v.cols();
        parts.push_back(v);
    };
    take(text);
    for (const auto& v : values) take(v);
    if (parts.empty()) throw InvalidInput("compose_text_stream: nothing to compose");
    return parts.size() == 1 ? parts[0] : ag::concat_rows(parts);
}

ag::Var compose_text_stream(const ag::Var& value, const ag::Var& text) {
    return compose_text_stream(std::span<const ag::Var>(&value, 1), text);
}

}  // namespace remix
