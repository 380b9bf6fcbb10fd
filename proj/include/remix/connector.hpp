#pragma once

// Instruction and semantic encoders plus the dual-stream connector that maps
// (instruction, input-image features) to refined semantic features.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "remix/image.hpp"
#include "remix/nn.hpp"

namespace remix {

// Closed symbol vocabulary. Id 0 is the reserved UNK symbol.
class Vocabulary {
public:
    static constexpr const char* kUnk = "<unk>";

    Vocabulary() : Vocabulary(std::vector<std::string>{}) {}
    explicit Vocabulary(const std::vector<std::string>& symbols);

    int size() const { return static_cast<int>(symbols_.size()); }
    int id(const std::string& symbol) const;  // UNK for unknown symbols
    bool contains(const std::string& symbol) const { return ids_.count(symbol) != 0; }
    const std::vector<std::string>& symbols() const { return symbols_; }
    std::vector<int> ids(std::span<const std::string> tokens) const;

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::vector<std::string> symbols_;
    std::map<std::string, int> ids_;
};

std::vector<std::string> split_tokens(const std::string& text);
std::string join_tokens(std::span<const std::string> tokens);

// Token matrix and its row mean.
struct InstructionEmbedding {
    ag::Var tokens;  // [L, D]
    ag::Var pooled;  // [1, D]
};

// Token-table text encoder used alongside the semantic stream.
class TextEncoder {
public:
    TextEncoder(nn::ParamStore& ps, const std::string& name, int vocab_size, int dim, Rng& rng);
    // [L, dim]; undefined for an empty sequence.
    ag::Var encode(std::span<const int> ids) const;
    int dim() const { return table_.cols(); }

private:
    ag::Var table_;
};

// Stub multimodal encoder: symbols plus image patches through two
// self-attention layers.
class InstructionEncoder {
public:
    InstructionEncoder(nn::ParamStore& ps, const std::string& name, int vocab_size, int dim, int heads,
                       int image_size, Rng& rng);
    InstructionEmbedding encode(std::span<const int> ids, const Image& ref) const;
    int dim() const { return dim_; }

private:
    int dim_, image_size_, patch_;
    ag::Var table_;
    nn::Linear patch_in_;
    std::vector<nn::SelfAttentionLayer> layers_;
};

// Convolutional image encoder producing an M x D grid of semantic tokens.
class SemanticEncoder {
public:
    SemanticEncoder(nn::ParamStore& ps, const std::string& name, int image_size, int dim, int grid, Rng& rng);
    ag::Var encode(const Image& img) const;  // [grid*grid, dim]
    ag::Var pooled(const Image& img) const { return ag::mean_rows(encode(img)); }
    int tokens() const { return grid_ * grid_; }
    int dim() const { return dim_; }

private:
    int image_size_, dim_, grid_;
    std::vector<nn::Conv2d> convs_;
    nn::Mlp head_;
    ag::Var pos_;
};

struct ConnectorConfig {
    int blocks = 4;   // d
    int layers = 8;   // l
    int dim = 256;    // D
    int heads = 8;
    int mlp_ratio = 2;
    void validate() const;
};

class Connector {
public:
    Connector(nn::ParamStore& ps, const std::string& name, const ConnectorConfig& cfg, Rng& rng);

    // query [L, D] with pooled [1, D]; key [M, D] -> value [M, D].
    ag::Var operator()(const InstructionEmbedding& query, const ag::Var& key) const;
    // Zeroes every cross-attention output projection (weights and biases).
    void zero_output_projections();
    const ConnectorConfig& config() const { return cfg_; }

private:
    ConnectorConfig cfg_;
    nn::Mlp query_map_, global_map_;
    std::vector<nn::MMDiTBlock> blocks_;
    std::vector<nn::CrossAttentionLayer> cross_;
};

ag::Var connector_loss(const ag::Var& value, const ag::Var& target);

// [text ; values...] along the token axis. text may be undefined (empty).
ag::Var compose_text_stream(std::span<const ag::Var> values, const ag::Var& text);
ag::Var compose_text_stream(const ag::Var& value, const ag::Var& text);

}  // namespace remix
