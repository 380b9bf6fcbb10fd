#pragma once

// Every network of the stack built from one RunConfig, plus the conditioned
// velocity prediction shared by training and sampling.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "remix/backbone.hpp"
#include "remix/checkpoint.hpp"
#include "remix/config.hpp"
#include "remix/connector.hpp"
#include "remix/identity.hpp"
#include "remix/ip_controlnet.hpp"

namespace remix {

BackboneConfig backbone_config(const RunConfig& cfg);
ConnectorConfig connector_config(const RunConfig& cfg);
ControlNetConfig controlnet_config(const RunConfig& cfg);
// Attribute head sizes of the identity encoder: shape, body, limbs, accessory, texture.
std::vector<int> identity_heads();

// Text-side conditioning: token stream for the joint attention and its pooled vector.
struct TextCondition {
    ag::Var stream;  // [L, text_dim]
    ag::Var pooled;  // [1, text_dim]
};

struct Conditioning {
    TextCondition text;
    ControlInputs control;
    double alpha = 1.0;
    double beta = 1.0;
    bool use_control = false;  // false: backbone only
};

class Models {
public:
    explicit Models(const RunConfig& cfg);

    const RunConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    int image_size() const { return image_size_; }
    int patch() const { return patch_; }
    int latent_side() const { return image_size_ / patch_; }

    Backbone backbone;
    nn::ParamStore encoder_params;    // text.*, semantic.*
    nn::ParamStore connector_params;  // instr.*, connector.*
    TextEncoder text;
    SemanticEncoder semantic;
    InstructionEncoder instruction;
    Connector connector;
    IPControlNet ipcn;
    IdentityEncoder identity;

    // Prompt tokens, optionally followed by refined semantic values.
    TextCondition text_condition(const std::vector<std::string>& prompt,
                                 const std::vector<ag::Var>& values = {}) const;
    // Connector output for an instruction over an input image.
    ag::Var connect(const std::vector<std::string>& instruction, const Image& img) const;
    // Pooled semantic features averaged over the references.
    ag::Var global_visual(const std::vector<Image>& refs) const;

    ag::Var velocity(const ag::Var& tokens, const CanvasLayout& layout, const PositionGrid& positions,
                     const Conditioning& cond, double tau) const;

private:
    RunConfig cfg_;
    Vocabulary vocab_;
    int image_size_, patch_;
};

// Component checkpoints of a run directory.
enum class Component { Identity, Pretrain, Connector, ControlNet };
std::string component_name(Component c);

Checkpoint make_checkpoint(const std::string& stage, std::uint64_t step, const RunConfig& cfg,
                           const std::vector<const nn::ParamStore*>& stores);
// Restores the parameter stores of a component; throws MissingCheckpoint naming the stage.
void load_component(Models& models, Component c, const std::filesystem::path& path);
std::vector<nn::ParamStore*> component_stores(Models& models, Component c);

}  // namespace remix
