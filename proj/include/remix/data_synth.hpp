#pragma once

// Procedural glyph characters: identities are discrete attribute tuples,
// scenes vary pose, background and framing.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "remix/image.hpp"

namespace remix::synth {

constexpr int kShapes = 8;
constexpr int kColors = 10;
constexpr int kAccessories = 6;
constexpr int kTextures = 4;
constexpr int kPoses = 6;
constexpr int kBackgrounds = 10;

using Rgb = std::array<std::uint8_t, 3>;

extern const std::array<const char*, kShapes> kShapeNames;
extern const std::array<const char*, kColors> kColorNames;
extern const std::array<const char*, kAccessories> kAccessoryNames;
extern const std::array<const char*, kTextures> kTextureNames;
extern const std::array<const char*, kPoses> kPoseNames;
extern const std::array<const char*, kBackgrounds> kBackgroundNames;

extern const std::array<Rgb, kColors> kPalette;
extern const std::array<Rgb, kAccessories> kAccessoryColors;  // index 0 unused
extern const std::array<Rgb, kBackgrounds> kBackgroundColors;
extern const Rgb kHeadColor;
Rgb dark(const Rgb& c);

struct IdentitySpec {
    int id = 0;
    int body_shape = 0;
    int primary_color = 0;
    int secondary_color = 1;  // never equal to primary_color
    int accessory = 0;        // 0 = none
    int texture_motif = 0;

    bool same_attributes(const IdentitySpec& o) const;
    void validate() const;
};

// Joint angles in radians, measured from straight down and opening outward.
struct SceneSpec {
    int pose = 0;                 // archetype index the angles were drawn from
    std::array<double, 5> joints{};  // left arm, right arm, left leg, right leg, neck
    int background = 0;
    int dx = 0;
    int dy = 0;

    bool operator==(const SceneSpec& o) const = default;
    void validate() const;
};

constexpr int kAttributeSpace = kShapes * kColors * (kColors - 1) * kAccessories * kTextures;

// Deterministic in (dataset_seed, id): a seeded permutation of the attribute space.
IdentitySpec make_identity(std::uint64_t dataset_seed, int id);
SceneSpec make_scene(std::uint64_t dataset_seed, int id, int scene_index);
SceneSpec scene_for_pose(int pose, int background, int dx, int dy);

struct Render {
    Image image;
    Image pose_map;
    std::vector<std::string> caption;
};

// size must be a multiple of 32.
Render render(const IdentitySpec& identity, const SceneSpec& scene, int size);
// Figure silhouette mask (true where any figure part is drawn).
std::vector<bool> figure_mask(const IdentitySpec& identity, const SceneSpec& scene, int size);

std::vector<std::string> caption_tokens(const IdentitySpec& identity, const SceneSpec& scene);
std::vector<std::string> scene_tokens(const SceneSpec& scene);

struct Edit {
    IdentitySpec edited;
    std::vector<std::string> instruction;
};
// Single-attribute change of the identity, chosen by the seed.
Edit make_edit(const IdentitySpec& identity, std::uint64_t seed);

// Every symbol that can appear in captions, scene prompts and edits.
std::vector<std::string> vocabulary_symbols();

enum class Mode { OneToOne, OneToMany, EditingTriples };
std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);

struct Record {
    int identity_id = 0;
    std::string image_path;  // relative to the manifest directory
    std::string pose_path;
    std::string caption;
    int group = 0;
    std::string split;        // train | test
    std::string instruction;  // edit instruction or scene prompt
    std::string ref_path;     // paired reference image
};

struct Manifest {
    Mode mode = Mode::OneToMany;
    int image_size = 64;
    std::uint64_t seed = 0;
    std::filesystem::path root;
    std::vector<Record> records;

    std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
    std::vector<const Record*> split(const std::string& name) const;
};

struct DatasetCounts {
    int train_identities = 512;
    int test_identities = 64;
    int scenes = 6;
};

// Writes images, pose maps, the vocabulary and manifest.tsv under out_dir.
Manifest build_dataset(std::uint64_t seed, const DatasetCounts& counts, Mode mode, int image_size,
                       const std::filesystem::path& out_dir, bool overwrite);

void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace remix::synth
