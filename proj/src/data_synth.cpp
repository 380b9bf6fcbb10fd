#include "remix/data_synth.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "remix/error.hpp"
#include "remix/connector.hpp"
#include "remix/rng.hpp"

namespace remix::synth {

const std::array<const char*, kShapes> kShapeNames = {"block", "wide",   "tall",    "round",
                                                      "peak",  "funnel", "diamond", "bucket"};
const std::array<const char*, kColors> kColorNames = {"red",  "orange", "yellow", "green", "teal",
                                                      "blue", "purple", "pink",   "white", "brown"};
const std::array<const char*, kAccessories> kAccessoryNames = {"bare", "hat", "halo", "antenna", "bow", "glasses"};
const std::array<const char*, kTextures> kTextureNames = {"solid", "striped", "dotted", "checkered"};
const std::array<const char*, kPoses> kPoseNames = {"stand", "wave", "cheer", "tpose", "run", "jump"};
const std::array<const char*, kBackgrounds> kBackgroundNames = {"meadow", "ocean",  "dusk",  "sand", "mint",
                                                                "forest", "brick", "night", "sky",  "stone"};

const std::array<Rgb, kColors> kPalette = {{{220, 40, 40},
                                            {245, 140, 20},
                                            {235, 225, 50},
                                            {50, 180, 70},
                                            {30, 170, 170},
                                            {40, 90, 225},
                                            {140, 60, 205},
                                            {245, 120, 190},
                                            {245, 245, 245},
                                            {125, 80, 45}}};
const std::array<Rgb, kAccessories> kAccessoryColors = {{{0, 0, 0},
                                                         {20, 20, 20},
                                                         {255, 255, 140},
                                                         {0, 255, 255},
                                                         {255, 0, 140},
                                                         {180, 180, 255}}};
const std::array<Rgb, kBackgrounds> kBackgroundColors = {{{170, 210, 140},
                                                          {110, 160, 200},
                                                          {200, 150, 170},
                                                          {215, 190, 120},
                                                          {180, 240, 210},
                                                          {70, 110, 80},
                                                          {160, 90, 80},
                                                          {40, 45, 80},
                                                          {140, 190, 250},
                                                          {180, 170, 130}}};
const Rgb kHeadColor = {255, 214, 170};

Rgb dark(const Rgb& c) {
    Rgb out{};
    for (int i = 0; i < 3; ++i) out[i] = static_cast<std::uint8_t>(std::lround(c[i] * 0.55));
    return out;
}

namespace {

struct ShapeGeom {
    int half_w, half_h;
    int shoulder, hip;
};

// Half extents in base units (a 32x32 grid), shoulder and hip half spans.
constexpr std::array<ShapeGeom, kShapes> kGeom = {{{4, 5, 4, 3},
                                                   {6, 4, 6, 4},
                                                   {3, 6, 3, 2},
                                                   {5, 6, 4, 2},
                                                   {5, 6, 4, 3},
                                                   {5, 6, 5, 1},
                                                   {5, 6, 3, 1},
                                                   {6, 5, 6, 1}}};

struct PoseBase {
    double left_arm, right_arm, leg;
};
constexpr std::array<PoseBase, kPoses> kPoseBase = {{{0.35, 0.35, 0.15},
                                                     {0.35, 2.6, 0.15},
                                                     {2.5, 2.5, 0.15},
                                                     {1.57, 1.57, 0.15},
                                                     {1.57, 0.35, 0.6},
                                                     {2.45, 2.45, 0.6}}};

constexpr double kArmLength = 6.0;
constexpr double kLegLength = 5.0;
constexpr double kHeadRadius = 3.0;
constexpr int kCenterX = 16;
constexpr int kCenterY = 18;

bool torso_inside(int shape, double lx, double ly) {
    const auto& g = kGeom[shape];
    const double a = g.half_w, b = g.half_h;
    switch (shape) {
        case 0:
        case 1:
        case 2:
            return std::abs(lx) < a && std::abs(ly) < b;
        case 3:
            return (lx / a) * (lx / a) + (ly / b) * (ly / b) <= 1.0;
        case 4:
            return std::abs(ly) < b && std::abs(lx) <= a * (ly + b) / (2.0 * b);
        case 5:
            return std::abs(ly) < b && std::abs(lx) <= a * (b - ly) / (2.0 * b);
        case 6:
            return std::abs(lx) / a + std::abs(ly) / b <= 1.0;
        default: {
            const double bottom = 2.0;
            return std::abs(ly) < b && std::abs(lx) <= bottom + (a - bottom) * (b - ly) / (2.0 * b);
        }
    }
}

double segment_distance(double px, double py, double x0, double y0, double x1, double y1) {
    const double vx = x1 - x0, vy = y1 - y0;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - x0) * vx + (py - y0) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (x0 + t * vx), dy = py - (y0 + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

struct Limb {
    double x0, y0, x1, y1;
};

struct Figure {
    int cx, cy;
    double hx, hy;
    std::array<Limb, 4> limbs;  // left arm, right arm, left leg, right leg
};

Figure layout(const IdentitySpec& id, const SceneSpec& sc) {
    const auto& g = kGeom[id.body_shape];
    Figure f{};
    f.cx = kCenterX + sc.dx;
    f.cy = kCenterY + sc.dy;
    const double sy = f.cy - g.half_h + 2.0;
    const double hipy = f.cy + g.half_h - 1.0;
    auto limb = [](double x, double y, double angle, double len, int side) {
        return Limb{x, y, x + side * std::sin(angle) * len, y + std::cos(angle) * len};
    };
    f.limbs[0] = limb(f.cx - g.shoulder, sy, sc.joints[0], kArmLength, -1);
    f.limbs[1] = limb(f.cx + g.shoulder, sy, sc.joints[1], kArmLength, +1);
    f.limbs[2] = limb(f.cx - g.hip, hipy, sc.joints[2], kLegLength, -1);
    f.limbs[3] = limb(f.cx + g.hip, hipy, sc.joints[3], kLegLength, +1);
    f.hx = f.cx + std::round(2.0 * std::sin(sc.joints[4]));
    f.hy = f.cy - g.half_h - 1.0 - kHeadRadius;
    return f;
}

enum class Part { Background, Limb, Torso, Head, Accessory };

bool accessory_inside(int acc, double bx, double by, double hx, double hy) {
    switch (acc) {
        case 1:
            return bx >= hx - 3.5 && bx <= hx + 3.5 && by >= hy - 5.0 && by <= hy - 2.0;
        case 2:
            return bx >= hx - 3.5 && bx <= hx + 3.5 && by >= hy - 5.5 && by <= hy - 4.0;
        case 3:
            return std::abs(bx - hx) <= 0.5 && by >= hy - 7.0 && by <= hy - 2.5;
        case 4:
            return bx >= hx + 2.0 && bx <= hx + 5.0 && by >= hy - 4.0 && by <= hy - 1.5;
        case 5:
            return bx >= hx - 3.0 && bx <= hx + 3.0 && std::abs(by - hy) <= 0.75;
        default:
            return false;
    }
}

Part classify(const IdentitySpec& id, const Figure& f, double bx, double by) {
    if (accessory_inside(id.accessory, bx, by, f.hx, f.hy)) return Part::Accessory;
    const double dhx = bx - f.hx, dhy = by - f.hy;
    if (dhx * dhx + dhy * dhy <= kHeadRadius * kHeadRadius) return Part::Head;
    if (torso_inside(id.body_shape, bx - f.cx, by - f.cy)) return Part::Torso;
    for (const auto& l : f.limbs) {
        if (segment_distance(bx, by, l.x0, l.y0, l.x1, l.y1) <= 0.5) return Part::Limb;
    }
    return Part::Background;
}

void put(Image& img, int y, int x, const Rgb& c) {
    for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = static_cast<float>(c[ch]) / 255.0f;
}

void check_size(int size) {
    if (size < 32 || size % 32 != 0) throw InvalidInput(fmt::format("render size {} must be a multiple of 32", size));
}

}  // namespace

bool IdentitySpec::same_attributes(const IdentitySpec& o) const {
    return body_shape == o.body_shape && primary_color == o.primary_color && secondary_color == o.secondary_color &&
           accessory == o.accessory && texture_motif == o.texture_motif;
}

void IdentitySpec::validate() const {
    if (body_shape < 0 || body_shape >= kShapes || primary_color < 0 || primary_color >= kColors ||
        secondary_color < 0 || secondary_color >= kColors || accessory < 0 || accessory >= kAccessories ||
        texture_motif < 0 || texture_motif >= kTextures) {
        throw InvalidInput("identity attribute out of range");
    }
    if (primary_color == secondary_color) throw InvalidInput("primary and secondary colors must differ");
}

void SceneSpec::validate() const {
    if (pose < 0 || pose >= kPoses || background < 0 || background >= kBackgrounds) {
        throw InvalidInput("scene attribute out of range");
    }
    for (int i = 0; i < 4; ++i) {
        if (joints[i] < 0.0 || joints[i] > 2.9) throw InvalidInput("limb angle outside joint limits");
    }
    if (std::abs(joints[4]) > 0.5) throw InvalidInput("neck angle outside joint limits");
    if (std::abs(dx) > 3 || dy < -1 || dy > 1) throw InvalidInput("camera offset outside frame limits");
}

IdentitySpec make_identity(std::uint64_t dataset_seed, int id) {
    if (id < 0 || id >= kAttributeSpace) throw InvalidInput(fmt::format("identity id {} out of range", id));
    std::vector<int> perm(kAttributeSpace);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(dataset_seed, 0x1d));
    for (int i = kAttributeSpace - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    int k = perm[id];
    IdentitySpec s;
    s.id = id;
    s.texture_motif = k % kTextures;
    k /= kTextures;
    s.accessory = k % kAccessories;
    k /= kAccessories;
    const int sec = k % (kColors - 1);
    k /= kColors - 1;
    s.primary_color = k % kColors;
    k /= kColors;
    s.body_shape = k;
    s.secondary_color = sec >= s.primary_color ? sec + 1 : sec;
    return s;
}

SceneSpec scene_for_pose(int pose, int background, int dx, int dy) {
    SceneSpec s;
    s.pose = pose;
    s.background = background;
    s.dx = dx;
    s.dy = dy;
    const auto& b = kPoseBase[pose];
    s.joints = {b.left_arm, b.right_arm, b.leg, b.leg, 0.0};
    return s;
}

SceneSpec make_scene(std::uint64_t dataset_seed, int id, int scene_index) {
    Rng rng(derive_seed(dataset_seed, 0x5c00000000ULL + static_cast<std::uint64_t>(id), scene_index));
    const int pose = rng.uniform_int(kPoses);
    const int bg = rng.uniform_int(kBackgrounds);
    const int dx = rng.uniform_int(7) - 3;
    const int dy = rng.uniform_int(3) - 1;
    SceneSpec s = scene_for_pose(pose, bg, dx, dy);
    for (int i = 0; i < 2; ++i) s.joints[i] += rng.uniform(-0.12, 0.12);
    for (int i = 2; i < 4; ++i) s.joints[i] += rng.uniform(-0.05, 0.05);
    s.joints[4] = rng.uniform(-0.3, 0.3);
    return s;
}

std::vector<std::string> caption_tokens(const IdentitySpec& id, const SceneSpec& sc) {
    return {"shape",   kShapeNames[id.body_shape],        "body",    kColorNames[id.primary_color],
            "limbs",   kColorNames[id.secondary_color],   "texture", kTextureNames[id.texture_motif],
            "wearing", kAccessoryNames[id.accessory],     "pose",    kPoseNames[sc.pose],
            "bg",      kBackgroundNames[sc.background]};
}

std::vector<std::string> scene_tokens(const SceneSpec& sc) {
    return {"pose", kPoseNames[sc.pose], "bg", kBackgroundNames[sc.background]};
}

Render render(const IdentitySpec& id, const SceneSpec& sc, int size) {
    id.validate();
    sc.validate();
    check_size(size);
    const int u = size / 32;
    const Figure f = layout(id, sc);
    const auto& g = kGeom[id.body_shape];
    const Rgb prim = kPalette[id.primary_color];
    const Rgb prim_dark = dark(prim);
    const int torso_x0 = (f.cx - g.half_w) * u, torso_y0 = (f.cy - g.half_h) * u;

    Render out;
    out.image = Image(size, size);
    for (int py = 0; py < size; ++py)
        for (int px = 0; px < size; ++px) {
            const double bx = (px + 0.5) / u, by = (py + 0.5) / u;
            switch (classify(id, f, bx, by)) {
                case Part::Accessory:
                    put(out.image, py, px, kAccessoryColors[id.accessory]);
                    break;
                case Part::Head:
                    put(out.image, py, px, kHeadColor);
                    break;
                case Part::Torso: {
                    const int tx = (px - torso_x0) / u, ty = (py - torso_y0) / u;
                    bool marked = false;
                    switch (id.texture_motif) {
                        case 1:
                            marked = ty % 2 == 1;
                            break;
                        case 2:
                            marked = tx % 3 == 1 && ty % 3 == 1;
                            break;
                        case 3:
                            marked = (tx + ty) % 2 == 1;
                            break;
                        default:
                            break;
                    }
                    put(out.image, py, px, marked ? prim_dark : prim);
                    break;
                }
                case Part::Limb:
                    put(out.image, py, px, kPalette[id.secondary_color]);
                    break;
                case Part::Background:
                    put(out.image, py, px, kBackgroundColors[sc.background]);
                    break;
            }
        }

    // Skeleton: one-pixel lines on black.
    out.pose_map = Image(size, size);
    const double thin = 0.5 / u;
    const Rgb limb_colors[] = {{255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {255, 255, 0}};
    const Limb spine{static_cast<double>(f.cx), f.hy + kHeadRadius, static_cast<double>(f.cx),
                     static_cast<double>(f.cy + g.half_h - 1)};
    for (int py = 0; py < size; ++py)
        for (int px = 0; px < size; ++px) {
            const double bx = (px + 0.5) / u, by = (py + 0.5) / u;
            if (std::abs(bx - f.hx) <= 1.0 && std::abs(by - f.hy) <= 1.0) {
                put(out.pose_map, py, px, {255, 0, 255});
                continue;
            }
            for (int i = 0; i < 4; ++i) {
                const auto& l = f.limbs[i];
                if (segment_distance(bx, by, l.x0, l.y0, l.x1, l.y1) <= thin) put(out.pose_map, py, px, limb_colors[i]);
            }
            if (segment_distance(bx, by, spine.x0, spine.y0, spine.x1, spine.y1) <= thin) {
                put(out.pose_map, py, px, {255, 255, 255});
            }
        }
    out.caption = caption_tokens(id, sc);
    return out;
}

std::vector<bool> figure_mask(const IdentitySpec& id, const SceneSpec& sc, int size) {
    check_size(size);
    const int u = size / 32;
    const Figure f = layout(id, sc);
    std::vector<bool> mask(static_cast<std::size_t>(size) * size);
    for (int py = 0; py < size; ++py)
        for (int px = 0; px < size; ++px) {
            mask[static_cast<std::size_t>(py) * size + px] =
                classify(id, f, (px + 0.5) / u, (py + 0.5) / u) != Part::Background;
        }
    return mask;
}

Edit make_edit(const IdentitySpec& id, std::uint64_t seed) {
    Rng rng(seed);
    Edit e{id, {}};
    auto other = [&rng](int n, std::initializer_list<int> avoid) {
        for (;;) {
            const int v = rng.uniform_int(n);
            if (std::find(avoid.begin(), avoid.end(), v) == avoid.end()) return v;
        }
    };
    switch (rng.uniform_int(5)) {
        case 0:
            e.edited.primary_color = other(kColors, {id.primary_color, id.secondary_color});
            e.instruction = {"recolor", "body", kColorNames[e.edited.primary_color]};
            break;
        case 1:
            e.edited.secondary_color = other(kColors, {id.primary_color, id.secondary_color});
            e.instruction = {"recolor", "limbs", kColorNames[e.edited.secondary_color]};
            break;
        case 2:
            e.edited.texture_motif = other(kTextures, {id.texture_motif});
            e.instruction = {"change", "texture", kTextureNames[e.edited.texture_motif]};
            break;
        case 3:
            e.edited.body_shape = other(kShapes, {id.body_shape});
            e.instruction = {"change", "shape", kShapeNames[e.edited.body_shape]};
            break;
        default:
            e.edited.accessory = other(kAccessories, {id.accessory});
            e.instruction = {"change", "wearing", kAccessoryNames[e.edited.accessory]};
            break;
    }
    return e;
}

std::vector<std::string> vocabulary_symbols() {
    std::vector<std::string> v = {"shape", "body", "limbs", "texture", "wearing", "pose", "bg", "recolor", "change"};
    auto add = [&v](const auto& names) {
        for (const char* n : names) v.emplace_back(n);
    };
    add(kShapeNames);
    add(kColorNames);
    add(kTextureNames);
    add(kAccessoryNames);
    add(kPoseNames);
    add(kBackgroundNames);
    return v;
}

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::OneToOne:
            return "one_to_one";
        case Mode::OneToMany:
            return "one_to_many";
        default:
            return "editing_triples";
    }
}

Mode parse_mode(const std::string& s) {
    if (s == "one_to_one") return Mode::OneToOne;
    if (s == "one_to_many") return Mode::OneToMany;
    if (s == "editing_triples") return Mode::EditingTriples;
    throw InvalidInput("unknown dataset mode: " + s + " (one_to_one, one_to_many, editing_triples)");
}

std::vector<const Record*> Manifest::split(const std::string& name) const {
    std::vector<const Record*> out;
    for (const auto& r : records) {
        if (r.split == name) out.push_back(&r);
    }
    return out;
}

Manifest build_dataset(std::uint64_t seed, const DatasetCounts& counts, Mode mode, int image_size,
                       const std::filesystem::path& out_dir, bool overwrite) {
    namespace fs = std::filesystem;
    if (counts.train_identities <= 0 || counts.test_identities <= 0 || counts.scenes <= 0) {
        throw InvalidInput("dataset counts must be positive");
    }
    if (mode == Mode::OneToMany && counts.scenes < 2) throw InvalidInput("one_to_many needs at least 2 scenes");
    if (counts.train_identities + counts.test_identities > kAttributeSpace) {
        throw InvalidInput("more identities requested than distinct attribute tuples");
    }
    check_size(image_size);
    const fs::path manifest_path = out_dir / "manifest.tsv";
    if (fs::exists(manifest_path) && !overwrite) {
        throw InvalidInput("dataset already exists at " + out_dir.string() + "; pass the overwrite flag to replace it");
    }
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "poses");
    if (mode == Mode::EditingTriples) fs::create_directories(out_dir / "edits");

    Manifest m;
    m.mode = mode;
    m.image_size = image_size;
    m.seed = seed;
    m.root = out_dir;
    const int total = counts.train_identities + counts.test_identities;
    for (int id = 0; id < total; ++id) {
        const IdentitySpec spec = make_identity(seed, id);
        const std::string split = id < counts.train_identities ? "train" : "test";
        std::vector<SceneSpec> scenes;
        for (int k = 0; k < counts.scenes; ++k) {
            SceneSpec sc = make_scene(seed, id, k);
            for (int retry = 1; std::find(scenes.begin(), scenes.end(), sc) != scenes.end(); ++retry) {
                sc = make_scene(seed, id, k + 1000 * retry);
            }
            scenes.push_back(sc);
        }
        for (int k = 0; k < counts.scenes; ++k) {
            const Render r = render(spec, scenes[k], image_size);
            const std::string image = fmt::format("images/id{:05d}_s{}.png", id, k);
            const std::string pose = fmt::format("poses/id{:05d}_s{}.png", id, k);
            save_png(r.image, out_dir / image);
            save_png(r.pose_map, out_dir / pose);
            Record rec;
            rec.identity_id = id;
            rec.group = id;
            rec.split = split;
            rec.pose_path = pose;
            if (mode == Mode::EditingTriples) {
                const Edit e = make_edit(spec, derive_seed(seed, 0xed17 + static_cast<std::uint64_t>(id), k));
                const Render edited = render(e.edited, scenes[k], image_size);
                const std::string target = fmt::format("edits/id{:05d}_s{}.png", id, k);
                save_png(edited.image, out_dir / target);
                rec.image_path = target;
                rec.ref_path = image;
                rec.caption = join_tokens(edited.caption);
                rec.instruction = join_tokens(e.instruction);
            } else {
                rec.image_path = image;
                rec.ref_path = mode == Mode::OneToOne
                                   ? image
                                   : fmt::format("images/id{:05d}_s{}.png", id, (k + 1) % counts.scenes);
                rec.caption = join_tokens(r.caption);
                rec.instruction = join_tokens(scene_tokens(scenes[k]));
            }
            m.records.push_back(std::move(rec));
        }
    }
    {
        std::ofstream vf(out_dir / "vocab.txt");
        for (const auto& s : vocabulary_symbols()) vf << s << '\n';
    }
    write_manifest(m, manifest_path);
    return m;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write manifest: " + path.string());
    f << fmt::format("#remix-manifest v1 mode={} image_size={} seed={}\n", mode_name(m.mode), m.image_size, m.seed);
    f << "#identity_id\timage_path\tpose_path\tcaption\tgroup\tsplit\tinstruction\tref_path\n";
    for (const auto& r : m.records) {
        f << r.identity_id << '\t' << r.image_path << '\t' << r.pose_path << '\t' << r.caption << '\t' << r.group
          << '\t' << r.split << '\t' << r.instruction << '\t' << r.ref_path << '\n';
    }
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot read manifest: " + path.string());
    Manifest m;
    m.root = path.parent_path();
    std::string line;
    if (!std::getline(f, line) || line.rfind("#remix-manifest v1", 0) != 0) {
        throw VersionMismatch("manifest header missing or not version 1: " + path.string());
    }
    std::istringstream head(line.substr(std::string("#remix-manifest v1").size()));
    std::string kv;
    while (head >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
        if (k == "mode") m.mode = parse_mode(v);
        if (k == "image_size") m.image_size = std::stoi(v);
        if (k == "seed") m.seed = std::stoull(v);
    }
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cols;
        std::string col;
        std::istringstream in(line);
        while (std::getline(in, col, '\t')) cols.push_back(col);
        if (cols.size() == 7) cols.emplace_back();
        if (cols.size() != 8) throw FormatError(fmt::format("{}:{}: expected 8 fields", path.string(), lineno));
        Record r;
        try {
            r.identity_id = std::stoi(cols[0]);
            r.group = std::stoi(cols[4]);
        } catch (const std::exception&) {
            throw FormatError(fmt::format("{}:{}: bad integer field", path.string(), lineno));
        }
        r.image_path = cols[1];
        r.pose_path = cols[2];
        r.caption = cols[3];
        r.split = cols[5];
        r.instruction = cols[6];
        r.ref_path = cols[7];
        m.records.push_back(std::move(r));
    }
    return m;
}

}  // namespace remix::synth
