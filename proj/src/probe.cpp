#include "remix/probe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <mutex>

#include "remix/data_synth.hpp"
#include "remix/error.hpp"

namespace remix::synth {

namespace {

enum ClassKind { kBg, kPal, kDark, kHead, kAcc, kNone };

struct ColorClass {
    ClassKind kind;
    int index;
    Rgb rgb;
};

const std::vector<ColorClass>& color_classes() {
    static const std::vector<ColorClass> classes = [] {
        std::vector<ColorClass> c;
        for (int i = 0; i < kBackgrounds; ++i) c.push_back({kBg, i, kBackgroundColors[i]});
        for (int i = 0; i < kColors; ++i) c.push_back({kPal, i, kPalette[i]});
        for (int i = 0; i < kColors; ++i) c.push_back({kDark, i, dark(kPalette[i])});
        c.push_back({kHead, 0, kHeadColor});
        for (int i = 1; i < kAccessories; ++i) c.push_back({kAcc, i, kAccessoryColors[i]});
        return c;
    }();
    return classes;
}

struct Labelled {
    int size = 0;
    int u = 1;
    std::vector<ClassKind> kind;
    std::vector<int> index;
};

Labelled label(const Image& img) {
    constexpr double kMaxDist2 = 45.0 * 45.0;
    const auto& classes = color_classes();
    Labelled out;
    out.size = img.width;
    out.u = std::max(1, img.width / 32);
    out.kind.resize(static_cast<std::size_t>(img.height) * img.width, kNone);
    out.index.resize(out.kind.size(), -1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double best = kMaxDist2;
            int arg = -1;
            for (std::size_t c = 0; c < classes.size(); ++c) {
                double d = 0.0;
                for (int ch = 0; ch < 3; ++ch) {
                    const double diff = img.at(y, x, ch) * 255.0 - classes[c].rgb[ch];
                    d += diff * diff;
                }
                if (d < best) {
                    best = d;
                    arg = static_cast<int>(c);
                }
            }
            if (arg >= 0) {
                const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
                out.kind[i] = classes[arg].kind;
                out.index[i] = classes[arg].index;
            }
        }
    return out;
}

struct TorsoStats {
    bool valid = false;
    double cx_off = 0, cy_off = 0;  // geometric centre minus bbox origin (prototypes only)
    double x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // bbox in base units (exclusive max)
    double fill = 0, cy_rel = 0;
};

TorsoStats torso_stats(const Labelled& L, int primary) {
    TorsoStats s;
    int n = 0, minx = L.size, maxx = -1, miny = L.size, maxy = -1;
    double sy = 0.0;
    for (int y = 0; y < L.size; ++y)
        for (int x = 0; x < L.size; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * L.size + x;
            if ((L.kind[i] == kPal || L.kind[i] == kDark) && L.index[i] == primary) {
                ++n;
                minx = std::min(minx, x);
                maxx = std::max(maxx, x);
                miny = std::min(miny, y);
                maxy = std::max(maxy, y);
                sy += y + 0.5;
            }
        }
    if (n == 0) return s;
    s.valid = true;
    const double u = L.u;
    s.x0 = minx / u;
    s.x1 = (maxx + 1) / u;
    s.y0 = miny / u;
    s.y1 = (maxy + 1) / u;
    const double area = (s.x1 - s.x0) * (s.y1 - s.y0) * u * u;
    s.fill = n / area;
    s.cy_rel = (sy / n / u - s.y0) / (s.y1 - s.y0);
    return s;
}

// Torso statistics of every body shape, rendered canonically at this size.
const std::vector<TorsoStats>& shape_prototypes(int size) {
    static std::mutex mu;
    static std::map<int, std::vector<TorsoStats>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(size);
    if (it != cache.end()) return it->second;
    std::vector<TorsoStats> protos;
    for (int s = 0; s < kShapes; ++s) {
        IdentitySpec id;
        id.body_shape = s;
        id.primary_color = 0;
        id.secondary_color = 1;
        const Render r = render(id, scene_for_pose(0, 0, 0, 0), size);
        TorsoStats t = torso_stats(label(r.image), 0);
        t.cx_off = 16.0 - t.x0;
        t.cy_off = 18.0 - t.y0;
        protos.push_back(t);
    }
    return cache.emplace(size, std::move(protos)).first->second;
}

// Shoulder span, hip span and half height per shape; mirrors the renderer.
constexpr std::array<std::array<int, 3>, kShapes> kLimbAnchors = {
    {{4, 3, 5}, {6, 4, 4}, {3, 2, 6}, {4, 2, 6}, {4, 3, 6}, {5, 1, 6}, {3, 1, 6}, {6, 1, 5}}};

}  // namespace

ProbeResult probe(const Image& img) {
    validate_image(img);
    if (img.width != img.height || img.width % 32 != 0) {
        throw InvalidInput("probe expects square images with size a multiple of 32");
    }
    const Labelled L = label(img);
    const double u = L.u;
    ProbeResult r;

    std::array<int, kBackgrounds> bg{};
    std::array<int, kColors> pal{}, drk{};
    std::array<int, kAccessories> acc{};
    for (std::size_t i = 0; i < L.kind.size(); ++i) {
        switch (L.kind[i]) {
            case kBg:
                ++bg[L.index[i]];
                break;
            case kPal:
                ++pal[L.index[i]];
                break;
            case kDark:
                ++drk[L.index[i]];
                break;
            case kAcc:
                ++acc[L.index[i]];
                break;
            default:
                break;
        }
    }
    auto argmax = [](const auto& a) { return static_cast<int>(std::max_element(a.begin(), a.end()) - a.begin()); };
    r.background = argmax(bg);

    const int dmax = argmax(drk);
    const int min_dark = static_cast<int>(3 * u * u);
    r.primary = drk[dmax] >= min_dark ? dmax : argmax(pal);
    if (pal[r.primary] + drk[r.primary] == 0) return r;
    {
        int best = -1, count = 0;
        for (int c = 0; c < kColors; ++c) {
            if (c != r.primary && pal[c] > count) {
                best = c;
                count = pal[c];
            }
        }
        r.secondary = best;
    }
    {
        int best = 0, count = static_cast<int>(2 * u * u) - 1;
        for (int a = 1; a < kAccessories; ++a) {
            if (acc[a] > count) {
                best = a;
                count = acc[a];
            }
        }
        r.accessory = best;
    }

    const TorsoStats t = torso_stats(L, r.primary);
    if (!t.valid) return r;
    {
        const auto& protos = shape_prototypes(L.size);
        double best = 1e300;
        for (int s = 0; s < kShapes; ++s) {
            const auto& p = protos[s];
            const double dw = (t.x1 - t.x0) - (p.x1 - p.x0), dh = (t.y1 - t.y0) - (p.y1 - p.y0);
            const double df = 10.0 * (t.fill - p.fill), dc = 10.0 * (t.cy_rel - p.cy_rel);
            const double d = 0.25 * (dw * dw + dh * dh) + df * df + dc * dc;
            if (d < best) {
                best = d;
                r.shape = s;
            }
        }
    }

    // Texture: share of dark pixels and how many torso rows are uniform.
    {
        int n = 0, dk = 0, rows = 0, pure = 0;
        for (int y = 0; y < L.size; ++y) {
            int rn = 0, rd = 0;
            for (int x = 0; x < L.size; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * L.size + x;
                if (L.index[i] != r.primary) continue;
                if (L.kind[i] == kPal) ++rn;
                if (L.kind[i] == kDark) {
                    ++rn;
                    ++rd;
                }
            }
            n += rn;
            dk += rd;
            if (rn >= 2) {
                ++rows;
                if (rd == 0 || rd == rn) ++pure;
            }
        }
        const double f = n ? static_cast<double>(dk) / n : 0.0;
        if (f < 0.03) {
            r.texture = 0;
        } else if (f < 0.3) {
            r.texture = 2;
        } else {
            r.texture = rows && static_cast<double>(pure) / rows > 0.6 ? 1 : 3;
        }
    }

    // Pose from limb pixels relative to the torso box.
    if (r.secondary >= 0 && r.shape >= 0) {
        const auto& proto = shape_prototypes(L.size)[r.shape];
        const double cx = t.x0 + proto.cx_off, cy = t.y0 + proto.cy_off;
        const double shoulder = kLimbAnchors[r.shape][0], hip = kLimbAnchors[r.shape][1];
        const double sy = cy - kLimbAnchors[r.shape][2] + 2.0;
        double ly = 0, ry = 0, lreach = 0, rreach = 0;
        int ln = 0, rn = 0, legs = 0;
        for (int y = 0; y < L.size; ++y)
            for (int x = 0; x < L.size; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * L.size + x;
                if (L.kind[i] != kPal || L.index[i] != r.secondary) continue;
                const double bx = (x + 0.5) / u, by = (y + 0.5) / u;
                if (by < t.y1) {
                    if (bx < cx - shoulder) {
                        ly += by - sy;
                        ++ln;
                    } else if (bx > cx + shoulder) {
                        ry += by - sy;
                        ++rn;
                    }
                } else if (by > t.y1 + 1.0) {
                    ++legs;
                    lreach = std::max(lreach, cx - bx);
                    rreach = std::max(rreach, bx - cx);
                }
            }
        auto arm = [](double sum, int n) {
            if (n == 0) return 0;  // hidden: treat as down
            const double m = sum / n;
            return m > 1.2 ? 0 : (m < -1.2 ? 2 : 1);  // 0 down, 1 horizontal, 2 up
        };
        const int la = arm(ly, ln), ra = arm(ry, rn);
        const int wide = legs > 0 && 0.5 * (lreach + rreach) > hip + 2.3 ? 1 : 0;
        static constexpr int kSignature[kPoses][3] = {{0, 0, 0}, {0, 2, 0}, {2, 2, 0},
                                                      {1, 1, 0}, {1, 0, 1}, {2, 2, 1}};
        int best = 1 << 20;
        for (int p = 0; p < kPoses; ++p) {
            const int d = (la != kSignature[p][0]) + (ra != kSignature[p][1]) + 2 * (wide != kSignature[p][2]);
            if (d < best) {
                best = d;
                r.pose = p;
            }
        }
    }
    return r;
}

namespace {

int find_name(const auto& names, const std::string& s) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (s == names[i]) return static_cast<int>(i);
    }
    return -1;
}

}  // namespace

Agreement caption_agreement(const ProbeResult& p, std::span<const std::string> caption) {
    Agreement a;
    for (std::size_t i = 0; i < caption.size(); ++i) {
        const std::string& role = caption[i];
        const bool has_value = i + 1 < caption.size();
        const std::string value = has_value ? caption[i + 1] : std::string();
        int want = -1, got = -1;
        if (role == "shape") {
            want = find_name(kShapeNames, value);
            got = p.shape;
        } else if (role == "body") {
            want = find_name(kColorNames, value);
            got = p.primary;
        } else if (role == "limbs") {
            want = find_name(kColorNames, value);
            got = p.secondary;
        } else if (role == "texture") {
            want = find_name(kTextureNames, value);
            got = p.texture;
        } else if (role == "wearing") {
            want = find_name(kAccessoryNames, value);
            got = p.accessory;
        } else if (role == "pose") {
            want = find_name(kPoseNames, value);
            got = p.pose;
        } else if (role == "bg") {
            want = find_name(kBackgroundNames, value);
            got = p.background;
        } else {
            ++a.total;
            a.unknown.push_back(role);
            continue;
        }
        ++a.total;
        if (want < 0) {
            if (has_value) a.unknown.push_back(value);
            if (has_value) ++i;
            continue;
        }
        ++i;
        if (want == got) ++a.satisfied;
    }
    return a;
}

}  // namespace remix::synth
