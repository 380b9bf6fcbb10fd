#include "remix/checkpoint.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "remix/error.hpp"

namespace remix {

namespace {

constexpr char kMagic[8] = {'R', 'M', 'X', 'C', 'K', 'P', 'T', '\0'};

template <class T>
T to_le(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}
    template <class T>
    void put(T v) {
        v = to_le(v);
        os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void str(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        os_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void array(const NamedArray& a) {
        str(a.name);
        put<std::uint32_t>(a.rows);
        put<std::uint32_t>(a.cols);
        put<std::uint8_t>(1);  // element type: f64
        for (double v : a.values) put<double>(v);
    }

private:
    std::ostream& os_;
};

class Reader {
public:
    Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
    template <class T>
    T get() {
        T v{};
        is_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!is_) throw FormatError("truncated checkpoint: " + path_);
        return to_le(v);
    }
    std::string str() {
        const auto n = get<std::uint32_t>();
        if (n > (1u << 20)) throw FormatError("implausible string length in checkpoint: " + path_);
        std::string s(n, '\0');
        is_.read(s.data(), n);
        if (!is_) throw FormatError("truncated checkpoint: " + path_);
        return s;
    }
    NamedArray array() {
        NamedArray a;
        a.name = str();
        a.rows = static_cast<int>(get<std::uint32_t>());
        a.cols = static_cast<int>(get<std::uint32_t>());
        if (get<std::uint8_t>() != 1) throw FormatError("unsupported element type for " + a.name);
        const std::size_t n = static_cast<std::size_t>(a.rows) * a.cols;
        if (n > (std::size_t{1} << 32)) throw FormatError("implausible array size in checkpoint: " + path_);
        a.values.resize(n);
        for (auto& v : a.values) v = get<double>();
        return a;
    }

private:
    std::istream& is_;
    std::string path_;
};

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

std::optional<std::string> Checkpoint::config_value(const std::string& key) const {
    for (const auto& [k, v] : config) {
        if (k == key) return v;
    }
    return std::nullopt;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw FormatError("cannot write checkpoint: " + path.string());
        f.write(kMagic, sizeof(kMagic));
        Writer w(f);
        w.put<std::uint32_t>(Checkpoint::kVersion);
        w.str(ck.stage);
        w.put<std::uint64_t>(ck.step);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.config.size()));
        for (const auto& [k, v] : ck.config) {
            w.str(k);
            w.str(v);
        }
        w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.arrays.size()));
        for (const auto& a : ck.arrays) w.array(a);
        w.put<std::uint8_t>(ck.optimizer ? 1 : 0);
        if (ck.optimizer) {
            w.put<std::int64_t>(ck.optimizer->t);
            w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.optimizer->arrays.size()));
            for (const auto& a : ck.optimizer->arrays) w.array(a);
        }
        if (!f) throw FormatError("write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingCheckpoint("checkpoint not found: " + path.string());
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingCheckpoint("cannot open checkpoint: " + path.string());
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("not a checkpoint (bad magic): " + path.string());
    }
    Reader r(f, path.string());
    const auto version = r.get<std::uint32_t>();
    if (version != Checkpoint::kVersion) {
        throw VersionMismatch(fmt::format("checkpoint {} has format version {}, this build reads version {}; "
                                          "re-run the producing stage or convert the file",
                                          path.string(), version, Checkpoint::kVersion));
    }
    Checkpoint ck;
    ck.stage = r.str();
    ck.step = r.get<std::uint64_t>();
    const auto nc = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < nc; ++i) {
        std::string k = r.str();
        std::string v = r.str();
        ck.config.emplace_back(std::move(k), std::move(v));
    }
    const auto na = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < na; ++i) ck.arrays.push_back(r.array());
    if (r.get<std::uint8_t>()) {
        OptimizerState os;
        os.t = r.get<std::int64_t>();
        const auto n = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < n; ++i) os.arrays.push_back(r.array());
        ck.optimizer = std::move(os);
    }
    return ck;
}

void append_params(Checkpoint& ck, const nn::ParamStore& ps) {
    for (const auto& [name, v] : ps.items()) {
        ck.arrays.push_back({name, v.rows(), v.cols(), {v.data().begin(), v.data().end()}});
    }
}

void restore_params(const Checkpoint& ck, nn::ParamStore& ps) {
    for (const auto& [name, v] : ps.items()) {
        const NamedArray* a = ck.find(name);
        if (!a) throw FormatError(fmt::format("checkpoint (stage {}) lacks parameter {}", ck.stage, name));
        if (a->rows != v.rows() || a->cols != v.cols()) {
            throw FormatError(fmt::format("parameter {} has shape [{},{}] in checkpoint, model expects [{},{}]", name,
                                          a->rows, a->cols, v.rows(), v.cols()));
        }
        ag::Var p = v;
        std::copy(a->values.begin(), a->values.end(), p.data().begin());
    }
}

OptimizerState optimizer_state(const nn::Adam& opt) {
    OptimizerState os;
    os.t = opt.steps_taken();
    for (auto& [name, values] : opt.state()) {
        os.arrays.push_back({name, 1, static_cast<int>(values.size()), values});
    }
    return os;
}

}  // namespace remix
