#include "remix/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "remix/error.hpp"

namespace remix {

const std::vector<ConfigKey>& config_schema() {
    using enum ValueType;
    static const std::vector<ConfigKey> schema = {
        {"seed", Int, "0", "master seed for data, init and sampling"},
        {"image_size", Int, "64", "rendered image side in pixels (multiple of 32)"},
        {"patch", Int, "8", "codec patch size p; latent channels are 3*p*p"},
        {"depth", Int, "8", "backbone MMDiT blocks"},
        {"model_dim", Int, "256", "backbone token width"},
        {"heads", Int, "8", "attention heads"},
        {"mlp_ratio", Int, "2", "MLP expansion factor"},
        {"text_dim", Int, "256", "text/semantic feature width D"},
        {"max_rows", Int, "64", "positional index bound (rows)"},
        {"max_cols", Int, "256", "positional index bound (cols)"},
        {"semantic_grid", Int, "4", "semantic tokens per side (M = grid^2)"},
        {"connector_d", Int, "4", "connector MMDiT blocks"},
        {"connector_l", Int, "8", "connector cross-attention layers"},
        {"control_n", Int, "4", "control-branch blocks N"},
        {"alpha", Real, "1.0", "dense injection strength"},
        {"beta", Real, "1.0", "sparse injection strength"},
        {"dve_hidden", Int, "56", "dense encoder hidden width"},
        {"lambda", Real, "0.2", "identity loss weight"},
        {"skip_t", Real, "0.5", "reference intensity coefficient at sampling"},
        {"steps", Int, "28", "Euler sampling steps"},
        {"max_refs", Int, "4", "largest number of references per sample"},
        {"batch", Int, "4", "samples per optimizer step"},
        {"lr_identity", Real, "0.002", "identity encoder learning rate"},
        {"lr_pretrain", Real, "0.0005", "backbone pretraining learning rate"},
        {"lr_connector", Real, "0.0005", "connector learning rate"},
        {"lr_ipcn", Real, "0.0003", "control branch learning rate"},
        {"iters_identity", Int, "2000", "identity encoder steps"},
        {"iters_pretrain", Int, "20000", "backbone pretraining steps"},
        {"iters_connector", Int, "5000", "connector steps"},
        {"iters_warmup", Int, "1000", "one-to-one warm-up steps"},
        {"iters_main", Int, "6000", "one-to-many steps"},
        {"iters_equivariant", Int, "1000", "shared-noise stage steps"},
        {"checkpoint_every", Int, "1000", "steps between checkpoints"},
        {"equivariant", Bool, "true", "run the shared-noise stage (false: continue one-to-many)"},
        {"id_loss", Bool, "true", "add the identity loss when the identity encoder is available"},
        {"id_loss_warmup", Bool, "false", "also apply the identity loss during warm-up"},
        {"use_dve", Bool, "true", "dense reference path"},
        {"use_sve", Bool, "true", "sparse pose path"},
        {"use_global", Bool, "true", "global visual token in the control branch"},
        {"train_identities", Int, "512", "training identities"},
        {"test_identities", Int, "64", "held-out identities"},
        {"scenes", Int, "6", "scenes per identity"},
        {"eval_identities", Int, "8", "benchmark identities"},
        {"eval_prompts", Int, "4", "benchmark prompts per identity"},
        {"eval_seeds", Text, "0,1,2,3,4", "benchmark sampling seeds"},
        {"eval_refs", Int, "1", "references per benchmark sample"},
        {"ipcn_seed", Int, "0", "seed of control-branch init and data order (independent runs over one backbone)"},
        {"sample_connector", Bool, "true", "sample: add connector values of each reference to the text stream"},
        {"probe_every", Int, "250", "steps between identity probes during control training (0 = off)"},
        {"probe_identities", Int, "8", "identities in the training-time probe set"},
        {"probe_steps", Int, "10", "sampling steps used by the probe"},
        {"data_dir", Text, "data", "dataset root (relative to the run root)"},
        {"run_dir", Text, "runs", "output root; REMIX_RUN_DIR overrides"},
    };
    return schema;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
    for (const auto& k : config_schema()) {
        if (k.name == name) return &k;
    }
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

const char* type_name(ValueType t) {
    switch (t) {
        case ValueType::Int:
            return "integer";
        case ValueType::Real:
            return "real";
        case ValueType::Bool:
            return "bool (true/false)";
        default:
            return "text";
    }
}

bool parse_bool(const std::string& v, bool& out) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        out = true;
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        out = false;
        return true;
    }
    return false;
}

// Normalised textual form so equal values hash equally.
std::string normalise(const ConfigKey& k, const std::string& raw) {
    const std::string v = trim(raw);
    auto fail = [&] {
        return ConfigError(fmt::format("config key '{}' expects {}, got '{}'", k.name, type_name(k.type), v));
    };
    switch (k.type) {
        case ValueType::Int: {
            std::size_t pos = 0;
            long long x = 0;
            try {
                x = std::stoll(v, &pos);
            } catch (const std::exception&) {
                throw fail();
            }
            if (pos != v.size()) throw fail();
            return std::to_string(x);
        }
        case ValueType::Real: {
            std::size_t pos = 0;
            double x = 0;
            try {
                x = std::stod(v, &pos);
            } catch (const std::exception&) {
                throw fail();
            }
            if (pos != v.size()) throw fail();
            return fmt::format("{}", x);
        }
        case ValueType::Bool: {
            bool b = false;
            if (!parse_bool(v, b)) throw fail();
            return b ? "true" : "false";
        }
        default:
            return v;
    }
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& k : config_schema()) values_[k.name] = normalise(k, k.default_value);
}

bool RunConfig::has_key(const std::string& key) const { return find_key(key) != nullptr; }

void RunConfig::set(const std::string& key, const std::string& value) {
    const ConfigKey* k = find_key(key);
    if (!k) throw ConfigError(fmt::format("unknown config key '{}'", key));
    values_[key] = normalise(*k, value);
}

long long RunConfig::get_int(const std::string& key) const { return std::stoll(values_.at(key)); }
double RunConfig::get_real(const std::string& key) const { return std::stod(values_.at(key)); }
bool RunConfig::get_bool(const std::string& key) const { return values_.at(key) == "true"; }
const std::string& RunConfig::get_text(const std::string& key) const { return values_.at(key); }

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::stringstream ss(values_.at(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("config key '{}' expects comma-separated integers", key));
        }
    }
    return out;
}

std::string RunConfig::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

std::string RunConfig::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return fmt::format("{:016x}", h);
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::map<std::string, int> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected key = value", origin, lineno));
        const std::string key = trim(line.substr(0, eq));
        if (auto it = seen.find(key); it != seen.end()) {
            throw ConfigError(fmt::format("{}:{}: duplicate key '{}' (first set on line {})", origin, lineno, key,
                                          it->second));
        }
        seen[key] = lineno;
        try {
            cfg.set(key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("{}:{}: {}", origin, lineno, e.what()));
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read config file: " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string kebab_to_snake(const std::string& s) {
    std::string out = s;
    std::replace(out.begin(), out.end(), '-', '_');
    return out;
}

std::string snake_to_kebab(const std::string& s) {
    std::string out = s;
    std::replace(out.begin(), out.end(), '_', '-');
    return out;
}

}  // namespace remix
