#include "remix/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "remix/error.hpp"
#include "remix/inference.hpp"
#include "remix/probe.hpp"

namespace remix {

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

struct Stats {
    double mean = 0.0;
    double std = 0.0;
};

Stats stats(const std::vector<double>& v) {
    Stats s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    for (double x : v) s.std += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(v.size()));
    return s;
}

std::string seed_set(const std::vector<int>& seeds) {
    std::string out;
    for (int s : seeds) out += (out.empty() ? "" : " ") + std::to_string(s);
    return out;
}

}  // namespace

double identity_similarity(const IdentityEncoder& enc, const Image& a, const Image& b) {
    const auto ea = extract_identity(enc, a);
    const auto eb = extract_identity(enc, b);
    return cosine(ea, eb);
}

double image_similarity(const SemanticEncoder& enc, const Image& a, const Image& b) {
    validate_image(a);
    validate_image(b);
    ag::NoGradGuard guard;
    const ag::Var fa = enc.pooled(a);
    const ag::Var fb = enc.pooled(b);
    return cosine(fa.data(), fb.data());
}

double instruction_alignment(const Image& img, std::span<const std::string> caption,
                             std::vector<std::string>* warnings) {
    const auto agreement = synth::caption_agreement(synth::probe(img), caption);
    if (warnings) {
        for (const auto& u : agreement.unknown) warnings->push_back("unknown caption token: " + u);
    }
    return agreement.score();
}

const MetricsRow* MetricsTable::find(const std::string& variant) const {
    for (const auto& r : rows) {
        if (r.variant == variant) return &r;
    }
    return nullptr;
}

std::vector<BenchmarkCase> benchmark_cases(const synth::Manifest& m, int identities, int prompts, int refs) {
    if (identities < 1 || prompts < 1 || refs < 1) throw InvalidInput("benchmark counts must be positive");
    std::map<int, std::vector<const synth::Record*>> by_id;
    for (const auto* r : m.split("test")) by_id[r->identity_id].push_back(r);
    std::vector<BenchmarkCase> out;
    int taken = 0;
    for (const auto& [id, recs] : by_id) {
        if (taken == identities) break;
        if (static_cast<int>(recs.size()) < refs + prompts) {
            throw InvalidInput(fmt::format("identity {} has {} scenes; benchmark needs {}", id, recs.size(),
                                           refs + prompts));
        }
        std::vector<Image> ref_images;
        for (int i = 0; i < refs; ++i) ref_images.push_back(load_png(m.resolve(recs[i]->image_path)));
        for (int k = 0; k < prompts; ++k) {
            const auto* r = recs[refs + k];
            BenchmarkCase c;
            c.identity = id;
            c.refs = ref_images;
            c.pose = load_png(m.resolve(r->pose_path));
            c.prompt = split_tokens(r->instruction);
            c.caption = split_tokens(r->caption);
            out.push_back(std::move(c));
        }
        ++taken;
    }
    if (taken < identities) {
        throw InvalidInput(fmt::format("manifest has {} test identities, benchmark asks for {}", taken, identities));
    }
    return out;
}

namespace {

// Variant names such as "w/o DVE" as directory names.
std::string path_safe(const std::string& name) {
    std::string out;
    for (char ch : name) out += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
    return out;
}

}  // namespace

MetricsTable run_benchmark(const std::vector<Variant>& variants, const std::vector<BenchmarkCase>& cases,
                           const std::vector<int>& seeds, int steps, const Models& judge,
                           const std::filesystem::path& sample_dir) {
    if (seeds.empty()) throw InvalidInput("benchmark needs at least one seed");
    MetricsTable table;
    for (const auto& v : variants) {
        MetricsRow row;
        row.variant = v.name;
        row.seed_set = seed_set(seeds);
        if (!v.models) {
            row.missing = true;
            table.rows.push_back(row);
            continue;
        }
        std::vector<double> id_by_seed, img_by_seed, instr_by_seed;
        double id_all = 0, img_all = 0, instr_all = 0;
        int n = 0;
        for (int seed : seeds) {
            double id_s = 0, img_s = 0, instr_s = 0;
            for (std::size_t ci = 0; ci < cases.size(); ++ci) {
                const auto& c = cases[ci];
                ConditionBundle b;
                b.dense_refs = c.refs;
                b.sparse_map = c.pose;
                b.instruction = c.prompt;
                b.skip_t = v.skip_t;
                b.alpha = v.models->config().get_real("alpha");
                b.beta = v.models->config().get_real("beta");
                b.seed = derive_seed(static_cast<std::uint64_t>(seed), ci);
                b.use_connector = false;
                b.use_dve = v.use_dve;
                b.use_sve = v.use_sve;
                b.use_global = v.use_global;
                const SampleResult r = sample(*v.models, b, steps);
                double id = 0, img = 0;
                for (const auto& ref : c.refs) {
                    id += identity_similarity(judge.identity, r.generated, ref);
                    img += image_similarity(judge.semantic, r.generated, ref);
                }
                id /= static_cast<double>(c.refs.size());
                img /= static_cast<double>(c.refs.size());
                const double instr = instruction_alignment(r.generated, c.caption);
                id_s += id;
                img_s += img;
                instr_s += instr;
                if (!sample_dir.empty() && seed == seeds.front()) {
                    const auto dir = sample_dir / path_safe(v.name);
                    std::filesystem::create_directories(dir);
                    save_png(r.generated, dir / fmt::format("case{:03d}_id{}.png", ci, c.identity));
                }
            }
            const double nc = static_cast<double>(cases.size());
            id_by_seed.push_back(id_s / nc);
            img_by_seed.push_back(img_s / nc);
            instr_by_seed.push_back(instr_s / nc);
            id_all += id_s;
            img_all += img_s;
            instr_all += instr_s;
            n += static_cast<int>(cases.size());
        }
        row.n_samples = n;
        row.id_sim = id_all / n;
        row.img_sim = img_all / n;
        row.instr_sim = instr_all / n;
        row.id_sim_std = stats(id_by_seed).std;
        row.img_sim_std = stats(img_by_seed).std;
        row.instr_sim_std = stats(instr_by_seed).std;
        table.rows.push_back(row);
    }
    return table;
}

void write_metrics_csv(const MetricsTable& table, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    f << "variant,id_sim,img_sim,instr_sim,n_samples,seed_set,id_sim_std,img_sim_std,instr_sim_std\n";
    for (const auto& r : table.rows) {
        if (r.missing) {
            f << r.variant << ",MISSING,MISSING,MISSING,0," << r.seed_set << ",MISSING,MISSING,MISSING\n";
            continue;
        }
        f << fmt::format("{},{:.6f},{:.6f},{:.6f},{},{},{:.6f},{:.6f},{:.6f}\n", r.variant, r.id_sim, r.img_sim,
                         r.instr_sim, r.n_samples, r.seed_set, r.id_sim_std, r.img_sim_std, r.instr_sim_std);
    }
}

MetricsTable read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot read " + path.string());
    MetricsTable t;
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
        if (cols.size() != 9) throw FormatError("malformed metrics row in " + path.string());
        MetricsRow r;
        r.variant = cols[0];
        r.seed_set = cols[5];
        if (cols[1] == "MISSING") {
            r.missing = true;
        } else {
            r.id_sim = std::stod(cols[1]);
            r.img_sim = std::stod(cols[2]);
            r.instr_sim = std::stod(cols[3]);
            r.n_samples = std::stoi(cols[4]);
            r.id_sim_std = std::stod(cols[6]);
            r.img_sim_std = std::stod(cols[7]);
            r.instr_sim_std = std::stod(cols[8]);
        }
        t.rows.push_back(r);
    }
    return t;
}

}  // namespace remix
