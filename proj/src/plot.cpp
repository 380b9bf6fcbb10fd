#include "remix/plot.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "remix/error.hpp"

namespace remix {

namespace {

constexpr int kWidth = 640, kHeight = 400;
constexpr int kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<':
                out += "&lt;";
                break;
            case '>':
                out += "&gt;";
                break;
            case '&':
                out += "&amp;";
                break;
            default:
                out += c;
        }
    }
    return out;
}

std::ofstream open_svg(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    f << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" )"
                     R"(font-size="12">)"
                     "\n",
                     kWidth, kHeight);
    f << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n';
    return f;
}

void axes(std::ofstream& f, const std::string& title, const std::string& xl, const std::string& yl, double y0,
          double y1) {
    const int pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    f << fmt::format(R"(<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>)", kLeft + pw / 2,
                     escape(title))
      << '\n';
    f << fmt::format(R"(<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>)", kLeft, kTop, pw,
                     ph)
      << '\n';
    for (int i = 0; i <= 4; ++i) {
        const double v = y0 + (y1 - y0) * i / 4.0;
        const double y = kTop + ph - ph * i / 4.0;
        f << fmt::format(R"(<text x="{}" y="{:.1f}" text-anchor="end">{:.3g}</text>)", kLeft - 6, y + 4, v) << '\n';
        f << fmt::format(R"(<line x1="{}" x2="{}" y1="{:.1f}" y2="{:.1f}" stroke="#ddd"/>)", kLeft, kLeft + pw, y, y)
          << '\n';
    }
    f << fmt::format(R"(<text x="{}" y="{}" text-anchor="middle">{}</text>)", kLeft + pw / 2, kHeight - 12,
                     escape(xl))
      << '\n';
    f << fmt::format(R"svg(<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>)svg",
                     kTop + ph / 2, kTop + ph / 2, escape(yl))
      << '\n';
}

}  // namespace

void write_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::filesystem::path& path) {
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw InvalidInput("series " + s.name + " has mismatched x/y lengths");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;

    auto f = open_svg(path);
    axes(f, title, x_label, y_label, y0, y1);
    const int pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    f << fmt::format(R"(<text x="{}" y="{}" text-anchor="start">{:.4g}</text>)", kLeft, kTop + ph + 16, x0) << '\n';
    f << fmt::format(R"(<text x="{}" y="{}" text-anchor="end">{:.4g}</text>)", kLeft + pw, kTop + ph + 16, x1)
      << '\n';
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kColors[si % std::size(kColors)];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            const double px = kLeft + pw * (s.x[i] - x0) / (x1 - x0);
            const double py = kTop + ph - ph * (s.y[i] - y0) / (y1 - y0);
            pts += fmt::format("{:.1f},{:.1f} ", px, py);
        }
        f << fmt::format(R"(<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>)", color, pts) << '\n';
        const int ly = kTop + 10 + 18 * static_cast<int>(si);
        f << fmt::format(R"(<line x1="{}" x2="{}" y1="{}" y2="{}" stroke="{}" stroke-width="3"/>)", kWidth - kRight + 10,
                         kWidth - kRight + 30, ly, ly, color)
          << '\n';
        f << fmt::format(R"(<text x="{}" y="{}">{}</text>)", kWidth - kRight + 36, ly + 4, escape(s.name)) << '\n';
    }
    f << "</svg>\n";
}

void write_metrics_plot(const MetricsTable& table, const std::string& title, const std::filesystem::path& path) {
    const char* metrics[] = {"id_sim", "img_sim", "instr_sim"};
    double y0 = 0.0, y1 = 1.0;
    for (const auto& r : table.rows) {
        if (r.missing) continue;
        for (double v : {r.id_sim, r.img_sim, r.instr_sim}) y0 = std::min(y0, v);
    }
    auto f = open_svg(path);
    axes(f, title, "metric", "score", y0, y1);
    const int pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    const int groups = 3;
    const int nv = std::max<int>(1, static_cast<int>(table.rows.size()));
    const double gw = static_cast<double>(pw) / groups;
    const double bw = gw * 0.8 / nv;
    const double zero_y = kTop + ph - ph * (0.0 - y0) / (y1 - y0);
    for (int g = 0; g < groups; ++g) {
        f << fmt::format(R"(<text x="{:.1f}" y="{}" text-anchor="middle">{}</text>)", kLeft + gw * (g + 0.5),
                         kTop + ph + 16, metrics[g])
          << '\n';
        for (int v = 0; v < nv && v < static_cast<int>(table.rows.size()); ++v) {
            const auto& r = table.rows[v];
            const double x = kLeft + gw * g + gw * 0.1 + bw * v;
            if (r.missing) {
                f << fmt::format(R"(<text x="{:.1f}" y="{:.1f}" font-size="10" text-anchor="middle">n/a</text>)",
                                 x + bw / 2, zero_y - 4)
                  << '\n';
                continue;
            }
            const double val = g == 0 ? r.id_sim : g == 1 ? r.img_sim : r.instr_sim;
            const double y = kTop + ph - ph * (val - y0) / (y1 - y0);
            f << fmt::format(R"(<rect x="{:.1f}" y="{:.1f}" width="{:.1f}" height="{:.1f}" fill="{}"/>)", x,
                             std::min(y, zero_y), bw * 0.95, std::abs(zero_y - y), kColors[v % std::size(kColors)])
              << '\n';
        }
    }
    for (int v = 0; v < static_cast<int>(table.rows.size()); ++v) {
        const int ly = kTop + 10 + 18 * v;
        f << fmt::format(R"(<rect x="{}" y="{}" width="16" height="10" fill="{}"/>)", kWidth - kRight + 10, ly - 5,
                         kColors[v % std::size(kColors)])
          << '\n';
        f << fmt::format(R"(<text x="{}" y="{}">{}</text>)", kWidth - kRight + 32, ly + 4,
                         escape(table.rows[v].variant + (table.rows[v].missing ? " (missing)" : "")))
          << '\n';
    }
    f << "</svg>\n";
}

}  // namespace remix
