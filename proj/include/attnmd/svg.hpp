#pragma once

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "attnmd/linalg.hpp"

namespace attnmd {

/// One plotted curve; err, when nonempty, draws a +-err band behind the line.
struct SvgSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> err;
};

struct SvgStyle {
    int width = 640;
    int height = 420;
    bool log_x = false;
    bool log_y = false;
    std::string title;
    std::string x_label;
    std::string y_label;
};

namespace detail {

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

inline const char* svg_color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    return palette[i % 8];
}

}  // namespace detail

/// Self-contained deterministic SVG line plot. Output depends only on the
/// inputs, so reruns are byte-identical.
inline std::string emit_svg(const std::vector<SvgSeries>& series, const SvgStyle& style = {}) {
    require(!series.empty(), "emit_svg: no series");
    for (const SvgSeries& s : series) {
        require(!s.x.empty() && s.x.size() == s.y.size(), "emit_svg: malformed series");
        require(s.err.empty() || s.err.size() == s.y.size(), "emit_svg: err length mismatch");
    }

    const double margin_l = 64, margin_r = 16, margin_t = 34, margin_b = 46;
    const double plot_w = style.width - margin_l - margin_r;
    const double plot_h = style.height - margin_t - margin_b;

    const auto tx = [&](double v) { return style.log_x ? std::log10(v) : v; };
    const auto ty = [&](double v) { return style.log_y ? std::log10(std::max(v, 1e-300)) : v; };

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const SvgSeries& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double lo = s.err.empty() ? s.y[i] : s.y[i] - s.err[i];
            const double hi = s.err.empty() ? s.y[i] : s.y[i] + s.err[i];
            if (style.log_y && hi <= 0.0) continue;
            xmin = std::min(xmin, tx(s.x[i]));
            xmax = std::max(xmax, tx(s.x[i]));
            ymin = std::min(ymin, ty(style.log_y ? std::max(lo, 1e-16) : lo));
            ymax = std::max(ymax, ty(hi));
        }
    }
    if (xmax <= xmin) xmax = xmin + 1.0;
    if (ymax <= ymin) ymax = ymin + 1.0;

    const auto px = [&](double v) { return margin_l + (tx(v) - xmin) / (xmax - xmin) * plot_w; };
    const auto py = [&](double v) {
        return margin_t + plot_h - (ty(v) - ymin) / (ymax - ymin) * plot_h;
    };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << style.width << "\" height=\""
        << style.height << "\" viewBox=\"0 0 " << style.width << ' ' << style.height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // axes and ticks
    out << "<g stroke=\"#333\" stroke-width=\"1\">\n";
    out << "<line x1=\"" << detail::svg_num(margin_l) << "\" y1=\"" << detail::svg_num(margin_t)
        << "\" x2=\"" << detail::svg_num(margin_l) << "\" y2=\""
        << detail::svg_num(margin_t + plot_h) << "\"/>\n";
    out << "<line x1=\"" << detail::svg_num(margin_l) << "\" y1=\""
        << detail::svg_num(margin_t + plot_h) << "\" x2=\"" << detail::svg_num(margin_l + plot_w)
        << "\" y2=\"" << detail::svg_num(margin_t + plot_h) << "\"/>\n";
    out << "</g>\n";
    const int n_ticks = 5;
    out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
    for (int i = 0; i <= n_ticks; ++i) {
        const double fx = xmin + (xmax - xmin) * i / n_ticks;
        const double fy = ymin + (ymax - ymin) * i / n_ticks;
        const double vx = style.log_x ? std::pow(10.0, fx) : fx;
        const double vy = style.log_y ? std::pow(10.0, fy) : fy;
        char label[32];
        std::snprintf(label, sizeof(label), "%.3g", vx);
        out << "<text x=\"" << detail::svg_num(margin_l + plot_w * i / n_ticks) << "\" y=\""
            << detail::svg_num(margin_t + plot_h + 16) << "\" text-anchor=\"middle\">" << label
            << "</text>\n";
        std::snprintf(label, sizeof(label), "%.3g", vy);
        out << "<text x=\"" << detail::svg_num(margin_l - 6) << "\" y=\""
            << detail::svg_num(margin_t + plot_h - plot_h * i / n_ticks + 4)
            << "\" text-anchor=\"end\">" << label << "</text>\n";
    }
    if (!style.title.empty())
        out << "<text x=\"" << detail::svg_num(margin_l + plot_w / 2) << "\" y=\"20\""
            << " text-anchor=\"middle\" font-size=\"14\">" << style.title << "</text>\n";
    if (!style.x_label.empty())
        out << "<text x=\"" << detail::svg_num(margin_l + plot_w / 2) << "\" y=\""
            << detail::svg_num(style.height - 8) << "\" text-anchor=\"middle\">" << style.x_label
            << "</text>\n";
    if (!style.y_label.empty())
        out << "<text x=\"14\" y=\"" << detail::svg_num(margin_t + plot_h / 2)
            << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
            << detail::svg_num(margin_t + plot_h / 2) << ")\">" << style.y_label << "</text>\n";
    out << "</g>\n";

    // error bands first so lines draw on top
    for (std::size_t si = 0; si < series.size(); ++si) {
        const SvgSeries& s = series[si];
        if (s.err.empty()) continue;
        out << "<polygon fill=\"" << detail::svg_color(si) << "\" fill-opacity=\"0.15\" "
            << "stroke=\"none\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            out << detail::svg_num(px(s.x[i])) << ',' << detail::svg_num(py(s.y[i] + s.err[i]))
                << ' ';
        for (std::size_t i = s.x.size(); i-- > 0;) {
            const double lo = style.log_y ? std::max(s.y[i] - s.err[i], 1e-16) : s.y[i] - s.err[i];
            out << detail::svg_num(px(s.x[i])) << ',' << detail::svg_num(py(lo)) << ' ';
        }
        out << "\"/>\n";
    }
    for (std::size_t si = 0; si < series.size(); ++si) {
        const SvgSeries& s = series[si];
        out << "<polyline fill=\"none\" stroke=\"" << detail::svg_color(si)
            << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            out << detail::svg_num(px(s.x[i])) << ',' << detail::svg_num(py(s.y[i])) << ' ';
        out << "\"/>\n";
    }
    // legend
    out << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const double lx = margin_l + plot_w - 150;
        const double ly = margin_t + 10 + 16.0 * static_cast<double>(si);
        out << "<line x1=\"" << detail::svg_num(lx) << "\" y1=\"" << detail::svg_num(ly)
            << "\" x2=\"" << detail::svg_num(lx + 18) << "\" y2=\"" << detail::svg_num(ly)
            << "\" stroke=\"" << detail::svg_color(si) << "\" stroke-width=\"1.5\"/>\n";
        out << "<text x=\"" << detail::svg_num(lx + 24) << "\" y=\"" << detail::svg_num(ly + 4)
            << "\">" << series[si].name << "</text>\n";
    }
    out << "</g>\n</svg>\n";
    return out.str();
}

}  // namespace attnmd
