#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "svpipe/error.hpp"
#include "svpipe/stats.hpp"

namespace svpipe::stats {

namespace {

constexpr double kWidth = 480, kHeight = 360;
constexpr double kLeft = 60, kRight = 20, kTop = 36, kBottom = 48;

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

struct Range {
    double lo, hi;
};

Range padded(double lo, double hi) {
    if (hi - lo < 1e-12) {
        lo -= 1;
        hi += 1;
    }
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
}

class Canvas {
public:
    Canvas(Range x, Range y) : x_(x), y_(y) {
        out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
             << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
             << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    }

    double px(double x) const { return kLeft + (x - x_.lo) / (x_.hi - x_.lo) * (kWidth - kLeft - kRight); }
    double py(double y) const { return kHeight - kBottom - (y - y_.lo) / (y_.hi - y_.lo) * (kHeight - kTop - kBottom); }

    void axes(const std::string& title, const std::string& xl, const std::string& yl) {
        const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
        out_ << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
             << "</text>\n";
        out_ << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
             << "\" stroke=\"black\"/>\n";
        out_ << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
             << "\" stroke=\"black\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            const double xv = x_.lo + (x_.hi - x_.lo) * i / 4, yv = y_.lo + (y_.hi - y_.lo) * i / 4;
            out_ << "<text x=\"" << px(xv) << "\" y=\"" << y0 + 14 << "\" text-anchor=\"middle\">" << num(xv)
                 << "</text>\n";
            out_ << "<text x=\"" << x0 - 4 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << num(yv)
                 << "</text>\n";
        }
        out_ << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">" << escape(xl)
             << "</text>\n";
        out_ << "<text transform=\"translate(14," << kHeight / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
             << escape(yl) << "</text>\n";
    }

    void point(double x, double y) {
        out_ << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    }

    void line(double xa, double ya, double xb, double yb, const char* colour, bool dashed, const std::string& label) {
        out_ << "<line x1=\"" << px(xa) << "\" y1=\"" << py(ya) << "\" x2=\"" << px(xb) << "\" y2=\"" << py(yb)
             << "\" stroke=\"" << colour << "\"" << (dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
        if (!label.empty())
            out_ << "<text x=\"" << px(xb) - 2 << "\" y=\"" << py(yb) - 4 << "\" text-anchor=\"end\" fill=\"" << colour
                 << "\">" << escape(label) << "</text>\n";
    }

    std::string finish() {
        out_ << "</svg>\n";
        return out_.str();
    }

private:
    Range x_, y_;
    std::ostringstream out_;
};

}  // namespace

std::string scatter_svg(const std::vector<Pair>& pairs, const std::string& title, const std::string& x_label,
                        const std::string& y_label) {
    if (pairs.empty()) throw StatsError("scatter plot needs at least one pair");
    double lo = pairs[0].first, hi = lo;
    for (const auto& [x, y] : pairs) {
        lo = std::min({lo, x, y});
        hi = std::max({hi, x, y});
    }
    const Range r = padded(lo, hi);
    Canvas c(r, r);
    std::string subtitle = title;
    if (pairs.size() >= 2) {
        try {
            subtitle += " (r = " + num(pearson_r(pairs)) + ")";
        } catch (const StatsError&) {
        }
    }
    c.axes(subtitle, x_label, y_label);
    c.line(r.lo, r.lo, r.hi, r.hi, "#888888", true, "");
    for (const auto& [x, y] : pairs) c.point(x, y);
    return c.finish();
}

std::string bland_altman_svg(const std::vector<Pair>& pairs, const std::string& title, const std::string& units) {
    const BlandAltman ba = bland_altman(pairs);
    double xlo = (pairs[0].first + pairs[0].second) / 2, xhi = xlo;
    double ylo = std::min(ba.loa_low, 0.0), yhi = std::max(ba.loa_high, 0.0);
    for (const auto& [x, y] : pairs) {
        const double m = (x + y) / 2, d = x - y;
        xlo = std::min(xlo, m);
        xhi = std::max(xhi, m);
        ylo = std::min(ylo, d);
        yhi = std::max(yhi, d);
    }
    const Range rx = padded(xlo, xhi), ry = padded(ylo, yhi);
    Canvas c(rx, ry);
    const std::string u = units.empty() ? "" : " (" + units + ")";
    c.axes(title, "Mean of methods" + u, "Difference" + u);
    c.line(rx.lo, ba.bias, rx.hi, ba.bias, "#d62728", false, "bias " + num(ba.bias));
    c.line(rx.lo, ba.loa_high, rx.hi, ba.loa_high, "#2ca02c", true, "+1.96 SD " + num(ba.loa_high));
    c.line(rx.lo, ba.loa_low, rx.hi, ba.loa_low, "#2ca02c", true, "-1.96 SD " + num(ba.loa_low));
    for (const auto& [x, y] : pairs) c.point((x + y) / 2, x - y);
    return c.finish();
}

}  // namespace svpipe::stats
