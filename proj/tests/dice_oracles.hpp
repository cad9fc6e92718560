#pragma once

#include "eos/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace eos::testing {

inline double mean_abs_rot180_diff(const data::RasterImage& img) {
    double s = 0.0;
    for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t c = 0; c < 32; ++c) s += std::abs(img.at(r, c) - img.at(31 - r, 31 - c));
    return s / 1024.0;
}

inline double total_ink(const data::RasterImage& img) {
    double s = 0.0;
    for (double v : img.pixels) s += v;
    return s;
}

struct Component {
    double angle = 0.0;       // principal axis in [0, π), pixel coordinates (col, row)
    double elongation = 0.0;  // ratio of principal second moments
    bool touches_border = false;
};

// 8-connected ink components with their ink-weighted principal axes.
inline std::vector<Component> ink_components(const data::RasterImage& img, double threshold = 0.02) {
    std::vector<int> label(1024, -1);
    std::vector<Component> out;
    for (std::size_t start = 0; start < 1024; ++start) {
        if (img.pixels[start] <= threshold || label[start] >= 0) continue;
        const int id = int(out.size());
        std::vector<std::size_t> stack{start}, members;
        label[start] = id;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            members.push_back(p);
            const int r = int(p / 32), c = int(p % 32);
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= 32 || cc < 0 || cc >= 32) continue;
                    const std::size_t q = std::size_t(rr * 32 + cc);
                    if (img.pixels[q] > threshold && label[q] < 0) {
                        label[q] = id;
                        stack.push_back(q);
                    }
                }
        }
        double w = 0, mc = 0, mr = 0;
        Component comp;
        for (std::size_t p : members) {
            const double v = img.pixels[p];
            w += v;
            mc += v * double(p % 32);
            mr += v * double(p / 32);
            const std::size_t r = p / 32, c = p % 32;
            if (r == 0 || c == 0 || r == 31 || c == 31) comp.touches_border = true;
        }
        mc /= w;
        mr /= w;
        double scc = 0, srr = 0, scr = 0;
        for (std::size_t p : members) {
            const double v = img.pixels[p], dc = double(p % 32) - mc, dr = double(p / 32) - mr;
            scc += v * dc * dc;
            srr += v * dr * dr;
            scr += v * dc * dr;
        }
        const double tr = scc + srr, det = scc * srr - scr * scr;
        const double disc = std::sqrt(std::max(0.0, tr * tr / 4 - det));
        const double l1 = tr / 2 + disc, l2 = std::max(tr / 2 - disc, 1e-12);
        comp.angle = std::fmod(0.5 * std::atan2(2 * scr, scc - srr) + std::numbers::pi, std::numbers::pi);
        comp.elongation = l1 / l2;
        out.push_back(comp);
    }
    return out;
}

inline double angle_gap(double a, double b) {
    double d = std::fmod(std::abs(a - b), std::numbers::pi);
    return std::min(d, std::numbers::pi - d);
}

}  // namespace eos::testing
