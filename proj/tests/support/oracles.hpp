#pragma once

#include <algorithm>
#include <regex>
#include <string>
#include <vector>

#include "structlm/tasks.hpp"

namespace structlm::testing {

// Area whose half-open rectangle [c*w, (c+1)*w) x [r*w, (r+1)*w) contains the
// center; the last row/column also owns the page edge.
inline std::int64_t brute_force_area(double cx, double cy, int side) {
    const double w = 1000.0 / side;
    for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
            const bool in_x = (cx >= c * w && cx < (c + 1) * w) || (c == side - 1 && cx == 1000.0);
            const bool in_y = (cy >= r * w && cy < (r + 1) * w) || (r == side - 1 && cy == 1000.0);
            if (in_x && in_y) return r * side + c;
        }
    }
    return -1;
}

// Independent reading of the repair rules as a regular language over one
// character per tag; alternatives are tried left to right.
inline std::vector<EntitySpan> regex_decode(const std::vector<std::int64_t>& tags) {
    static const std::string letters[] = {"BIES", "bies", "1234"};
    std::string text;
    for (auto t : tags) text += t == kTagO ? 'O' : letters[(t - 1) / 4][(t - 1) % 4];
    static const std::regex pattern("(BI*E|BI*|[SIE])|(bi*e|bi*|[sie])|(12*3|12*|[234])|O");
    std::vector<EntitySpan> out;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), pattern); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        for (int g = 1; g <= 3; ++g) {
            if (!m[g].matched) continue;
            const auto first = static_cast<std::size_t>(m.position(0));
            out.push_back({static_cast<EntityCategory>(g - 1), first, first + static_cast<std::size_t>(m.length(0)) - 1});
        }
    }
    return out;
}

// Full-matrix edit distance, written independently of the rolling-row version.
inline std::size_t edit_distance_oracle(const std::string& a, const std::string& b) {
    std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
    for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = d[i - 1][j - 1] + (a[i - 1] != b[j - 1]);
            d[i][j] = std::min(sub, std::min(d[i - 1][j], d[i][j - 1]) + 1);
        }
    }
    return d[a.size()][b.size()];
}

}  // namespace structlm::testing
