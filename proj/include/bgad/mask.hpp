#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace bgad {

// Binary pixel mask, row-major, entries 0 or 1.
struct Mask {
    int h = 0, w = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(int height, int width) : h(height), w(width), data(static_cast<size_t>(height) * width, 0) {}

    uint8_t at(int r, int c) const { return data[static_cast<size_t>(r) * w + c]; }
    uint8_t& at(int r, int c) { return data[static_cast<size_t>(r) * w + c]; }

    bool any() const {
        for (uint8_t v : data) {
            if (v) return true;
        }
        return false;
    }
};

// Labels of the 8-connected foreground components, in scan order: background
// pixels get 0, component ids run 1..count.
struct ComponentSet {
    std::vector<int> labels;
    int count = 0;
};

inline ComponentSet connected_components(const Mask& m) {
    if (static_cast<size_t>(m.h) * m.w != m.data.size()) {
        throw std::invalid_argument("connected_components: mask shape mismatch");
    }
    ComponentSet out;
    out.labels.assign(m.data.size(), 0);
    std::vector<size_t> stack;
    for (int r = 0; r < m.h; ++r) {
        for (int c = 0; c < m.w; ++c) {
            size_t idx = static_cast<size_t>(r) * m.w + c;
            if (!m.data[idx] || out.labels[idx] != 0) continue;
            ++out.count;
            out.labels[idx] = out.count;
            stack.assign(1, idx);
            while (!stack.empty()) {
                size_t cur = stack.back();
                stack.pop_back();
                int cr = static_cast<int>(cur) / m.w, cc = static_cast<int>(cur) % m.w;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        if (dr == 0 && dc == 0) continue;
                        int nr = cr + dr, nc = cc + dc;
                        if (nr < 0 || nr >= m.h || nc < 0 || nc >= m.w) continue;
                        size_t nidx = static_cast<size_t>(nr) * m.w + nc;
                        if (m.data[nidx] && out.labels[nidx] == 0) {
                            out.labels[nidx] = out.count;
                            stack.push_back(nidx);
                        }
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace bgad
