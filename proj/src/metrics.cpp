#include "bgad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bgad/objective.hpp"

namespace bgad {

std::vector<double> bilinear_upsample(const std::vector<double>& src, int src_h, int src_w,
                                      int dst_h, int dst_w) {
    if (src_h < 1 || src_w < 1 || dst_h < 1 || dst_w < 1 ||
        src.size() != static_cast<size_t>(src_h) * src_w) {
        throw std::invalid_argument("bilinear_upsample: bad dimensions");
    }
    std::vector<double> dst(static_cast<size_t>(dst_h) * dst_w);
    const double fr = static_cast<double>(src_h) / dst_h;
    const double fc = static_cast<double>(src_w) / dst_w;
    for (int r = 0; r < dst_h; ++r) {
        double sr = r * fr;
        int r0 = std::min(static_cast<int>(sr), src_h - 1);
        int r1 = std::min(r0 + 1, src_h - 1);
        double tr = sr - r0;
        for (int c = 0; c < dst_w; ++c) {
            double sc = c * fc;
            int c0 = std::min(static_cast<int>(sc), src_w - 1);
            int c1 = std::min(c0 + 1, src_w - 1);
            double tc = sc - c0;
            double top = src[static_cast<size_t>(r0) * src_w + c0] * (1.0 - tc) +
                         src[static_cast<size_t>(r0) * src_w + c1] * tc;
            double bot = src[static_cast<size_t>(r1) * src_w + c0] * (1.0 - tc) +
                         src[static_cast<size_t>(r1) * src_w + c1] * tc;
            dst[static_cast<size_t>(r) * dst_w + c] = top * (1.0 - tr) + bot * tr;
        }
    }
    return dst;
}

void gaussian_smooth(std::vector<double>& img, int h, int w, double sigma) {
    if (img.size() != static_cast<size_t>(h) * w) {
        throw std::invalid_argument("gaussian_smooth: bad dimensions");
    }
    if (sigma < 0.0) throw std::invalid_argument("gaussian_smooth: negative sigma");
    if (sigma == 0.0) return;

    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += kernel[i + radius];
    }
    for (auto& k : kernel) k /= sum;

    std::vector<double> tmp(img.size());
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                int cc = std::clamp(c + i, 0, w - 1);
                acc += kernel[i + radius] * img[static_cast<size_t>(r) * w + cc];
            }
            tmp[static_cast<size_t>(r) * w + c] = acc;
        }
    }
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                int rr = std::clamp(r + i, 0, h - 1);
                acc += kernel[i + radius] * tmp[static_cast<size_t>(rr) * w + c];
            }
            img[static_cast<size_t>(r) * w + c] = acc;
        }
    }
}

AnomalyMap assemble_map(std::span<const LevelGrid> levels, int img_h, int img_w,
                        double smoothing_sigma, int64_t sample_id) {
    if (levels.empty()) throw std::invalid_argument("assemble_map: no levels");
    if (img_h < 1 || img_w < 1) throw std::invalid_argument("assemble_map: bad image dims");

    AnomalyMap map;
    map.h = img_h;
    map.w = img_w;
    map.sample_id = sample_id;
    map.scores.assign(static_cast<size_t>(img_h) * img_w, 0.0);

    for (const auto& level : levels) {
        if (level.h < 1 || level.w < 1 ||
            level.logps.size() != static_cast<size_t>(level.h) * level.w) {
            throw std::invalid_argument("assemble_map: level grid shape mismatch");
        }
        double mx = *std::max_element(level.logps.begin(), level.logps.end());
        std::vector<double> scores(level.logps.size());
        for (size_t i = 0; i < scores.size(); ++i) scores[i] = anomaly_score(level.logps[i], mx);
        std::vector<double> up = bilinear_upsample(scores, level.h, level.w, img_h, img_w);
        for (size_t i = 0; i < map.scores.size(); ++i) map.scores[i] += up[i];
    }
    const double inv = 1.0 / static_cast<double>(levels.size());
    for (auto& v : map.scores) v *= inv;

    gaussian_smooth(map.scores, img_h, img_w, smoothing_sigma);
    for (auto& v : map.scores) v = std::clamp(v, 0.0, 1.0);
    return map;
}

namespace {

void check_binary_inputs(std::span<const double> scores, std::span<const uint8_t> labels) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("metrics: score/label length mismatch");
    }
    if (scores.empty()) throw std::invalid_argument("metrics: empty input");
    bool has_pos = false, has_neg = false;
    for (uint8_t l : labels) {
        if (l) {
            has_pos = true;
        } else {
            has_neg = true;
        }
    }
    if (!has_pos || !has_neg) {
        throw std::invalid_argument("metrics: both classes must be present");
    }
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const uint8_t> labels) {
    check_binary_inputs(scores, labels);
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    size_t n_pos = 0, n_neg = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based average over the tie run
        for (size_t k = i; k < j; ++k) {
            if (labels[order[k]]) {
                rank_sum_pos += avg_rank;
                ++n_pos;
            } else {
                ++n_neg;
            }
        }
        i = j;
    }
    double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const uint8_t> labels) {
    check_binary_inputs(scores, labels);
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    size_t n_pos = 0, n_neg = 0;
    for (uint8_t l : labels) {
        if (l) {
            ++n_pos;
        } else {
            ++n_neg;
        }
    }

    std::vector<RocPoint> points;
    size_t tp = 0, fp = 0, i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        for (size_t k = i; k < j; ++k) {
            if (labels[order[k]]) {
                ++tp;
            } else {
                ++fp;
            }
        }
        points.push_back({scores[order[i]], static_cast<double>(tp) / n_pos,
                          static_cast<double>(fp) / n_neg});
        i = j;
    }
    return points;
}

double image_score(const AnomalyMap& map) {
    if (map.scores.empty()) throw std::invalid_argument("image_score: empty map");
    return *std::max_element(map.scores.begin(), map.scores.end());
}

double pro(std::span<const AnomalyMap> maps, std::span<const Mask> gt_masks, double fpr_limit) {
    if (maps.size() != gt_masks.size() || maps.empty()) {
        throw std::invalid_argument("pro: map/mask count mismatch");
    }
    if (!(fpr_limit > 0.0) || fpr_limit > 1.0) {
        throw std::invalid_argument("pro: fpr_limit must lie in (0, 1]");
    }

    // one global pixel table: score, negative flag, component id (or −1)
    struct Pixel {
        double score;
        int component;  // global id, −1 for background
    };
    std::vector<Pixel> pixels;
    std::vector<size_t> component_sizes;
    size_t n_neg = 0;

    for (size_t m = 0; m < maps.size(); ++m) {
        const AnomalyMap& map = maps[m];
        const Mask& mask = gt_masks[m];
        if (map.h != mask.h || map.w != mask.w ||
            map.scores.size() != static_cast<size_t>(map.h) * map.w) {
            throw std::invalid_argument("pro: map/mask shape mismatch");
        }
        ComponentSet comps = connected_components(mask);
        int base = static_cast<int>(component_sizes.size());
        component_sizes.resize(component_sizes.size() + comps.count, 0);
        for (size_t i = 0; i < map.scores.size(); ++i) {
            int comp = comps.labels[i] > 0 ? base + comps.labels[i] - 1 : -1;
            if (comp >= 0) {
                ++component_sizes[comp];
            } else {
                ++n_neg;
            }
            pixels.push_back({map.scores[i], comp});
        }
    }
    if (component_sizes.empty()) {
        throw std::invalid_argument("pro: no ground-truth regions");
    }
    if (n_neg == 0) throw std::invalid_argument("pro: no negative pixels");

    std::sort(pixels.begin(), pixels.end(),
              [](const Pixel& a, const Pixel& b) { return a.score > b.score; });

    // distinct thresholds, descending; capped by quantile selection
    std::vector<double> thresholds;
    for (size_t i = 0; i < pixels.size(); ++i) {
        if (i == 0 || pixels[i].score != pixels[i - 1].score) thresholds.push_back(pixels[i].score);
    }
    constexpr size_t kMaxThresholds = 5000;
    if (thresholds.size() > kMaxThresholds) {
        std::vector<double> picked(kMaxThresholds);
        for (size_t i = 0; i < kMaxThresholds; ++i) {
            size_t idx = i * (thresholds.size() - 1) / (kMaxThresholds - 1);
            picked[i] = thresholds[idx];
        }
        picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
        thresholds = std::move(picked);
    }

    // descending sweep with integer hit counts per component
    std::vector<size_t> hits(component_sizes.size(), 0);
    size_t fp = 0, cursor = 0;
    std::vector<std::pair<double, double>> curve;  // (fpr, mean overlap)
    curve.reserve(thresholds.size() + 1);
    curve.emplace_back(0.0, 0.0);
    for (double t : thresholds) {
        while (cursor < pixels.size() && pixels[cursor].score >= t) {
            if (pixels[cursor].component >= 0) {
                ++hits[pixels[cursor].component];
            } else {
                ++fp;
            }
            ++cursor;
        }
        double overlap = 0.0;
        for (size_t c = 0; c < hits.size(); ++c) {
            overlap += static_cast<double>(hits[c]) / static_cast<double>(component_sizes[c]);
        }
        overlap /= static_cast<double>(hits.size());
        curve.emplace_back(static_cast<double>(fp) / static_cast<double>(n_neg), overlap);
    }

    double area = 0.0;
    for (size_t i = 1; i < curve.size(); ++i) {
        auto [f0, o0] = curve[i - 1];
        auto [f1, o1] = curve[i];
        if (f1 <= fpr_limit) {
            area += (f1 - f0) * 0.5 * (o0 + o1);
        } else {
            if (f0 < fpr_limit) {
                double o_lim = o0 + (o1 - o0) * (fpr_limit - f0) / (f1 - f0);
                area += (fpr_limit - f0) * 0.5 * (o0 + o_lim);
            }
            break;
        }
    }
    return area / fpr_limit;
}

}  // namespace bgad
