#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "bgad/metrics.hpp"
#include "bgad/rng.hpp"

using namespace bgad;

namespace {

double brute_force_auroc(std::span<const double> scores, std::span<const uint8_t> labels) {
    double wins = 0.0;
    size_t n_pos = 0, n_neg = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        ++n_pos;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            if (scores[i] > scores[j]) {
                wins += 1.0;
            } else if (scores[i] == scores[j]) {
                wins += 0.5;
            }
        }
    }
    for (uint8_t l : labels) {
        if (!l) ++n_neg;
    }
    return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// independent 8-connectivity labeling by iterated min-label propagation
std::vector<int> propagate_components(const Mask& m) {
    std::vector<int> lab(m.data.size(), 0);
    int next = 1;
    for (size_t i = 0; i < m.data.size(); ++i) {
        if (m.data[i]) lab[i] = next++;
    }
    bool changed = true;
    while (changed) {
        changed = false;
        for (int r = 0; r < m.h; ++r) {
            for (int c = 0; c < m.w; ++c) {
                size_t idx = static_cast<size_t>(r) * m.w + c;
                if (!lab[idx]) continue;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        int nr = r + dr, nc = c + dc;
                        if (nr < 0 || nr >= m.h || nc < 0 || nc >= m.w) continue;
                        size_t nidx = static_cast<size_t>(nr) * m.w + nc;
                        if (lab[nidx] && lab[nidx] < lab[idx]) {
                            lab[idx] = lab[nidx];
                            changed = true;
                        }
                    }
                }
            }
        }
    }
    return lab;
}

// independent PRO: full threshold enumeration, components by propagation,
// regions ordered by first pixel in scan order
double brute_force_pro(std::span<const AnomalyMap> maps, std::span<const Mask> masks,
                       double fpr_limit) {
    struct Region {
        std::vector<size_t> pixel;  // indices into the global pixel array
    };
    std::vector<Region> regions;
    std::vector<double> all_scores;
    std::vector<uint8_t> negative;
    size_t offset = 0;
    for (size_t m = 0; m < maps.size(); ++m) {
        auto lab = propagate_components(masks[m]);
        std::map<int, Region> by_label;  // keyed by representative label = first pixel's label
        for (size_t i = 0; i < lab.size(); ++i) {
            all_scores.push_back(maps[m].scores[i]);
            negative.push_back(lab[i] == 0);
            if (lab[i]) by_label[lab[i]].pixel.push_back(offset + i);
        }
        for (auto& [label, region] : by_label) regions.push_back(std::move(region));
        offset += lab.size();
    }
    size_t n_neg = 0;
    for (uint8_t n : negative) n_neg += n;

    std::vector<double> thresholds(all_scores.begin(), all_scores.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    std::vector<std::pair<double, double>> curve{{0.0, 0.0}};
    for (double t : thresholds) {
        size_t fp = 0;
        for (size_t i = 0; i < all_scores.size(); ++i) {
            if (negative[i] && all_scores[i] >= t) ++fp;
        }
        double overlap = 0.0;
        for (const auto& region : regions) {
            size_t hit = 0;
            for (size_t p : region.pixel) {
                if (all_scores[p] >= t) ++hit;
            }
            overlap += static_cast<double>(hit) / static_cast<double>(region.pixel.size());
        }
        overlap /= static_cast<double>(regions.size());
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

AnomalyMap map_from(std::vector<double> scores, int h, int w) {
    AnomalyMap m;
    m.h = h;
    m.w = w;
    m.scores = std::move(scores);
    return m;
}

}  // namespace

TEST_CASE("connected components with 8-connectivity") {
    Mask m(4, 4);
    // two diagonal pixels touch corner-to-corner: one component
    m.at(0, 0) = 1;
    m.at(1, 1) = 1;
    // isolated pixel far away: second component
    m.at(3, 3) = 1;
    ComponentSet cs = connected_components(m);
    CHECK(cs.count == 2);
    CHECK(cs.labels[0] == cs.labels[5]);
    CHECK(cs.labels[15] != cs.labels[0]);
    CHECK(cs.labels[15] > 0);
    CHECK(cs.labels[1] == 0);
}

TEST_CASE("auroc examples") {
    std::vector<double> s1 = {0.1, 0.2, 0.8, 0.9};
    std::vector<uint8_t> l1 = {0, 0, 1, 1};
    CHECK(auroc(s1, l1) == 1.0);

    std::vector<double> s2 = {0.1, 0.7, 0.5, 0.9};
    std::vector<uint8_t> l2 = {0, 0, 1, 1};
    CHECK(auroc(s2, l2) == doctest::Approx(0.75).epsilon(1e-15));

    std::vector<double> s3(8, 0.42);
    std::vector<uint8_t> l3 = {0, 1, 0, 1, 0, 1, 0, 1};
    CHECK(auroc(s3, l3) == doctest::Approx(0.5).epsilon(1e-15));

    std::vector<uint8_t> single(4, 1);
    CHECK_THROWS(auroc(s1, single));
    CHECK_THROWS(auroc(std::vector<double>{}, std::vector<uint8_t>{}));
}

TEST_CASE("auroc equals the pairwise oracle") {
    Rng rng(101);
    for (int trial = 0; trial < 30; ++trial) {
        size_t n = 50 + rng.below(950);
        std::vector<double> scores(n);
        std::vector<uint8_t> labels(n);
        bool quantize = trial % 2 == 0;
        for (size_t i = 0; i < n; ++i) {
            double s = rng.uniform();
            scores[i] = quantize ? std::floor(s * 20.0) / 20.0 : s;  // ties when quantized
            labels[i] = rng.uniform() < 0.3 ? 1 : 0;
        }
        labels[0] = 0;
        labels[1] = 1;
        CHECK(std::abs(auroc(scores, labels) - brute_force_auroc(scores, labels)) < 1e-9);
    }
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
    Rng rng(102);
    std::vector<double> scores(300);
    std::vector<uint8_t> labels(300);
    for (size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.uniform(-5.0, 5.0);
        labels[i] = i % 3 == 0;
    }
    double base = auroc(scores, labels);
    std::vector<double> warped(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) warped[i] = std::tanh(scores[i]) * 3.0 + 7.0;
    CHECK(auroc(warped, labels) == base);
    for (size_t i = 0; i < scores.size(); ++i) warped[i] = std::exp(scores[i]);
    CHECK(auroc(warped, labels) == base);
}

TEST_CASE("roc points are monotone and end at (1,1)") {
    Rng rng(103);
    std::vector<double> scores(200);
    std::vector<uint8_t> labels(200);
    for (size_t i = 0; i < scores.size(); ++i) {
        scores[i] = std::floor(rng.uniform() * 50.0) / 50.0;
        labels[i] = rng.uniform() < 0.4;
    }
    labels[0] = 0;
    labels[1] = 1;
    auto pts = roc_points(scores, labels);
    REQUIRE(!pts.empty());
    double tpr = 0.0, fpr = 0.0;
    for (const auto& p : pts) {
        CHECK(p.tpr >= tpr);
        CHECK(p.fpr >= fpr);
        CHECK(p.tpr <= 1.0);
        CHECK(p.fpr <= 1.0);
        tpr = p.tpr;
        fpr = p.fpr;
    }
    CHECK(pts.back().tpr == 1.0);
    CHECK(pts.back().fpr == 1.0);
}

TEST_CASE("image score") {
    AnomalyMap flat = map_from(std::vector<double>(16, 0.37), 4, 4);
    CHECK(image_score(flat) == 0.37);

    AnomalyMap hot = map_from(std::vector<double>(16, 0.1), 4, 4);
    hot.scores[9] = 0.9;
    CHECK(image_score(hot) == 0.9);

    AnomalyMap shifted = hot;
    for (auto& v : shifted.scores) v += 0.05;
    CHECK(image_score(shifted) == doctest::Approx(0.95).epsilon(1e-15));

    CHECK_THROWS(image_score(AnomalyMap{}));
}

TEST_CASE("assemble_map: constant input gives a zero map") {
    LevelGrid g{4, 4, std::vector<double>(16, -12.5)};
    std::vector<LevelGrid> levels = {g, {2, 2, std::vector<double>(4, -3.0)}};
    AnomalyMap m = assemble_map(levels, 16, 16, 4.0);
    for (double v : m.scores) CHECK(v == 0.0);
}

TEST_CASE("assemble_map: duplicated level changes nothing") {
    Rng rng(7);
    LevelGrid g{4, 4, {}};
    for (int i = 0; i < 16; ++i) g.logps.push_back(-rng.uniform(1.0, 20.0));
    std::vector<LevelGrid> one = {g}, two = {g, g};
    AnomalyMap a = assemble_map(one, 16, 16, 1.0);
    AnomalyMap b = assemble_map(two, 16, 16, 1.0);
    for (size_t i = 0; i < a.scores.size(); ++i) CHECK(a.scores[i] == b.scores[i]);
}

TEST_CASE("assemble_map: smoothing matches a direct convolution") {
    LevelGrid g{4, 4, std::vector<double>(16, -10.0)};
    g.logps[1 * 4 + 2] = -20.0;  // hot (low-likelihood) position at (1, 2)
    std::vector<LevelGrid> levels = {g};
    const double sigma = 1.5;
    AnomalyMap raw = assemble_map(levels, 16, 16, 0.0);
    AnomalyMap smoothed = assemble_map(levels, 16, 16, sigma);

    int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        ksum += kernel[i + radius];
    }
    for (auto& k : kernel) k /= ksum;

    double max_val = -1.0;
    int argmax = -1;
    for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) {
            double acc = 0.0;
            for (int dr = -radius; dr <= radius; ++dr) {
                for (int dc = -radius; dc <= radius; ++dc) {
                    int rr = std::clamp(r + dr, 0, 15), cc = std::clamp(c + dc, 0, 15);
                    acc += kernel[dr + radius] * kernel[dc + radius] * raw.scores[rr * 16 + cc];
                }
            }
            CHECK(smoothed.scores[r * 16 + c] == doctest::Approx(acc).epsilon(1e-12));
            if (smoothed.scores[r * 16 + c] > max_val) {
                max_val = smoothed.scores[r * 16 + c];
                argmax = r * 16 + c;
            }
        }
    }
    // hot grid cell (1, 2) upsampled by factor 4 lands at pixel (4, 8)
    CHECK(argmax == 4 * 16 + 8);
}

TEST_CASE("assemble_map: integral upsampling hits grid points exactly") {
    Rng rng(8);
    LevelGrid g{4, 4, {}};
    for (int i = 0; i < 16; ++i) g.logps.push_back(-rng.uniform(1.0, 30.0));
    std::vector<LevelGrid> levels = {g};
    AnomalyMap m = assemble_map(levels, 16, 16, 0.0);

    double mx = *std::max_element(g.logps.begin(), g.logps.end());
    std::vector<std::pair<double, int>> grid_scores, map_scores;
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            grid_scores.push_back({-std::expm1(g.logps[r * 4 + c] - mx), r * 4 + c});
            map_scores.push_back({m.scores[(r * 4) * 16 + (c * 4)], r * 4 + c});
        }
    }
    for (size_t i = 0; i < grid_scores.size(); ++i) {
        CHECK(map_scores[i].first == grid_scores[i].first);
    }
    std::sort(grid_scores.begin(), grid_scores.end());
    std::sort(map_scores.begin(), map_scores.end());
    for (size_t i = 0; i < grid_scores.size(); ++i) {
        CHECK(grid_scores[i].second == map_scores[i].second);  // identical ranking
    }
}

TEST_CASE("assemble_map validation") {
    std::vector<LevelGrid> bad = {{4, 4, std::vector<double>(15, -1.0)}};
    CHECK_THROWS(assemble_map(bad, 16, 16, 0.0));
    std::vector<LevelGrid> ok = {{2, 2, std::vector<double>(4, -1.0)}};
    CHECK_THROWS(assemble_map(ok, 0, 16, 0.0));
    CHECK_THROWS(assemble_map(std::span<const LevelGrid>{}, 16, 16, 0.0));
}

TEST_CASE("pro: perfect localization scores 1 at any limit") {
    Mask mask(8, 8);
    for (int r = 2; r < 5; ++r) {
        for (int c = 3; c < 7; ++c) mask.at(r, c) = 1;
    }
    AnomalyMap m = map_from(std::vector<double>(64, 0.0), 8, 8);
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) m.scores[r * 8 + c] = mask.at(r, c) ? 1.0 : 0.0;
    }
    std::vector<AnomalyMap> maps = {m};
    std::vector<Mask> masks = {mask};
    CHECK(pro(maps, masks, 0.3) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pro(maps, masks, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pro(maps, masks, 0.05) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pro: constant map over a half-image region") {
    Mask mask(4, 4);
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 4; ++c) mask.at(r, c) = 1;
    }
    std::vector<AnomalyMap> maps = {map_from(std::vector<double>(16, 0.7), 4, 4)};
    std::vector<Mask> masks = {mask};
    CHECK(pro(maps, masks, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pro equals the brute-force sweep exactly") {
    Rng rng(202);
    for (int trial = 0; trial < 25; ++trial) {
        int n_maps = 1 + static_cast<int>(rng.below(3));
        std::vector<AnomalyMap> maps;
        std::vector<Mask> masks;
        bool any_region = false;
        for (int k = 0; k < n_maps; ++k) {
            int h = 6 + static_cast<int>(rng.below(27));  // up to 32
            int w = 6 + static_cast<int>(rng.below(27));
            Mask mask(h, w);
            int blobs = static_cast<int>(rng.below(4));
            for (int b = 0; b < blobs; ++b) {
                int r0 = static_cast<int>(rng.below(h)), c0 = static_cast<int>(rng.below(w));
                int rh = 1 + static_cast<int>(rng.below(4)), rw = 1 + static_cast<int>(rng.below(4));
                for (int r = r0; r < std::min(h, r0 + rh); ++r) {
                    for (int c = c0; c < std::min(w, c0 + rw); ++c) mask.at(r, c) = 1;
                }
            }
            // keep negatives present
            mask.at(0, 0) = 0;
            if (mask.any()) any_region = true;
            std::vector<double> scores(static_cast<size_t>(h) * w);
            for (auto& s : scores) {
                s = std::floor(rng.uniform() * 40.0) / 40.0;  // plenty of ties
            }
            maps.push_back(map_from(std::move(scores), h, w));
            masks.push_back(std::move(mask));
        }
        if (!any_region) {
            masks[0].at(2, 2) = 1;
        }
        for (double limit : {0.3, 1.0, 0.11}) {
            CHECK(pro(maps, masks, limit) == brute_force_pro(maps, masks, limit));
        }
    }
}

TEST_CASE("pro validation") {
    std::vector<AnomalyMap> maps = {map_from(std::vector<double>(16, 0.5), 4, 4)};
    std::vector<Mask> empty_masks = {Mask(4, 4)};
    CHECK_THROWS(pro(maps, empty_masks, 0.3));  // no ground-truth regions

    Mask full(4, 4);
    std::fill(full.data.begin(), full.data.end(), 1);
    std::vector<Mask> all_pos = {full};
    CHECK_THROWS(pro(maps, all_pos, 0.3));  // no negative pixels

    Mask ok(4, 4);
    ok.at(1, 1) = 1;
    std::vector<Mask> good = {ok};
    CHECK_THROWS(pro(maps, good, 0.0));
    CHECK_THROWS(pro(maps, good, 1.5));
    std::vector<Mask> mismatched = {Mask(5, 4)};
    mismatched[0].at(1, 1) = 1;
    CHECK_THROWS(pro(maps, mismatched, 0.3));
}

TEST_CASE("pro stays accurate past the threshold cap") {
    Rng rng(203);
    int h = 80, w = 80;
    Mask mask(h, w);
    for (int r = 10; r < 22; ++r) {
        for (int c = 30; c < 45; ++c) mask.at(r, c) = 1;
    }
    std::vector<double> scores(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.uniform() * (mask.data[i] ? 1.0 : 0.6);
    }
    std::vector<AnomalyMap> maps = {map_from(std::move(scores), h, w)};
    std::vector<Mask> masks = {mask};
    // 6400 distinct scores exceed the 5000-threshold cap; the quantile-spaced
    // sweep must stay close to the exhaustive one
    double capped = pro(maps, masks, 0.3);
    double full = brute_force_pro(maps, masks, 0.3);
    CHECK(std::abs(capped - full) < 0.01);
}
