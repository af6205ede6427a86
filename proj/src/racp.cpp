#include "bgad/racp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bgad {

namespace {

constexpr double kPi = 3.14159265358979323846;

uint8_t clamp_u8(double v) {
    long r = std::lround(v);
    return static_cast<uint8_t>(std::clamp(r, 0L, 255L));
}

int clamp_int(int v, int lo, int hi) { return std::clamp(v, lo, hi); }

bool is_geometric(TransformKind kind) {
    return kind == TransformKind::Rotate || kind == TransformKind::Translate ||
           kind == TransformKind::Shear;
}

// Inverse-maps every destination pixel; clamping the source coordinates
// implements edge replication.
template <typename Inv>
RasterImage warp_image(const RasterImage& img, Inv inv) {
    RasterImage out(img.h, img.w, img.c);
    out.id = img.id;
    for (int r = 0; r < img.h; ++r) {
        for (int c = 0; c < img.w; ++c) {
            auto [sr, sc] = inv(static_cast<double>(r), static_cast<double>(c));
            double fr = std::floor(sr), fc = std::floor(sc);
            double wr = sr - fr, wc = sc - fc;
            int r0 = clamp_int(static_cast<int>(fr), 0, img.h - 1);
            int r1 = clamp_int(static_cast<int>(fr) + 1, 0, img.h - 1);
            int c0 = clamp_int(static_cast<int>(fc), 0, img.w - 1);
            int c1 = clamp_int(static_cast<int>(fc) + 1, 0, img.w - 1);
            for (int ch = 0; ch < img.c; ++ch) {
                double top = (1.0 - wc) * img.at(r0, c0, ch) + wc * img.at(r0, c1, ch);
                double bot = (1.0 - wc) * img.at(r1, c0, ch) + wc * img.at(r1, c1, ch);
                out.at(r, c, ch) = clamp_u8((1.0 - wr) * top + wr * bot);
            }
        }
    }
    return out;
}

template <typename Inv>
Mask warp_mask(const Mask& mask, Inv inv) {
    Mask out(mask.h, mask.w);
    for (int r = 0; r < mask.h; ++r) {
        for (int c = 0; c < mask.w; ++c) {
            auto [sr, sc] = inv(static_cast<double>(r), static_cast<double>(c));
            int nr = clamp_int(static_cast<int>(std::lround(sr)), 0, mask.h - 1);
            int nc = clamp_int(static_cast<int>(std::lround(sc)), 0, mask.w - 1);
            out.at(r, c) = mask.at(nr, nc);
        }
    }
    return out;
}

using Lut = std::array<uint8_t, 256>;

RasterImage apply_lut_per_channel(const RasterImage& img, const std::vector<Lut>& luts) {
    RasterImage out(img.h, img.w, img.c);
    out.id = img.id;
    for (int r = 0; r < img.h; ++r) {
        for (int c = 0; c < img.w; ++c) {
            for (int ch = 0; ch < img.c; ++ch) out.at(r, c, ch) = luts[ch][img.at(r, c, ch)];
        }
    }
    return out;
}

RasterImage auto_contrast(const RasterImage& img) {
    std::vector<Lut> luts(img.c);
    for (int ch = 0; ch < img.c; ++ch) {
        int lo = 255, hi = 0;
        for (int r = 0; r < img.h; ++r) {
            for (int c = 0; c < img.w; ++c) {
                int v = img.at(r, c, ch);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        if (hi <= lo) {
            for (int i = 0; i < 256; ++i) luts[ch][i] = static_cast<uint8_t>(i);
            continue;
        }
        double scale = 255.0 / (hi - lo);
        for (int i = 0; i < 256; ++i) luts[ch][i] = clamp_u8((i - lo) * scale);
    }
    return apply_lut_per_channel(img, luts);
}

RasterImage equalize(const RasterImage& img) {
    std::vector<Lut> luts(img.c);
    for (int ch = 0; ch < img.c; ++ch) {
        std::array<int64_t, 256> hist{};
        for (int r = 0; r < img.h; ++r) {
            for (int c = 0; c < img.w; ++c) ++hist[img.at(r, c, ch)];
        }
        int64_t total = static_cast<int64_t>(img.h) * img.w;
        int64_t step = (total - hist[255]) / 255;
        if (step == 0) {
            for (int i = 0; i < 256; ++i) luts[ch][i] = static_cast<uint8_t>(i);
            continue;
        }
        int64_t n = step / 2;
        for (int i = 0; i < 256; ++i) {
            luts[ch][i] = static_cast<uint8_t>(std::min<int64_t>(255, n / step));
            n += hist[i];
        }
    }
    return apply_lut_per_channel(img, luts);
}

RasterImage apply_fixed_lut(const RasterImage& img, const Lut& lut) {
    return apply_lut_per_channel(img, std::vector<Lut>(img.c, lut));
}

RasterImage sharpness(const RasterImage& img, double factor) {
    // Blend between a 3x3 smoothed copy (kernel 1,1,1 / 1,5,1 / 1,1,1, sum 13,
    // replicated edges) and the original; factor 1 reproduces the input.
    RasterImage out(img.h, img.w, img.c);
    out.id = img.id;
    for (int r = 0; r < img.h; ++r) {
        for (int c = 0; c < img.w; ++c) {
            for (int ch = 0; ch < img.c; ++ch) {
                double acc = 0.0;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        int rr = clamp_int(r + dr, 0, img.h - 1);
                        int cc = clamp_int(c + dc, 0, img.w - 1);
                        double w = (dr == 0 && dc == 0) ? 5.0 : 1.0;
                        acc += w * img.at(rr, cc, ch);
                    }
                }
                double smooth = acc / 13.0;
                double orig = img.at(r, c, ch);
                out.at(r, c, ch) = clamp_u8(smooth + factor * (orig - smooth));
            }
        }
    }
    return out;
}

void validate_image(const RasterImage& img, const char* who) {
    if (img.h < 1 || img.w < 1 || (img.c != 1 && img.c != 3)) {
        throw std::invalid_argument(std::string(who) + ": image must be HxWxC with C in {1,3}");
    }
    if (img.pixels.size() != static_cast<size_t>(img.h) * img.w * img.c) {
        throw std::invalid_argument(std::string(who) + ": pixel buffer size mismatch");
    }
}

}  // namespace

AnomalyRegion make_region(Mask mask) {
    AnomalyRegion region;
    ComponentSet comps = connected_components(mask);
    region.boxes.assign(comps.count, Box{mask.h, mask.w, 0, 0});
    for (int r = 0; r < mask.h; ++r) {
        for (int c = 0; c < mask.w; ++c) {
            int label = comps.labels[static_cast<size_t>(r) * mask.w + c];
            if (label == 0) continue;
            Box& b = region.boxes[label - 1];
            b.r0 = std::min(b.r0, r);
            b.c0 = std::min(b.c0, c);
            b.r1 = std::max(b.r1, r + 1);
            b.c1 = std::max(b.c1, c + 1);
        }
    }
    region.mask = std::move(mask);
    return region;
}

const char* to_string(TransformKind kind) {
    switch (kind) {
        case TransformKind::AutoContrast: return "AutoContrast";
        case TransformKind::Equalize: return "Equalize";
        case TransformKind::Rotate: return "Rotate";
        case TransformKind::Posterize: return "Posterize";
        case TransformKind::Solarize: return "Solarize";
        case TransformKind::Brightness: return "Brightness";
        case TransformKind::Sharpness: return "Sharpness";
        case TransformKind::Translate: return "Translate";
        case TransformKind::Shear: return "Shear";
    }
    throw std::invalid_argument("to_string: bad TransformKind");
}

TransformKind transform_from_string(const std::string& name) {
    for (int i = 0; i < kNumTransforms; ++i) {
        TransformKind kind = static_cast<TransformKind>(i);
        if (name == to_string(kind)) return kind;
    }
    throw std::invalid_argument("unknown transform name: " + name);
}

std::pair<double, double> magnitude_range(TransformKind kind) {
    switch (kind) {
        case TransformKind::AutoContrast:
        case TransformKind::Equalize: return {0.0, 0.0};
        case TransformKind::Rotate: return {-30.0, 30.0};
        case TransformKind::Posterize: return {4.0, 8.0};
        case TransformKind::Solarize: return {0.0, 255.0};
        case TransformKind::Brightness:
        case TransformKind::Sharpness: return {0.1, 1.9};
        case TransformKind::Translate: return {-0.1, 0.1};
        case TransformKind::Shear: return {-0.3, 0.3};
    }
    throw std::invalid_argument("magnitude_range: bad TransformKind");
}

std::pair<RasterImage, AnomalyRegion> apply_transform(const RasterImage& img,
                                                      const AnomalyRegion& region,
                                                      const TransformSpec& t,
                                                      [[maybe_unused]] Rng& rng) {
    validate_image(img, "apply_transform");
    if (region.mask.h != img.h || region.mask.w != img.w) {
        throw std::invalid_argument("apply_transform: mask dims differ from image dims");
    }
    auto [lo, hi] = magnitude_range(t.kind);
    if (!(t.magnitude >= lo && t.magnitude <= hi)) {
        throw std::invalid_argument(std::string("apply_transform: magnitude out of range for ") +
                                    to_string(t.kind));
    }
    if (!(t.probability >= 0.0 && t.probability <= 1.0)) {
        throw std::invalid_argument("apply_transform: probability must lie in [0,1]");
    }

    if (is_geometric(t.kind)) {
        double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;
        auto warped = [&](auto inv) {
            return std::make_pair(warp_image(img, inv), make_region(warp_mask(region.mask, inv)));
        };
        switch (t.kind) {
            case TransformKind::Rotate: {
                double a = t.magnitude * kPi / 180.0;
                double ca = std::cos(a), sa = std::sin(a);
                return warped([&](double r, double c) {
                    double dy = r - cy, dx = c - cx;
                    return std::pair{cy + ca * dy + sa * dx, cx - sa * dy + ca * dx};
                });
            }
            case TransformKind::Translate: {
                double dr = static_cast<double>(std::lround(t.magnitude * img.h));
                double dc = static_cast<double>(std::lround(t.magnitude * img.w));
                return warped(
                    [&](double r, double c) { return std::pair{r - dr, c - dc}; });
            }
            case TransformKind::Shear: {
                double m = t.magnitude;
                return warped(
                    [&](double r, double c) { return std::pair{r, c - m * (r - cy)}; });
            }
            default: break;
        }
    }

    RasterImage out;
    switch (t.kind) {
        case TransformKind::AutoContrast: out = auto_contrast(img); break;
        case TransformKind::Equalize: out = equalize(img); break;
        case TransformKind::Posterize: {
            int bits = static_cast<int>(std::lround(t.magnitude));
            uint8_t keep = static_cast<uint8_t>(0xFF << (8 - bits));
            Lut lut;
            for (int i = 0; i < 256; ++i) lut[i] = static_cast<uint8_t>(i) & keep;
            out = apply_fixed_lut(img, lut);
            break;
        }
        case TransformKind::Solarize: {
            Lut lut;
            for (int i = 0; i < 256; ++i) {
                lut[i] = static_cast<uint8_t>(i < t.magnitude ? i : 255 - i);
            }
            out = apply_fixed_lut(img, lut);
            break;
        }
        case TransformKind::Brightness: {
            Lut lut;
            for (int i = 0; i < 256; ++i) lut[i] = clamp_u8(i * t.magnitude);
            out = apply_fixed_lut(img, lut);
            break;
        }
        case TransformKind::Sharpness: out = sharpness(img, t.magnitude); break;
        default: throw std::invalid_argument("apply_transform: bad TransformKind");
    }
    return {std::move(out), region};
}

AugmentPlan draw_plan(int s, Rng& rng) {
    if (s < 0 || s > kNumTransforms) {
        throw std::invalid_argument("draw_plan: subset size must lie in [0, 9]");
    }
    std::vector<int> order(kNumTransforms);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    AugmentPlan plan;
    for (int i = 0; i < s; ++i) {
        TransformSpec spec;
        spec.kind = static_cast<TransformKind>(order[i]);
        auto [lo, hi] = magnitude_range(spec.kind);
        spec.magnitude = lo < hi ? rng.uniform(lo, hi) : lo;
        spec.probability = 1.0;
        plan.subset.push_back(spec);
    }
    return plan;
}

std::pair<RasterImage, AnomalyRegion> racp_apply(const RasterImage& normal,
                                                 const RasterImage& abnormal,
                                                 const AnomalyRegion& region,
                                                 const AugmentPlan& plan, Rng& rng) {
    validate_image(normal, "racp_apply");
    validate_image(abnormal, "racp_apply");
    if (normal.h != abnormal.h || normal.w != abnormal.w || normal.c != abnormal.c) {
        throw std::invalid_argument("racp_apply: normal and abnormal dims differ");
    }
    if (region.mask.h != abnormal.h || region.mask.w != abnormal.w) {
        throw std::invalid_argument("racp_apply: region dims differ from the abnormal image");
    }
    if (!region.mask.any()) throw std::invalid_argument("racp_apply: region is empty");

    RasterImage img = abnormal;
    AnomalyRegion reg = region;
    for (const TransformSpec& t : plan.subset) {
        bool fire = rng.uniform() < t.probability;
        if (fire) std::tie(img, reg) = apply_transform(img, reg, t, rng);
    }
    if (!reg.mask.any()) {
        throw std::runtime_error("racp_apply: transforms erased the anomalous region");
    }

    Box box{reg.mask.h, reg.mask.w, 0, 0};
    for (const Box& b : reg.boxes) {
        box.r0 = std::min(box.r0, b.r0);
        box.c0 = std::min(box.c0, b.c0);
        box.r1 = std::max(box.r1, b.r1);
        box.c1 = std::max(box.c1, b.c1);
    }

    int pr = -1, pc = -1;
    for (int attempt = 0; attempt < 10 && pr < 0; ++attempt) {
        if (box.height() > normal.h || box.width() > normal.w) continue;
        int r, c;
        if (plan.paste_location) {
            r = plan.paste_location->row;
            c = plan.paste_location->col;
            if (r < 0 || c < 0 || r + box.height() > normal.h || c + box.width() > normal.w) {
                throw std::invalid_argument("racp_apply: paste location out of bounds");
            }
        } else {
            r = static_cast<int>(rng.below(normal.h - box.height() + 1));
            c = static_cast<int>(rng.below(normal.w - box.width() + 1));
        }
        pr = r;
        pc = c;
    }
    if (pr < 0) throw std::runtime_error("racp_apply: region does not fit the normal image");

    RasterImage composite = normal;
    Mask out_mask(normal.h, normal.w);
    for (int r = box.r0; r < box.r1; ++r) {
        for (int c = box.c0; c < box.c1; ++c) {
            if (!reg.mask.at(r, c)) continue;
            int dr = pr + r - box.r0, dc = pc + c - box.c0;
            for (int ch = 0; ch < img.c; ++ch) composite.at(dr, dc, ch) = img.at(r, c, ch);
            out_mask.at(dr, dc) = 1;
        }
    }
    return {std::move(composite), make_region(std::move(out_mask))};
}

std::pair<RasterImage, AnomalyRegion> racp_generate(const RasterImage& normal,
                                                    const RasterImage& abnormal,
                                                    const AnomalyRegion& region, int s,
                                                    uint64_t seed) {
    Rng rng(splitmix64(seed) ^ 0x52AC9A57EC0117A9ull);
    AugmentPlan plan = draw_plan(s, rng);
    plan.seed = seed;
    return racp_apply(normal, abnormal, region, plan, rng);
}

}  // namespace bgad
