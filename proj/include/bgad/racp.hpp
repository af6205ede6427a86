#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bgad/image.hpp"
#include "bgad/mask.hpp"
#include "bgad/rng.hpp"
#include "bgad/types.hpp"

namespace bgad {

// Half-open pixel box [r0, r1) x [c0, c1).
struct Box {
    int r0 = 0, c0 = 0, r1 = 0, c1 = 0;

    int height() const { return r1 - r0; }
    int width() const { return c1 - c0; }
};

// Anomalous pixels of one sample plus the bounding boxes of their
// 8-connected components (one box per component, in component-id order).
struct AnomalyRegion {
    Mask mask;
    std::vector<Box> boxes;
};

AnomalyRegion make_region(Mask mask);

enum class TransformKind {
    AutoContrast,
    Equalize,
    Rotate,
    Posterize,
    Solarize,
    Brightness,
    Sharpness,
    Translate,
    Shear,
};

inline constexpr int kNumTransforms = 9;

const char* to_string(TransformKind kind);
TransformKind transform_from_string(const std::string& name);

// Inclusive magnitude range; parameterless transforms report {0, 0}.
//   Rotate: degrees +-30; Posterize: kept bits 4..8; Solarize: threshold
//   0..255; Brightness/Sharpness: factor 0.1..1.9; Translate: fraction of
//   the side +-0.1; Shear: +-0.3.
std::pair<double, double> magnitude_range(TransformKind kind);

struct TransformSpec {
    TransformKind kind = TransformKind::AutoContrast;
    double magnitude = 0.0;
    double probability = 1.0;
};

struct AugmentPlan {
    std::vector<TransformSpec> subset;  // applied in order, each gated by its probability
    uint64_t seed = 0;
    std::optional<GridPosition> paste_location;  // destination of the region box; empty = random
};

// Applies one transform. Geometric kinds (Rotate, Translate, Shear) warp the
// image bilinearly and the mask nearest-neighbor, both with edge replication;
// photometric kinds leave the region untouched. Dimensions are preserved.
std::pair<RasterImage, AnomalyRegion> apply_transform(const RasterImage& img,
                                                      const AnomalyRegion& region,
                                                      const TransformSpec& t, Rng& rng);

// Draws a subset of size s without replacement, with uniformly random
// magnitudes inside each documented range and probability 1.
AugmentPlan draw_plan(int s, Rng& rng);

std::pair<RasterImage, AnomalyRegion> racp_apply(const RasterImage& normal,
                                                 const RasterImage& abnormal,
                                                 const AnomalyRegion& region,
                                                 const AugmentPlan& plan, Rng& rng);

// Full pipeline: draw a plan of size s, transform (abnormal, region), cut the
// region and paste it into the normal image at a uniformly random in-bounds
// offset. Pure function of its arguments.
std::pair<RasterImage, AnomalyRegion> racp_generate(const RasterImage& normal,
                                                    const RasterImage& abnormal,
                                                    const AnomalyRegion& region, int s,
                                                    uint64_t seed);

}  // namespace bgad
