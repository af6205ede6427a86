#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bgad/mask.hpp"

namespace bgad {

struct AnomalyMap {
    int h = 0, w = 0;
    std::vector<double> scores;  // row-major, in [0, 1]
    int64_t sample_id = -1;
};

struct RocPoint {
    double threshold = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;
};

// One feature level's log-likelihood grid, row-major.
struct LevelGrid {
    int h = 0, w = 0;
    std::vector<double> logps;
};

// Per level: score against the level max, bilinearly upsample to image size
// (source coordinate = destination · source_dim/destination_dim, so integral
// upsampling factors hit grid points exactly), average levels, Gaussian
// smooth, clamp to [0, 1].
AnomalyMap assemble_map(std::span<const LevelGrid> levels, int img_h, int img_w,
                        double smoothing_sigma, int64_t sample_id = -1);

std::vector<double> bilinear_upsample(const std::vector<double>& src, int src_h, int src_w,
                                      int dst_h, int dst_w);

// separable convolution with replicated edges, radius ⌈3σ⌉; σ = 0 is a no-op
void gaussian_smooth(std::vector<double>& img, int h, int w, double sigma);

// Mann–Whitney statistic with average ranks over ties:
// P(score_abnormal > score_normal) + ½·P(tie). Labels: 0 normal, 1 anomalous.
double auroc(std::span<const double> scores, std::span<const uint8_t> labels);

// descending threshold sweep; one point per distinct score
std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const uint8_t> labels);

double image_score(const AnomalyMap& map);

// Per-region-overlap: at each threshold of a descending sweep, the mean
// overlap over all 8-connected ground-truth components against the global
// pixel false-positive rate, integrated over FPR ∈ [0, fpr_limit] by
// trapezoid and normalized by fpr_limit. Distinct thresholds capped at 5000
// (quantile-spaced beyond that).
double pro(std::span<const AnomalyMap> maps, std::span<const Mask> gt_masks,
           double fpr_limit = 0.3);

}  // namespace bgad
