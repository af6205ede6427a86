#pragma once

#include <optional>
#include <span>
#include <vector>

#include "bgad/types.hpp"

namespace bgad {

// Explicit separating boundary in normalized log-likelihood units. Immutable
// once built; rebuilds produce a new value.
struct BoundaryState {
    double b_n = 0.0;      // normal boundary, always −1/alpha after normalization
    double b_a = 0.0;      // abnormal boundary = b_n − tau
    double alpha_n = 0.0;  // normalizer, = −alpha·raw_b_n
    double beta = 0.0;     // percentile in (0, 100)
    double tau = 0.0;
    double alpha = 0.0;
};

// Hard-sample weighting. Thresholds and weights operate on raw
// (un-normalized) log-likelihoods.
struct FocalConfig {
    double alpha_norm = 15.0;
    double gamma_norm = 1.0;
    double logp_norm_threshold = -2.0;
    double alpha_abn = 0.53;
    double gamma_abn = 2.0;
    double logp_abn_threshold = -20.0;
};

struct ObjectiveConfig {
    int phase = 1;  // 1: likelihood only; 2: likelihood + boundary-guided semi-push-pull
    double lambda = 1.0;
    std::optional<BoundaryState> boundary;
    std::optional<FocalConfig> focal;
};

struct BoundReport {
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;
};

// mean of −log p over the batch
double ml_loss(std::span<const double> loglikelihoods);

// 1 − exp(logp − logp_max): stable, in [0, 1), strictly decreasing in logp
double anomaly_score(double logp, double logp_max);

// Nearest-rank percentile of the sorted values: rank ⌈beta·N/100⌉, 1-based,
// ascending. Strictly fewer than beta% of the values lie below the result.
double find_normal_boundary(std::span<const double> normal_logps, double beta);

// alpha_n = −alpha·raw_b_n, b_n = −1/alpha, b_a = b_n − tau. Requires
// raw_b_n < 0, alpha ≥ 1, 0 < tau ≤ 1 − 1/alpha (so b_a stays within [−1, 0)).
BoundaryState build_boundary(double raw_b_n, double alpha, double tau, double beta);

double normalize_logp(double logp, double alpha_n);

// normalized values below −1 are excluded from the abnormal push term
inline bool is_extreme_normalized(double logp_norm) { return logp_norm < -1.0; }

// Σ_i |min(logp_i − b_n, 0)| + Σ_j |max(logp_j − b_a, 0)| over normalized
// inputs; callers exclude extreme abnormal values first.
double bgspp_loss_l1(std::span<const double> normal_logps_norm,
                     std::span<const double> abnormal_logps_norm,
                     const BoundaryState& boundary);

// count of nonzero hinge terms; diagnostic only, never trained
int bgspp_loss_l0(std::span<const double> normal_logps_norm,
                  std::span<const double> abnormal_logps_norm,
                  const BoundaryState& boundary);

double focal_weight_normal(double logp, const FocalConfig& cfg);
double focal_weight_abnormal(double logp, const FocalConfig& cfg);

// Phase 1: mean weighted −log p over normal samples. Phase 2 adds
// lambda · (weighted pull hinges over normals + weighted push hinges over
// non-extreme abnormals), hinges in normalized units, weights in raw units.
double combined_loss(std::span<const double> raw_logps, std::span<const Label> labels,
                     const ObjectiveConfig& cfg);

// Error-bound diagnostic: lhs is the mean hinge mass outside the ε-shrunk
// margin, rhs = ((d/2)·log(2π) − ½)·(b_n − b_a)/λ + N/(N+M).
BoundReport bound_report(std::span<const double> normal_logps_norm,
                         std::span<const double> abnormal_logps_norm,
                         const BoundaryState& boundary, double epsilon, double lambda, int d);

}  // namespace bgad
