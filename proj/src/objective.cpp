#include "bgad/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace bgad {

double ml_loss(std::span<const double> loglikelihoods) {
    if (loglikelihoods.empty()) throw std::invalid_argument("ml_loss: empty batch");
    double acc = 0.0;
    for (double lp : loglikelihoods) {
        if (!std::isfinite(lp)) throw std::invalid_argument("ml_loss: non-finite log-likelihood");
        acc -= lp;
    }
    return acc / static_cast<double>(loglikelihoods.size());
}

double anomaly_score(double logp, double logp_max) {
    if (logp > logp_max) {
        throw std::invalid_argument("anomaly_score: logp exceeds the supplied batch maximum");
    }
    return -std::expm1(logp - logp_max);
}

double find_normal_boundary(std::span<const double> normal_logps, double beta) {
    if (normal_logps.empty()) throw std::invalid_argument("find_normal_boundary: empty list");
    if (!(beta > 0.0) || !(beta < 100.0)) {
        throw std::invalid_argument("find_normal_boundary: beta must lie in (0, 100)");
    }
    std::vector<double> sorted(normal_logps.begin(), normal_logps.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<size_t>(std::ceil(beta * n / 100.0));
    rank = std::max<size_t>(rank, 1);
    return sorted[rank - 1];
}

BoundaryState build_boundary(double raw_b_n, double alpha, double tau, double beta) {
    if (!(raw_b_n < 0.0)) {
        throw std::invalid_argument(
            "build_boundary: raw normal boundary must be negative (normalized regime)");
    }
    if (!(alpha >= 1.0)) throw std::invalid_argument("build_boundary: alpha must be >= 1");
    if (!(tau > 0.0)) throw std::invalid_argument("build_boundary: tau must be positive");
    if (tau > 1.0 - 1.0 / alpha) {
        throw std::invalid_argument("build_boundary: tau too large, b_a would leave [-1, 0)");
    }
    BoundaryState s;
    s.alpha_n = -alpha * raw_b_n;
    s.b_n = raw_b_n / s.alpha_n;  // = −1/alpha
    s.b_a = s.b_n - tau;
    s.beta = beta;
    s.tau = tau;
    s.alpha = alpha;
    return s;
}

double normalize_logp(double logp, double alpha_n) {
    if (!(alpha_n > 0.0)) throw std::invalid_argument("normalize_logp: alpha_n must be positive");
    return logp / alpha_n;
}

double bgspp_loss_l1(std::span<const double> normal_logps_norm,
                     std::span<const double> abnormal_logps_norm,
                     const BoundaryState& boundary) {
    double acc = 0.0;
    for (double lp : normal_logps_norm) {
        acc += std::max(boundary.b_n - lp, 0.0);  // |min(lp − b_n, 0)|
    }
    for (double lp : abnormal_logps_norm) {
        acc += std::max(lp - boundary.b_a, 0.0);
    }
    return acc;
}

int bgspp_loss_l0(std::span<const double> normal_logps_norm,
                  std::span<const double> abnormal_logps_norm,
                  const BoundaryState& boundary) {
    int count = 0;
    for (double lp : normal_logps_norm) {
        if (lp < boundary.b_n) ++count;
    }
    for (double lp : abnormal_logps_norm) {
        if (lp > boundary.b_a) ++count;
    }
    return count;
}

double focal_weight_normal(double logp, const FocalConfig& cfg) {
    if (!std::isfinite(logp)) throw std::invalid_argument("focal_weight_normal: non-finite logp");
    if (logp > cfg.logp_norm_threshold) return 1.0;
    return -cfg.alpha_norm * std::pow(1.0 - std::exp(logp), cfg.gamma_norm) * logp;
}

double focal_weight_abnormal(double logp, const FocalConfig& cfg) {
    if (!std::isfinite(logp)) throw std::invalid_argument("focal_weight_abnormal: non-finite logp");
    if (logp <= cfg.logp_abn_threshold) return 1.0;
    if (logp >= 0.0) {
        throw std::invalid_argument(
            "focal_weight_abnormal: non-negative logp in the reciprocal branch");
    }
    return -cfg.alpha_abn * std::pow(1.0 + std::exp(logp), cfg.gamma_abn) / logp;
}

double combined_loss(std::span<const double> raw_logps, std::span<const Label> labels,
                     const ObjectiveConfig& cfg) {
    if (raw_logps.size() != labels.size()) {
        throw std::invalid_argument("combined_loss: logp/label length mismatch");
    }
    if (cfg.phase != 1 && cfg.phase != 2) {
        throw std::invalid_argument("combined_loss: phase must be 1 or 2");
    }
    if (cfg.phase == 2 && !cfg.boundary) {
        throw std::invalid_argument("combined_loss: phase 2 requires a boundary");
    }
    if (cfg.lambda < 0.0) throw std::invalid_argument("combined_loss: lambda must be >= 0");

    // focal weighting belongs to the boundary-guided phase; phase 1 is the
    // plain likelihood objective
    const bool focal = cfg.phase == 2 && cfg.focal.has_value();

    double ml_acc = 0.0;
    size_t n_normal = 0;
    for (size_t i = 0; i < raw_logps.size(); ++i) {
        if (labels[i] != Label::Normal) continue;
        double w = focal ? focal_weight_normal(raw_logps[i], *cfg.focal) : 1.0;
        ml_acc += w * (-raw_logps[i]);
        ++n_normal;
    }
    if (n_normal == 0) throw std::invalid_argument("combined_loss: batch has no normal samples");
    double loss = ml_acc / static_cast<double>(n_normal);

    if (cfg.phase == 1) return loss;

    const BoundaryState& b = *cfg.boundary;
    double bgspp = 0.0;
    for (size_t i = 0; i < raw_logps.size(); ++i) {
        double norm = normalize_logp(raw_logps[i], b.alpha_n);
        if (labels[i] == Label::Normal) {
            double w = focal ? focal_weight_normal(raw_logps[i], *cfg.focal) : 1.0;
            bgspp += w * std::max(b.b_n - norm, 0.0);
        } else {
            if (is_extreme_normalized(norm)) continue;
            double w = focal ? focal_weight_abnormal(raw_logps[i], *cfg.focal) : 1.0;
            bgspp += w * std::max(norm - b.b_a, 0.0);
        }
    }
    return loss + cfg.lambda * bgspp;
}

BoundReport bound_report(std::span<const double> normal_logps_norm,
                         std::span<const double> abnormal_logps_norm,
                         const BoundaryState& boundary, double epsilon, double lambda, int d) {
    const double margin = boundary.b_n - boundary.b_a;
    if (!(epsilon > 0.0) || !(epsilon < margin)) {
        throw std::invalid_argument("bound_report: epsilon must lie in (0, b_n - b_a)");
    }
    if (!(lambda > 0.0)) throw std::invalid_argument("bound_report: lambda must be positive");
    if (normal_logps_norm.empty()) throw std::invalid_argument("bound_report: no normal samples");
    if (d < 1) throw std::invalid_argument("bound_report: d must be >= 1");

    double lhs_n = 0.0;
    for (double lp : normal_logps_norm) lhs_n += std::max(boundary.b_n - epsilon - lp, 0.0);
    lhs_n /= static_cast<double>(normal_logps_norm.size());

    double lhs_a = 0.0;
    if (!abnormal_logps_norm.empty()) {
        for (double lp : abnormal_logps_norm) {
            lhs_a += std::max(lp - (boundary.b_a + epsilon), 0.0);
        }
        lhs_a /= static_cast<double>(abnormal_logps_norm.size());
    }

    const double n = static_cast<double>(normal_logps_norm.size());
    const double m = static_cast<double>(abnormal_logps_norm.size());
    BoundReport r;
    r.lhs = lhs_n + lhs_a;
    r.rhs = (0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5) * margin / lambda + n / (n + m);
    r.slack = r.rhs - r.lhs;
    return r;
}

}  // namespace bgad
