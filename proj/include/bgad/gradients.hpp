#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bgad/flow.hpp"
#include "bgad/objective.hpp"

namespace bgad {

// Flat view of one training sample; the owner keeps the backing storage alive.
struct Sample {
    std::span<const double> features;   // length d
    std::span<const double> condition;  // length d_c
    Label label = Label::Normal;
    int64_t id = -1;
};

// Mirrors the trainable tensors of one CouplingBlock, in double precision.
struct TensorGrads {
    std::vector<double> w1, b1, w2, b2;

    void resize_like(const CouplingBlock& blk);
    void add(const TensorGrads& other);
    void scale(double f);
    double squared_norm() const;
};

struct GradientSet {
    std::vector<TensorGrads> blocks;
    double loss_value = 0.0;
    double ml_value = 0.0;     // mean weighted −log p over normal samples
    double bgspp_value = 0.0;  // semi-push-pull hinge sum (before lambda)

    void resize_like(const FlowModel& model);
};

// Forward-evaluates the configured objective on the batch and analytically
// backpropagates it through every coupling subnet. Fixed scales and
// permutations are frozen (gradient zero). Hinge kinks take the zero-side
// subgradient; focal weights and the boundary are constants under
// differentiation. Deterministic for a fixed batch order, independent of
// the thread count.
GradientSet loss_and_gradients(const FlowModel& model, std::span<const Sample> batch,
                               const ObjectiveConfig& cfg, int threads = 1);

// dL/d(log p_i) per sample at the current parameters, with focal weights and
// hinge activity frozen. The objective restricted to these coefficients is
// affine in the log-likelihoods, which makes finite differences of
// loss_given_coeffs an exact probe of the analytic gradients.
std::vector<double> frozen_coefficients(const FlowModel& model, std::span<const Sample> batch,
                                        const ObjectiveConfig& cfg);

// Σ_i coeffs[i] · log p_i(model); companion of frozen_coefficients.
double loss_given_coeffs(const FlowModel& model, std::span<const Sample> batch,
                         std::span<const double> coeffs);

}  // namespace bgad
