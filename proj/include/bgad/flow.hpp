#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "bgad/rng.hpp"
#include "bgad/types.hpp"

namespace bgad {

inline constexpr double kDefaultClampC = 1.9;

// 2D-aware position embedding: first d_c/2 entries encode the row, last d_c/2
// the column, each as interleaved sin/cos at geometrically spaced frequencies
// with base 10000. d_c must be divisible by 4.
ConditionVector position_embedding(GridPosition pos, int grid_h, int grid_w, int d_c);

// s_c = (2c/pi) * atan(s/c); odd, monotone, |s_c| < c.
double soft_clamp(double s, double clamp_c);
std::vector<double> soft_clamp(std::span<const double> s, double clamp_c);

enum class PermKind { Identity, SeededOrthogonal };

struct PermSpec {
    PermKind kind = PermKind::SeededOrthogonal;
    uint32_t seed = 0;
};

// Random orthogonal d x d matrix (row-major): seeded Gaussian matrix
// orthogonalized by modified Gram-Schmidt with one re-orthogonalization pass.
std::vector<double> make_orthogonal(int d, uint32_t seed);

// One affine coupling step followed by a fixed soft channel permutation and a
// fixed per-channel scaling. The untouched half is x1 = y[0:d1]; the subnet
// sees (x1 ‖ cond) and jointly predicts the multiplicative coefficients s
// (soft-clamped) and the additive coefficients t for x2 = y[d1:d].
//
// forward:  v = [x1, x2 ⊙ exp(s_c) + t],  out = scale ⊙ (P·v)
//           logdet = Σ s_c + Σ log(scale)      (P orthogonal, contributes 0)
// inverse:  v = Pᵀ·(out ⊘ scale),  x2 = (v2 − t(v1)) ⊘ exp(s_c(v1))
class CouplingBlock {
public:
    // Zero-initialized output layer: the block starts as (permutation ∘ scale).
    // Hidden layer weights/biases use uniform fan-in scaling from init_rng.
    CouplingBlock(int d, int d_c, PermSpec perm, double clamp_c, Rng& init_rng);

    struct Tape {
        std::vector<double> u;      // subnet input (x1 ‖ cond)
        std::vector<double> h;      // hidden activations, post-ReLU
        std::vector<double> s_raw;  // pre-clamp multiplicative coefficients
        std::vector<double> e_sc;   // exp(soft_clamp(s_raw))
        std::vector<double> x2;     // transformed half of the input
    };

    // Returns the block log-determinant; writes the transformed vector into
    // y_out (may not alias y_in). When tape is non-null the intermediates
    // needed for backpropagation are recorded.
    double forward(std::span<const double> y_in, std::span<const double> cond,
                   std::span<double> y_out, Tape* tape = nullptr, int block_index = -1) const;

    void inverse(std::span<const double> y_out, std::span<const double> cond,
                 std::span<double> y_in, int block_index = -1) const;

    int d() const { return d_; }
    int d_c() const { return d_c_; }
    int d1() const { return d1_; }
    int d2() const { return d2_; }
    int hidden() const { return hidden_; }
    double clamp_c() const { return clamp_c_; }
    PermSpec perm_spec() const { return perm_spec_; }
    const std::vector<double>& permutation() const { return perm_; }

    std::span<float> w1() { return w1_; }
    std::span<float> b1() { return b1_; }
    std::span<float> w2() { return w2_; }
    std::span<float> b2() { return b2_; }
    std::span<const float> w1() const { return w1_; }
    std::span<const float> b1() const { return b1_; }
    std::span<const float> w2() const { return w2_; }
    std::span<const float> b2() const { return b2_; }

    std::span<const float> fixed_scale() const { return fixed_scale_; }
    // Entries must be strictly positive; throws otherwise.
    void set_fixed_scale(std::span<const float> scale);

    // max |PᵀP − I| over all entries
    double orthogonality_defect() const;

private:
    void subnet(std::span<const double> x1, std::span<const double> cond,
                std::vector<double>& u, std::vector<double>& h,
                std::vector<double>& s_raw, std::vector<double>& t,
                int block_index) const;

    int d_, d_c_, d1_, d2_, hidden_;
    double clamp_c_;
    PermSpec perm_spec_;
    std::vector<double> perm_;                 // d x d, row-major
    std::vector<float> w1_, b1_, w2_, b2_;     // trainable subnet parameters
    std::vector<float> fixed_scale_;           // frozen after data-dependent init
};

// Stack of L coupling blocks sharing (d, d_c), one flow per feature level.
// Immutable during evaluation; the trainer is the single writer.
class FlowModel {
public:
    FlowModel() = default;

    static FlowModel create(int d, int d_c, int num_blocks, int level, uint32_t seed,
                            double clamp_c = kDefaultClampC,
                            PermKind perm_kind = PermKind::SeededOrthogonal);

    // z and the total log-determinant; tapes (when given) is resized to L.
    double forward(std::span<const double> x, std::span<const double> cond,
                   std::span<double> z, std::vector<CouplingBlock::Tape>* tapes = nullptr) const;
    std::pair<LatentVector, double> forward(const FeatureVector& x, const ConditionVector& c) const;

    std::vector<double> inverse(std::span<const double> z, std::span<const double> cond) const;
    std::vector<double> inverse(const LatentVector& z, const ConditionVector& c) const;

    // log p(x) = −½ zᵀz + total_logdet − (d/2)·log(2π)
    double log_likelihood(std::span<const double> x, std::span<const double> cond) const;
    double log_likelihood(const FeatureVector& x, const ConditionVector& c) const;

    int d() const { return d_; }
    int d_c() const { return d_c_; }
    int level() const { return level_; }
    size_t num_blocks() const { return blocks_.size(); }
    CouplingBlock& block(size_t i) { return blocks_[i]; }
    const CouplingBlock& block(size_t i) const { return blocks_[i]; }
    std::vector<CouplingBlock>& blocks() { return blocks_; }
    const std::vector<CouplingBlock>& blocks() const { return blocks_; }

    size_t trainable_parameter_count() const;

private:
    std::vector<CouplingBlock> blocks_;
    int d_ = 0, d_c_ = 0, level_ = 0;
};

}  // namespace bgad
