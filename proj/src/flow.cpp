#include "bgad/flow.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace bgad {

namespace {

[[noreturn]] void fail_block(int block_index, const char* what) {
    char buf[128];
    if (block_index >= 0) {
        std::snprintf(buf, sizeof(buf), "coupling block %d: %s", block_index, what);
    } else {
        std::snprintf(buf, sizeof(buf), "coupling block: %s", what);
    }
    throw std::runtime_error(buf);
}

}  // namespace

ConditionVector position_embedding(GridPosition pos, int grid_h, int grid_w, int d_c) {
    if (d_c <= 0 || d_c % 4 != 0) {
        throw std::invalid_argument("position_embedding: d_c must be positive and divisible by 4");
    }
    if (pos.row < 0 || pos.row >= grid_h || pos.col < 0 || pos.col >= grid_w) {
        throw std::invalid_argument("position_embedding: position outside grid");
    }
    const int half = d_c / 2;
    const int pairs = d_c / 4;
    ConditionVector c;
    c.values.resize(d_c);
    for (int k = 0; k < pairs; ++k) {
        double freq = std::pow(10000.0, -static_cast<double>(k) / pairs);
        c.values[2 * k] = std::sin(pos.row * freq);
        c.values[2 * k + 1] = std::cos(pos.row * freq);
        c.values[half + 2 * k] = std::sin(pos.col * freq);
        c.values[half + 2 * k + 1] = std::cos(pos.col * freq);
    }
    return c;
}

double soft_clamp(double s, double clamp_c) {
    return (2.0 * clamp_c / std::numbers::pi) * std::atan(s / clamp_c);
}

std::vector<double> soft_clamp(std::span<const double> s, double clamp_c) {
    if (!(clamp_c > 0.0)) throw std::invalid_argument("soft_clamp: clamp_c must be positive");
    std::vector<double> out(s.size());
    for (size_t i = 0; i < s.size(); ++i) out[i] = soft_clamp(s[i], clamp_c);
    return out;
}

std::vector<double> make_orthogonal(int d, uint32_t seed) {
    Rng rng(splitmix64(0x5EED0DD5ull ^ seed));
    std::vector<double> m(static_cast<size_t>(d) * d);
    for (auto& v : m) v = rng.normal();
    // modified Gram-Schmidt on rows, run twice
    for (int pass = 0; pass < 2; ++pass) {
        for (int i = 0; i < d; ++i) {
            double* ri = m.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < i; ++j) {
                const double* rj = m.data() + static_cast<size_t>(j) * d;
                double dot = 0.0;
                for (int k = 0; k < d; ++k) dot += ri[k] * rj[k];
                for (int k = 0; k < d; ++k) ri[k] -= dot * rj[k];
            }
            double norm = 0.0;
            for (int k = 0; k < d; ++k) norm += ri[k] * ri[k];
            norm = std::sqrt(norm);
            if (norm < 1e-12) throw std::runtime_error("make_orthogonal: degenerate draw");
            for (int k = 0; k < d; ++k) ri[k] /= norm;
        }
    }
    return m;
}

CouplingBlock::CouplingBlock(int d, int d_c, PermSpec perm, double clamp_c, Rng& init_rng)
    : d_(d), d_c_(d_c), d1_(d / 2), d2_(d - d / 2), clamp_c_(clamp_c), perm_spec_(perm) {
    if (d < 1) throw std::invalid_argument("CouplingBlock: d must be >= 1");
    if (d_c < 0) throw std::invalid_argument("CouplingBlock: d_c must be >= 0");
    if (!(clamp_c > 0.0)) throw std::invalid_argument("CouplingBlock: clamp_c must be positive");

    const int n_in = d1_ + d_c_;
    hidden_ = 2 * n_in;
    const int n_out = 2 * d2_;

    w1_.resize(static_cast<size_t>(hidden_) * n_in);
    b1_.resize(hidden_);
    w2_.assign(static_cast<size_t>(n_out) * hidden_, 0.0f);  // zero: block starts as perm ∘ scale
    b2_.assign(n_out, 0.0f);

    const double bound = 1.0 / std::sqrt(static_cast<double>(n_in));
    for (auto& w : w1_) w = static_cast<float>(init_rng.uniform(-bound, bound));
    for (auto& b : b1_) b = static_cast<float>(init_rng.uniform(-bound, bound));

    if (perm.kind == PermKind::Identity) {
        perm_.assign(static_cast<size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) perm_[static_cast<size_t>(i) * d + i] = 1.0;
    } else {
        perm_ = make_orthogonal(d, perm.seed);
    }

    fixed_scale_.assign(d, 1.0f);
}

void CouplingBlock::set_fixed_scale(std::span<const float> scale) {
    if (static_cast<int>(scale.size()) != d_) {
        throw std::invalid_argument("set_fixed_scale: length mismatch");
    }
    for (float s : scale) {
        if (!(s > 0.0f) || !std::isfinite(s)) {
            throw std::invalid_argument("set_fixed_scale: entries must be strictly positive and finite");
        }
    }
    fixed_scale_.assign(scale.begin(), scale.end());
}

double CouplingBlock::orthogonality_defect() const {
    double worst = 0.0;
    for (int i = 0; i < d_; ++i) {
        for (int j = 0; j < d_; ++j) {
            double dot = 0.0;
            for (int k = 0; k < d_; ++k) {
                dot += perm_[static_cast<size_t>(k) * d_ + i] * perm_[static_cast<size_t>(k) * d_ + j];
            }
            double target = (i == j) ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(dot - target));
        }
    }
    return worst;
}

void CouplingBlock::subnet(std::span<const double> x1, std::span<const double> cond,
                           std::vector<double>& u, std::vector<double>& h,
                           std::vector<double>& s_raw, std::vector<double>& t,
                           int block_index) const {
    const int n_in = d1_ + d_c_;
    u.resize(n_in);
    for (int i = 0; i < d1_; ++i) u[i] = x1[i];
    for (int i = 0; i < d_c_; ++i) u[d1_ + i] = cond[i];

    h.resize(hidden_);
    for (int k = 0; k < hidden_; ++k) {
        double acc = b1_[k];
        const float* row = w1_.data() + static_cast<size_t>(k) * n_in;
        for (int m = 0; m < n_in; ++m) acc += static_cast<double>(row[m]) * u[m];
        h[k] = acc > 0.0 ? acc : 0.0;
    }

    s_raw.resize(d2_);
    t.resize(d2_);
    for (int j = 0; j < 2 * d2_; ++j) {
        double acc = b2_[j];
        const float* row = w2_.data() + static_cast<size_t>(j) * hidden_;
        for (int k = 0; k < hidden_; ++k) acc += static_cast<double>(row[k]) * h[k];
        if (!std::isfinite(acc)) fail_block(block_index, "non-finite subnet output");
        if (j < d2_) {
            s_raw[j] = acc;
        } else {
            t[j - d2_] = acc;
        }
    }
}

double CouplingBlock::forward(std::span<const double> y_in, std::span<const double> cond,
                              std::span<double> y_out, Tape* tape, int block_index) const {
    if (static_cast<int>(y_in.size()) != d_ || static_cast<int>(y_out.size()) != d_) {
        fail_block(block_index, "input length mismatch");
    }
    if (static_cast<int>(cond.size()) != d_c_) {
        fail_block(block_index, "condition length mismatch");
    }

    std::vector<double> u, h, s_raw, t;
    subnet(y_in.first(d1_), cond, u, h, s_raw, t, block_index);

    // v = [x1, x2 ⊙ exp(s_c) + t]
    std::vector<double> v(d_);
    for (int i = 0; i < d1_; ++i) v[i] = y_in[i];
    double logdet = 0.0;
    std::vector<double> e_sc(d2_);
    for (int j = 0; j < d2_; ++j) {
        double sc = soft_clamp(s_raw[j], clamp_c_);
        logdet += sc;
        e_sc[j] = std::exp(sc);
        v[d1_ + j] = y_in[d1_ + j] * e_sc[j] + t[j];
    }

    for (int i = 0; i < d_; ++i) {
        double acc = 0.0;
        const double* row = perm_.data() + static_cast<size_t>(i) * d_;
        for (int j = 0; j < d_; ++j) acc += row[j] * v[j];
        y_out[i] = acc * fixed_scale_[i];
    }
    for (int i = 0; i < d_; ++i) logdet += std::log(static_cast<double>(fixed_scale_[i]));

    if (tape) {
        tape->u = std::move(u);
        tape->h = std::move(h);
        tape->s_raw = std::move(s_raw);
        tape->e_sc = std::move(e_sc);
        tape->x2.assign(y_in.begin() + d1_, y_in.end());
    }
    return logdet;
}

void CouplingBlock::inverse(std::span<const double> y_out, std::span<const double> cond,
                            std::span<double> y_in, int block_index) const {
    if (static_cast<int>(y_out.size()) != d_ || static_cast<int>(y_in.size()) != d_) {
        fail_block(block_index, "input length mismatch");
    }
    if (static_cast<int>(cond.size()) != d_c_) {
        fail_block(block_index, "condition length mismatch");
    }

    // v = Pᵀ (out ⊘ scale)
    std::vector<double> w(d_), v(d_);
    for (int i = 0; i < d_; ++i) w[i] = y_out[i] / static_cast<double>(fixed_scale_[i]);
    for (int j = 0; j < d_; ++j) {
        double acc = 0.0;
        for (int i = 0; i < d_; ++i) acc += perm_[static_cast<size_t>(i) * d_ + j] * w[i];
        v[j] = acc;
    }

    std::vector<double> u, h, s_raw, t;
    subnet(std::span<const double>(v).first(d1_), cond, u, h, s_raw, t, block_index);

    for (int i = 0; i < d1_; ++i) y_in[i] = v[i];
    for (int j = 0; j < d2_; ++j) {
        double sc = soft_clamp(s_raw[j], clamp_c_);
        y_in[d1_ + j] = (v[d1_ + j] - t[j]) / std::exp(sc);
    }
}

FlowModel FlowModel::create(int d, int d_c, int num_blocks, int level, uint32_t seed,
                            double clamp_c, PermKind perm_kind) {
    if (num_blocks < 1) throw std::invalid_argument("FlowModel: need at least one coupling block");
    FlowModel m;
    m.d_ = d;
    m.d_c_ = d_c;
    m.level_ = level;
    Rng init(splitmix64(seed) ^ 0xB10C5EEDull);
    m.blocks_.reserve(num_blocks);
    for (int b = 0; b < num_blocks; ++b) {
        PermSpec spec{perm_kind, static_cast<uint32_t>(splitmix64(seed + 0x9E37u * (b + 1)))};
        m.blocks_.emplace_back(d, d_c, spec, clamp_c, init);
    }
    return m;
}

double FlowModel::forward(std::span<const double> x, std::span<const double> cond,
                          std::span<double> z, std::vector<CouplingBlock::Tape>* tapes) const {
    if (blocks_.empty()) throw std::logic_error("FlowModel: empty model");
    if (tapes) tapes->resize(blocks_.size());
    std::vector<double> cur(x.begin(), x.end()), next(d_);
    double total_logdet = 0.0;
    for (size_t b = 0; b < blocks_.size(); ++b) {
        total_logdet += blocks_[b].forward(cur, cond, next, tapes ? &(*tapes)[b] : nullptr,
                                           static_cast<int>(b));
        std::swap(cur, next);
    }
    for (int i = 0; i < d_; ++i) z[i] = cur[i];
    return total_logdet;
}

std::pair<LatentVector, double> FlowModel::forward(const FeatureVector& x,
                                                   const ConditionVector& c) const {
    for (double v : x.values) {
        if (!std::isfinite(v)) throw std::invalid_argument("flow forward: non-finite input");
    }
    LatentVector z;
    z.values.resize(d_);
    double logdet = forward(x.values, c.values, z.values);
    return {std::move(z), logdet};
}

std::vector<double> FlowModel::inverse(std::span<const double> z,
                                       std::span<const double> cond) const {
    std::vector<double> cur(z.begin(), z.end()), prev(d_);
    for (size_t b = blocks_.size(); b-- > 0;) {
        blocks_[b].inverse(cur, cond, prev, static_cast<int>(b));
        std::swap(cur, prev);
    }
    return cur;
}

std::vector<double> FlowModel::inverse(const LatentVector& z, const ConditionVector& c) const {
    return inverse(std::span<const double>(z.values), std::span<const double>(c.values));
}

double FlowModel::log_likelihood(std::span<const double> x, std::span<const double> cond) const {
    std::vector<double> z(d_);
    double logdet = forward(x, cond, z);
    double sq = 0.0;
    for (double v : z) sq += v * v;
    return -0.5 * sq + logdet - 0.5 * d_ * std::log(2.0 * std::numbers::pi);
}

double FlowModel::log_likelihood(const FeatureVector& x, const ConditionVector& c) const {
    for (double v : x.values) {
        if (!std::isfinite(v)) throw std::invalid_argument("log_likelihood: non-finite input");
    }
    return log_likelihood(std::span<const double>(x.values), std::span<const double>(c.values));
}

size_t FlowModel::trainable_parameter_count() const {
    size_t n = 0;
    for (const auto& b : blocks_) {
        n += b.w1().size() + b.b1().size() + b.w2().size() + b.b2().size();
    }
    return n;
}

}  // namespace bgad
