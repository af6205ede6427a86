#include "bgad/gradients.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>

namespace bgad {

void TensorGrads::resize_like(const CouplingBlock& blk) {
    w1.assign(blk.w1().size(), 0.0);
    b1.assign(blk.b1().size(), 0.0);
    w2.assign(blk.w2().size(), 0.0);
    b2.assign(blk.b2().size(), 0.0);
}

void TensorGrads::add(const TensorGrads& other) {
    for (size_t i = 0; i < w1.size(); ++i) w1[i] += other.w1[i];
    for (size_t i = 0; i < b1.size(); ++i) b1[i] += other.b1[i];
    for (size_t i = 0; i < w2.size(); ++i) w2[i] += other.w2[i];
    for (size_t i = 0; i < b2.size(); ++i) b2[i] += other.b2[i];
}

void TensorGrads::scale(double f) {
    for (auto& v : w1) v *= f;
    for (auto& v : b1) v *= f;
    for (auto& v : w2) v *= f;
    for (auto& v : b2) v *= f;
}

double TensorGrads::squared_norm() const {
    double acc = 0.0;
    for (double v : w1) acc += v * v;
    for (double v : b1) acc += v * v;
    for (double v : w2) acc += v * v;
    for (double v : b2) acc += v * v;
    return acc;
}

void GradientSet::resize_like(const FlowModel& model) {
    blocks.resize(model.num_blocks());
    for (size_t b = 0; b < blocks.size(); ++b) blocks[b].resize_like(model.block(b));
}

namespace {

struct SampleTerms {
    double a = 0.0;      // dL/d(log p) for this sample
    double ml = 0.0;     // weighted −log p (normals only)
    double bgspp = 0.0;  // weighted hinge value
};

void validate_config(const ObjectiveConfig& cfg) {
    if (cfg.phase != 1 && cfg.phase != 2) {
        throw std::invalid_argument("loss_and_gradients: phase must be 1 or 2");
    }
    if (cfg.phase == 2 && !cfg.boundary) {
        throw std::invalid_argument("loss_and_gradients: phase 2 requires a boundary");
    }
    if (cfg.lambda < 0.0) throw std::invalid_argument("loss_and_gradients: lambda must be >= 0");
}

SampleTerms sample_terms(double ll, Label label, const ObjectiveConfig& cfg, size_t n_normal) {
    SampleTerms t;
    const bool focal = cfg.phase == 2 && cfg.focal.has_value();
    if (label == Label::Normal) {
        double w = focal ? focal_weight_normal(ll, *cfg.focal) : 1.0;
        t.ml = w * (-ll);
        t.a = -w / static_cast<double>(n_normal);
        if (cfg.phase == 2) {
            const BoundaryState& b = *cfg.boundary;
            double norm = ll / b.alpha_n;
            if (norm < b.b_n) {
                t.bgspp = w * (b.b_n - norm);
                t.a += cfg.lambda * w * (-1.0 / b.alpha_n);
            }
        }
    } else if (cfg.phase == 2) {
        const BoundaryState& b = *cfg.boundary;
        double norm = ll / b.alpha_n;
        if (!is_extreme_normalized(norm)) {
            double w = focal ? focal_weight_abnormal(ll, *cfg.focal) : 1.0;
            if (norm > b.b_a) {
                t.bgspp = w * (norm - b.b_a);
                t.a += cfg.lambda * w * (1.0 / b.alpha_n);
            }
        }
    }
    return t;
}

size_t count_normals(std::span<const Sample> batch) {
    size_t n = 0;
    for (const auto& s : batch) {
        if (s.label == Label::Normal) ++n;
    }
    return n;
}

[[noreturn]] void fail_sample(int64_t id) {
    throw std::runtime_error("non-finite log-likelihood for sample " + std::to_string(id));
}

// Reverse pass through the whole flow for one sample: adds a · d(log p)/dθ
// to the per-block accumulators.
class BackwardScratch {
public:
    explicit BackwardScratch(const FlowModel& m)
        : d_(m.d()), z_(m.d()), g_out_(m.d()), g_v_(m.d()), g_next_(m.d()) {
        const auto& first = m.block(0);
        g_out2_.resize(2 * first.d2());
        g_h_.resize(first.hidden());
        g_u_.resize(first.d1() + first.d_c());
    }

    void run(const FlowModel& m, const Sample& s, const ObjectiveConfig& cfg, size_t n_normal,
             SampleTerms& terms, std::vector<TensorGrads>* grads) {
        double logdet = m.forward(s.features, s.condition, z_, grads ? &tapes_ : nullptr);
        double sq = 0.0;
        for (double v : z_) sq += v * v;
        double ll = -0.5 * sq + logdet - 0.5 * d_ * std::log(2.0 * std::numbers::pi);
        if (!std::isfinite(ll)) fail_sample(s.id);
        terms = sample_terms(ll, s.label, cfg, n_normal);
        if (!grads || terms.a == 0.0) return;

        const double a = terms.a;
        for (int i = 0; i < d_; ++i) g_out_[i] = a * (-z_[i]);

        for (size_t b = m.num_blocks(); b-- > 0;) {
            const CouplingBlock& blk = m.block(b);
            const CouplingBlock::Tape& tp = tapes_[b];
            TensorGrads& g = (*grads)[b];
            const int d1 = blk.d1(), d2 = blk.d2(), hidden = blk.hidden();
            const int n_in = d1 + blk.d_c();
            auto scale = blk.fixed_scale();
            const auto& perm = blk.permutation();

            // o = scale ⊙ (P v)
            for (int i = 0; i < d_; ++i) g_out_[i] *= static_cast<double>(scale[i]);
            for (int j = 0; j < d_; ++j) {
                double acc = 0.0;
                for (int i = 0; i < d_; ++i) acc += perm[static_cast<size_t>(i) * d_ + j] * g_out_[i];
                g_v_[j] = acc;
            }

            // v2 = x2 ⊙ e + t, logdet contributes a per s_c coordinate
            const double inv_pi2 = 2.0 / std::numbers::pi;
            for (int j = 0; j < d2; ++j) {
                double gv2 = g_v_[d1 + j];
                double g_sc = gv2 * tp.x2[j] * tp.e_sc[j] + a;
                double r = tp.s_raw[j] / blk.clamp_c();
                g_out2_[j] = g_sc * inv_pi2 / (1.0 + r * r);  // d soft_clamp / d s_raw
                g_out2_[d2 + j] = gv2;                        // t path
            }

            auto w2 = blk.w2();
            for (int j = 0; j < 2 * d2; ++j) {
                double go = g_out2_[j];
                g.b2[j] += go;
                double* gw2 = g.w2.data() + static_cast<size_t>(j) * hidden;
                for (int k = 0; k < hidden; ++k) gw2[k] += go * tp.h[k];
            }
            for (int k = 0; k < hidden; ++k) {
                double acc = 0.0;
                for (int j = 0; j < 2 * d2; ++j) {
                    acc += static_cast<double>(w2[static_cast<size_t>(j) * hidden + k]) * g_out2_[j];
                }
                g_h_[k] = tp.h[k] > 0.0 ? acc : 0.0;  // ReLU: zero-side subgradient at 0
            }

            auto w1 = blk.w1();
            for (int m_i = 0; m_i < n_in; ++m_i) g_u_[m_i] = 0.0;
            for (int k = 0; k < hidden; ++k) {
                double gh = g_h_[k];
                if (gh == 0.0) continue;
                g.b1[k] += gh;
                double* gw1 = g.w1.data() + static_cast<size_t>(k) * n_in;
                const float* w1row = w1.data() + static_cast<size_t>(k) * n_in;
                for (int m_i = 0; m_i < n_in; ++m_i) {
                    gw1[m_i] += gh * tp.u[m_i];
                    g_u_[m_i] += static_cast<double>(w1row[m_i]) * gh;
                }
            }

            for (int i = 0; i < d1; ++i) g_next_[i] = g_v_[i] + g_u_[i];
            for (int j = 0; j < d2; ++j) g_next_[d1 + j] = g_v_[d1 + j] * tp.e_sc[j];
            std::swap(g_out_, g_next_);
        }
    }

private:
    int d_;
    std::vector<double> z_, g_out_, g_v_, g_next_, g_out2_, g_h_, g_u_;
    std::vector<CouplingBlock::Tape> tapes_;
};

constexpr size_t kChunks = 16;

}  // namespace

GradientSet loss_and_gradients(const FlowModel& model, std::span<const Sample> batch,
                               const ObjectiveConfig& cfg, int threads) {
    if (batch.empty()) throw std::invalid_argument("loss_and_gradients: empty batch");
    validate_config(cfg);
    const size_t n_normal = count_normals(batch);
    if (n_normal == 0) throw std::invalid_argument("loss_and_gradients: batch has no normal samples");

    const size_t n = batch.size();
    std::vector<SampleTerms> terms(n);
    std::vector<std::vector<TensorGrads>> chunk_grads(kChunks);

    auto run_chunk = [&](size_t c, BackwardScratch& scratch) {
        size_t lo = c * n / kChunks, hi = (c + 1) * n / kChunks;
        if (lo == hi) return;
        chunk_grads[c].resize(model.num_blocks());
        for (size_t b = 0; b < model.num_blocks(); ++b) {
            chunk_grads[c][b].resize_like(model.block(b));
        }
        for (size_t i = lo; i < hi; ++i) {
            scratch.run(model, batch[i], cfg, n_normal, terms[i], &chunk_grads[c]);
        }
    };

    if (threads <= 1) {
        BackwardScratch scratch(model);
        for (size_t c = 0; c < kChunks; ++c) run_chunk(c, scratch);
    } else {
        std::atomic<size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mu;
        auto worker = [&] {
            BackwardScratch scratch(model);
            try {
                for (;;) {
                    size_t c = next.fetch_add(1);
                    if (c >= kChunks) return;
                    run_chunk(c, scratch);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
            }
        };
        std::vector<std::thread> pool;
        size_t n_workers = std::min<size_t>(static_cast<size_t>(threads), kChunks);
        pool.reserve(n_workers);
        for (size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
        if (error) std::rethrow_exception(error);
    }

    GradientSet out;
    out.resize_like(model);
    for (size_t c = 0; c < kChunks; ++c) {
        if (chunk_grads[c].empty()) continue;
        for (size_t b = 0; b < out.blocks.size(); ++b) out.blocks[b].add(chunk_grads[c][b]);
    }

    // scalar reduction in batch order, matching combined_loss bit for bit
    double ml_acc = 0.0, bg_acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ml_acc += terms[i].ml;
        bg_acc += terms[i].bgspp;
    }
    out.ml_value = ml_acc / static_cast<double>(n_normal);
    out.bgspp_value = bg_acc;
    out.loss_value = cfg.phase == 1 ? out.ml_value : out.ml_value + cfg.lambda * bg_acc;
    return out;
}

std::vector<double> frozen_coefficients(const FlowModel& model, std::span<const Sample> batch,
                                        const ObjectiveConfig& cfg) {
    if (batch.empty()) throw std::invalid_argument("frozen_coefficients: empty batch");
    validate_config(cfg);
    const size_t n_normal = count_normals(batch);
    if (n_normal == 0) {
        throw std::invalid_argument("frozen_coefficients: batch has no normal samples");
    }
    std::vector<double> coeffs(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        double ll = model.log_likelihood(batch[i].features, batch[i].condition);
        if (!std::isfinite(ll)) fail_sample(batch[i].id);
        coeffs[i] = sample_terms(ll, batch[i].label, cfg, n_normal).a;
    }
    return coeffs;
}

double loss_given_coeffs(const FlowModel& model, std::span<const Sample> batch,
                         std::span<const double> coeffs) {
    if (batch.size() != coeffs.size()) {
        throw std::invalid_argument("loss_given_coeffs: batch/coefficient length mismatch");
    }
    double acc = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
        acc += coeffs[i] * model.log_likelihood(batch[i].features, batch[i].condition);
    }
    return acc;
}

}  // namespace bgad
