// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the exit code is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bgad/data.hpp"
#include "bgad/flow.hpp"
#include "bgad/gradients.hpp"
#include "bgad/kv.hpp"
#include "bgad/metrics.hpp"
#include "bgad/objective.hpp"
#include "bgad/png_io.hpp"
#include "bgad/racp.hpp"
#include "bgad/rng.hpp"
#include "bgad/trainer.hpp"

using namespace bgad;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- helpers

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt(const char* pattern, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), pattern, a, b);
    return buf;
}

void expect(bool ok, const std::string& message) {
    if (!ok) throw Failure(message);
}

// random weights in the zero-initialized output layers so the flows are
// genuinely nonlinear
void perturb_model(FlowModel& model, Rng& rng, double sigma, bool randomize_scale) {
    for (auto& blk : model.blocks()) {
        for (float& v : blk.w2()) v = static_cast<float>(rng.normal() * sigma);
        for (float& v : blk.b2()) v = static_cast<float>(rng.normal() * sigma);
        if (randomize_scale) {
            std::vector<float> scale(static_cast<size_t>(blk.d()));
            for (float& v : scale) v = static_cast<float>(std::exp(rng.normal() * 0.2));
            blk.set_fixed_scale(scale);
        }
    }
}

std::vector<double> random_vec(Rng& rng, int n, double sigma) {
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.normal() * sigma;
    return v;
}

// log|det A| by Gaussian elimination with partial pivoting
double log_abs_det(std::vector<double> a, int n) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
        int pivot = k;
        for (int r = k + 1; r < n; ++r) {
            if (std::abs(a[r * n + k]) > std::abs(a[pivot * n + k])) pivot = r;
        }
        if (pivot != k) {
            for (int c = 0; c < n; ++c) std::swap(a[k * n + c], a[pivot * n + c]);
        }
        double p = a[k * n + k];
        expect(p != 0.0, "finite-difference Jacobian is singular");
        acc += std::log(std::abs(p));
        for (int r = k + 1; r < n; ++r) {
            double f = a[r * n + k] / p;
            for (int c = k; c < n; ++c) a[r * n + c] -= f * a[k * n + c];
        }
    }
    return acc;
}

// ------------------------------------------------ shared end-to-end runs

struct EndToEnd {
    Dataset train_ds, test_ds;
    TrainConfig base;
    Checkpoint lambda1, lambda0;
    double auroc_lambda1 = 0.0;
};

Dataset make_cluster(int n_normal, int n_abnormal, int d, uint64_t seed,
                     const std::string& split) {
    SynthConfig cfg;
    cfg.kind = "gaussian-cluster";
    cfg.n_normal = n_normal;
    cfg.n_abnormal = n_abnormal;
    cfg.d = d;
    cfg.seed = seed;
    cfg.split = split;
    return synth_dataset(cfg);
}

double held_out_auroc(const Checkpoint& ckpt, const Dataset& test_ds) {
    std::vector<double> scores;
    std::vector<uint8_t> labels;
    for (const SampleScore& s : score_dataset(ckpt, test_ds)) {
        scores.push_back(s.score);
        labels.push_back(s.label == Label::Abnormal ? 1 : 0);
    }
    return auroc(scores, labels);
}

// fraction of training positions whose hinge is active under the stored
// boundary at the final parameters
double margin_occupancy(const Checkpoint& ckpt, const Dataset& train_ds) {
    const LevelState& state = ckpt.levels.at(0);
    expect(state.boundary.has_value(), "trained checkpoint lacks a boundary");
    LevelPool pool = build_level_pool(train_ds, 0, ckpt.config.cond_dim);
    std::vector<double> norm, abn;
    for (const Sample& s : pool.samples) {
        double v = normalize_logp(state.model.log_likelihood(s.features, s.condition),
                                  state.boundary->alpha_n);
        if (s.label == Label::Normal) {
            norm.push_back(v);
        } else if (!is_extreme_normalized(v)) {
            abn.push_back(v);
        }
    }
    int l0 = bgspp_loss_l0(norm, abn, *state.boundary);
    return static_cast<double>(l0) / static_cast<double>(pool.samples.size());
}

const EndToEnd& end_to_end() {
    static EndToEnd e = [] {
        EndToEnd r;
        r.train_ds = make_cluster(2000, 5, 8, 31, "train");
        r.test_ds = make_cluster(500, 100, 8, 32, "test");
        r.base = TrainConfig{};
        r.base.epochs = 60;
        r.base.seed = 1;
        r.lambda1 = train(r.train_ds, r.base);
        TrainConfig c0 = r.base;
        c0.lambda = 0.0;
        r.lambda0 = train(r.train_ds, c0);
        r.auroc_lambda1 = held_out_auroc(r.lambda1, r.test_ds);
        return r;
    }();
    return e;
}

// ------------------------------------------------------------- criteria

std::string criterion_invertibility() {
    uint32_t seed = 1;
    double worst = 0.0;
    for (int d : {2, 4, 8}) {
        for (int blocks : {1, 4, 8}) {
            for (int trial = 0; trial < 112; ++trial) {
                Rng rng(seed * 7919ull + 13);
                FlowModel model = FlowModel::create(d, 4, blocks, 0, seed++, kDefaultClampC,
                                                    PermKind::SeededOrthogonal);
                perturb_model(model, rng, 0.3, true);
                std::vector<double> x = random_vec(rng, d, 2.0);
                std::vector<double> cond = random_vec(rng, 4, 1.0);
                std::vector<double> z(static_cast<size_t>(d));
                model.forward(x, cond, z);
                std::vector<double> back = model.inverse(z, cond);
                double num = 0.0, den = 1.0;
                for (int i = 0; i < d; ++i) {
                    num = std::max(num, std::abs(back[i] - x[i]));
                    den = std::max(den, std::abs(x[i]));
                }
                worst = std::max(worst, num / den);
            }
        }
    }
    expect(worst < 1e-6, fmt("max relative round-trip error %.3e >= 1e-6", worst));
    return fmt("1008 pairs, max relative round-trip error %.3e", worst);
}

std::string criterion_logdet() {
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        int d = 1 + trial % 8;
        int blocks = 1 + trial % 4;
        Rng rng(900 + trial);
        FlowModel model =
            FlowModel::create(d, 4, blocks, 0, static_cast<uint32_t>(3000 + trial),
                              kDefaultClampC, PermKind::SeededOrthogonal);
        perturb_model(model, rng, 0.2, true);
        std::vector<double> x = random_vec(rng, d, 1.5);
        std::vector<double> cond = random_vec(rng, 4, 1.0);
        std::vector<double> z(static_cast<size_t>(d));
        double analytic = model.forward(x, cond, z);

        std::vector<double> jac(static_cast<size_t>(d) * d);
        std::vector<double> zp(static_cast<size_t>(d)), zm(static_cast<size_t>(d));
        for (int j = 0; j < d; ++j) {
            double h = 1e-6 * std::max(1.0, std::abs(x[j]));
            std::vector<double> xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            model.forward(xp, cond, zp);
            model.forward(xm, cond, zm);
            for (int i = 0; i < d; ++i) jac[i * d + j] = (zp[i] - zm[i]) / (xp[j] - xm[j]);
        }
        double fd = log_abs_det(std::move(jac), d);
        worst = std::max(worst, std::abs(fd - analytic) / std::max(1.0, std::abs(analytic)));
    }
    expect(worst < 1e-4, fmt("max relative log-det error %.3e >= 1e-4", worst));
    return fmt("200 pairs, max relative log-det error %.3e", worst);
}

std::string criterion_normalization() {
    double worst = 0.0;
    for (int rep = 0; rep < 3; ++rep) {
        Rng rng(40 + rep);
        FlowModel one = FlowModel::create(1, 4, 2, 0, static_cast<uint32_t>(70 + rep));
        perturb_model(one, rng, 0.2, false);
        std::vector<double> cond = random_vec(rng, 4, 1.0);

        // Simpson on [-40, 40]
        const int n1 = 16000;
        const double lo = -40.0, h1 = 80.0 / n1;
        double mass = 0.0;
        std::vector<double> x(1);
        for (int i = 0; i <= n1; ++i) {
            x[0] = lo + i * h1;
            double w = (i == 0 || i == n1) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            mass += w * std::exp(one.log_likelihood(x, cond));
        }
        mass *= h1 / 3.0;
        worst = std::max(worst, std::abs(mass - 1.0));

        FlowModel two = FlowModel::create(2, 4, 2, 0, static_cast<uint32_t>(80 + rep));
        perturb_model(two, rng, 0.2, false);
        const int n2 = 1000;
        const double lo2 = -25.0, h2 = 50.0 / n2;
        double mass2 = 0.0;
        std::vector<double> xy(2);
        for (int i = 0; i <= n2; ++i) {
            xy[0] = lo2 + i * h2;
            double row = 0.0;
            for (int j = 0; j <= n2; ++j) {
                xy[1] = lo2 + j * h2;
                double p = std::exp(two.log_likelihood(xy, cond));
                row += (j == 0 || j == n2) ? 0.5 * p : p;
            }
            mass2 += (i == 0 || i == n2) ? 0.5 * row : row;
        }
        mass2 *= h2 * h2;
        worst = std::max(worst, std::abs(mass2 - 1.0));
    }
    expect(worst < 0.02, fmt("quadrature mass deviates from 1 by %.4f >= 0.02", worst));
    return fmt("six models, worst quadrature deviation %.2e", worst);
}

std::string criterion_gradients() {
    Rng rng(55);
    FlowModel model = FlowModel::create(8, 4, 4, 0, 111);
    perturb_model(model, rng, 0.2, true);

    std::vector<std::vector<double>> store;
    std::vector<Sample> batch;
    std::vector<double> normal_lls;
    for (int i = 0; i < 24; ++i) {
        bool abnormal = i >= 16;
        std::vector<double> f = random_vec(rng, 8, 1.0);
        if (abnormal) f[0] += 3.0;
        store.push_back(std::move(f));
        store.push_back(random_vec(rng, 4, 1.0));
    }
    for (int i = 0; i < 24; ++i) {
        Sample s;
        s.features = store[2 * i];
        s.condition = store[2 * i + 1];
        s.label = i >= 16 ? Label::Abnormal : Label::Normal;
        s.id = i;
        batch.push_back(s);
        if (i < 16) normal_lls.push_back(model.log_likelihood(s.features, s.condition));
    }

    BoundaryState boundary =
        build_boundary(find_normal_boundary(normal_lls, 10.0), 10.0, 0.1, 10.0);
    ObjectiveConfig ml_only;
    ObjectiveConfig plain_bg;
    plain_bg.phase = 2;
    plain_bg.lambda = 0.7;
    plain_bg.boundary = boundary;
    ObjectiveConfig focal_bg = plain_bg;
    focal_bg.focal = FocalConfig{};

    double worst = 0.0;
    for (const ObjectiveConfig& cfg : {ml_only, plain_bg, focal_bg}) {
        GradientSet g = loss_and_gradients(model, batch, cfg);
        std::vector<double> coeffs = frozen_coefficients(model, batch, cfg);
        for (size_t b = 0; b < model.num_blocks(); ++b) {
            auto probe = [&](std::span<float> params, const std::vector<double>& grads) {
                size_t stride = std::max<size_t>(1, params.size() / 4);
                for (size_t i = 0; i < params.size(); i += stride) {
                    float orig = params[i];
                    double h = 1e-5 * std::max(1.0, std::abs(static_cast<double>(orig)));
                    float up = static_cast<float>(static_cast<double>(orig) + h);
                    float dn = static_cast<float>(static_cast<double>(orig) - h);
                    params[i] = up;
                    double lu = loss_given_coeffs(model, batch, coeffs);
                    params[i] = dn;
                    double ld = loss_given_coeffs(model, batch, coeffs);
                    params[i] = orig;
                    double fd =
                        (lu - ld) / (static_cast<double>(up) - static_cast<double>(dn));
                    double err = std::abs(fd - grads[i]) /
                                 (std::max(std::abs(fd), std::abs(grads[i])) + 1e-6);
                    worst = std::max(worst, err);
                }
            };
            probe(model.block(b).w1(), g.blocks[b].w1);
            probe(model.block(b).b1(), g.blocks[b].b1);
            probe(model.block(b).w2(), g.blocks[b].w2);
            probe(model.block(b).b2(), g.blocks[b].b2);
        }
    }
    expect(worst < 1e-4, fmt("max relative gradient error %.3e >= 1e-4", worst));
    return fmt("three objective configurations, max relative gradient error %.3e", worst);
}

std::string criterion_boundary() {
    Rng rng(66);
    for (int trial = 0; trial < 10000; ++trial) {
        size_t n = 1 + rng.below(200);
        std::vector<double> values(n);
        bool quantized = trial % 3 == 0;
        for (double& v : values) {
            v = -600.0 + rng.normal() * 50.0;
            if (quantized) v = std::round(v);  // force ties
        }
        double beta = rng.uniform(0.01, 99.99);

        std::vector<double> sorted = values;
        std::sort(sorted.begin(), sorted.end());
        size_t rank = static_cast<size_t>(
            std::ceil(beta * static_cast<double>(n) / 100.0));
        rank = std::min(std::max<size_t>(rank, 1), n);
        double oracle = sorted[rank - 1];

        double got = find_normal_boundary(values, beta);
        expect(got == oracle,
               fmt("boundary mismatch at trial %g: beta %.4f", trial, beta));

        size_t strictly_below = 0;
        for (double v : values) strictly_below += v < got;
        expect(static_cast<double>(strictly_below) / static_cast<double>(n) < beta / 100.0,
               fmt("strict-below fraction reached beta%% at trial %g", trial));
    }
    return "10000 lists match the sort oracle exactly";
}

double brute_auroc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    double wins = 0.0;
    size_t pos = 0, neg = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        ++pos;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            if (scores[i] > scores[j]) {
                wins += 1.0;
            } else if (scores[i] == scores[j]) {
                wins += 0.5;
            }
        }
    }
    neg = scores.size() - pos;
    return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

// independent 8-connected labeling in scan order
std::pair<std::vector<int>, int> brute_label8(const Mask& m) {
    std::vector<int> labels(m.data.size(), 0);
    int count = 0;
    std::vector<std::pair<int, int>> queue;
    for (int r = 0; r < m.h; ++r) {
        for (int c = 0; c < m.w; ++c) {
            if (!m.at(r, c) || labels[static_cast<size_t>(r) * m.w + c]) continue;
            ++count;
            queue.assign(1, {r, c});
            labels[static_cast<size_t>(r) * m.w + c] = count;
            for (size_t q = 0; q < queue.size(); ++q) {
                auto [cr, cc] = queue[q];
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        int nr = cr + dr, nc = cc + dc;
                        if (nr < 0 || nr >= m.h || nc < 0 || nc >= m.w) continue;
                        size_t ni = static_cast<size_t>(nr) * m.w + nc;
                        if (m.data[ni] && !labels[ni]) {
                            labels[ni] = count;
                            queue.push_back({nr, nc});
                        }
                    }
                }
            }
        }
    }
    return {labels, count};
}

double brute_pro(const std::vector<AnomalyMap>& maps, const std::vector<Mask>& masks,
                 double fpr_limit) {
    struct Pix {
        double score;
        int comp;
    };
    std::vector<Pix> pixels;
    std::vector<size_t> sizes;
    size_t n_neg = 0;
    for (size_t m = 0; m < maps.size(); ++m) {
        auto [labels, count] = brute_label8(masks[m]);
        int base = static_cast<int>(sizes.size());
        sizes.resize(sizes.size() + count, 0);
        for (size_t i = 0; i < maps[m].scores.size(); ++i) {
            int comp = labels[i] > 0 ? base + labels[i] - 1 : -1;
            if (comp >= 0) {
                ++sizes[comp];
            } else {
                ++n_neg;
            }
            pixels.push_back({maps[m].scores[i], comp});
        }
    }
    std::vector<double> thresholds;
    for (const Pix& p : pixels) thresholds.push_back(p.score);
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    std::vector<std::pair<double, double>> curve{{0.0, 0.0}};
    for (double t : thresholds) {
        std::vector<size_t> hits(sizes.size(), 0);
        size_t fp = 0;
        for (const Pix& p : pixels) {
            if (p.score < t) continue;
            if (p.comp >= 0) {
                ++hits[p.comp];
            } else {
                ++fp;
            }
        }
        double overlap = 0.0;
        for (size_t c = 0; c < hits.size(); ++c) {
            overlap += static_cast<double>(hits[c]) / static_cast<double>(sizes[c]);
        }
        overlap /= static_cast<double>(hits.size());
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

std::string criterion_metric_oracles() {
    Rng rng(77);
    for (size_t n : {16u, 100u, 1000u, 10000u}) {
        std::vector<double> scores(n);
        std::vector<uint8_t> labels(n);
        labels[0] = 0;
        labels[1] = 1;
        for (size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng.below(100)) / 50.0;  // heavy ties
            if (i > 1) labels[i] = rng.below(2);
        }
        double lib = auroc(scores, labels);
        double brute = brute_auroc(scores, labels);
        expect(std::abs(lib - brute) <= 1e-9,
               fmt("auroc deviates from pairwise counting by %.3e at n=%g",
                   std::abs(lib - brute), static_cast<double>(n)));
    }

    for (int rep = 0; rep < 4; ++rep) {
        std::vector<AnomalyMap> maps;
        std::vector<Mask> masks;
        for (int m = 0; m < 3; ++m) {
            Mask mask(32, 32);
            for (int blob = 0; blob < 2; ++blob) {
                int r0 = static_cast<int>(rng.below(24));
                int c0 = static_cast<int>(rng.below(24));
                int rh = 2 + static_cast<int>(rng.below(6));
                int rw = 2 + static_cast<int>(rng.below(6));
                for (int r = r0; r < std::min(32, r0 + rh); ++r) {
                    for (int c = c0; c < std::min(32, c0 + rw); ++c) mask.at(r, c) = 1;
                }
            }
            AnomalyMap map;
            map.h = map.w = 32;
            map.scores.resize(32 * 32);
            for (double& s : map.scores) {
                s = rep % 2 ? static_cast<double>(rng.below(80)) / 79.0  // tied scores
                            : rng.uniform();
            }
            maps.push_back(std::move(map));
            masks.push_back(std::move(mask));
        }
        double lib = pro(maps, masks, 0.3);
        double brute = brute_pro(maps, masks, 0.3);
        expect(lib == brute, fmt("pro %.17g != brute-force enumeration %.17g", lib, brute));
    }
    return "auroc within 1e-9 of pairwise counts; pro equals enumeration exactly";
}

std::string criterion_end_to_end() {
    const EndToEnd& e = end_to_end();
    expect(e.auroc_lambda1 >= 0.95,
           fmt("held-out image auroc %.4f < 0.95", e.auroc_lambda1));
    double occ1 = margin_occupancy(e.lambda1, e.train_ds);
    double occ0 = margin_occupancy(e.lambda0, e.train_ds);
    expect(occ1 <= occ0,
           fmt("margin occupancy %.4f (guided) > %.4f (unguided)", occ1, occ0));
    char buf[160];
    std::snprintf(buf, sizeof(buf), "auroc %.4f, margin occupancy %.4f (guided) vs %.4f (unguided)",
                  e.auroc_lambda1, occ1, occ0);
    return buf;
}

std::string criterion_beta_direction() {
    const EndToEnd& e = end_to_end();
    TrainConfig cb = e.base;
    cb.beta = 1.0;
    Checkpoint beta1 = train(e.train_ds, cb);
    double auroc_b1 = held_out_auroc(beta1, e.test_ds);
    expect(auroc_b1 >= e.auroc_lambda1 - 0.01,
           fmt("beta=1 auroc %.4f < beta=10 auroc %.4f - 0.01", auroc_b1, e.auroc_lambda1));
    return fmt("beta=1 auroc %.4f vs beta=10 auroc %.4f", auroc_b1, e.auroc_lambda1);
}

std::string criterion_anomaly_free() {
    Dataset ds = make_cluster(200, 0, 4, 41, "train");
    TrainConfig cfg;
    cfg.blocks = 4;
    cfg.cond_dim = 4;
    cfg.epochs = 10;
    cfg.phase1_epochs = 4;
    cfg.meta_epoch = 2;
    cfg.warmup_epochs = 1;
    cfg.batch_size = 32;
    cfg.lr = 1e-3;
    cfg.seed = 5;
    Checkpoint ckpt = train(ds, cfg);
    const LevelState& state = ckpt.levels.at(0);
    expect(state.boundary.has_value(), "no boundary after anomaly-free training");
    expect(static_cast<int>(ckpt.history.size()) == cfg.epochs, "missing epoch history");

    LevelPool pool = build_level_pool(ds, 0, cfg.cond_dim);
    std::vector<Sample> probe(pool.samples.begin(), pool.samples.begin() + 32);
    ObjectiveConfig ocfg;
    ocfg.phase = 2;
    ocfg.lambda = 1.0;
    ocfg.boundary = state.boundary;
    ocfg.focal = cfg.focal;
    GradientSet g = loss_and_gradients(state.model, probe, ocfg);

    // with no abnormal samples the hinge mass is the focal-weighted pull term
    double pull = 0.0;
    for (const Sample& s : probe) {
        double raw = state.model.log_likelihood(s.features, s.condition);
        double w = focal_weight_normal(raw, *ocfg.focal);
        pull += w * std::max(state.boundary->b_n -
                                 normalize_logp(raw, state.boundary->alpha_n),
                             0.0);
    }
    expect(std::abs(g.bgspp_value - pull) <= 1e-12 * std::max(1.0, std::abs(pull)),
           fmt("hinge mass %.17g != pull-only recomputation %.17g", g.bgspp_value, pull));
    expect(std::abs(g.loss_value - (g.ml_value + ocfg.lambda * g.bgspp_value)) <=
               1e-12 * std::max(1.0, std::abs(g.loss_value)),
           "combined loss is not likelihood plus weighted pull");
    return "completes; phase-2 objective reduces to likelihood plus pull";
}

std::string criterion_augmentation() {
    RasterImage normal(24, 24, 3);
    for (int r = 0; r < 24; ++r) {
        for (int c = 0; c < 24; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                normal.pixels[(static_cast<size_t>(r) * 24 + c) * 3 + ch] =
                    static_cast<uint8_t>(30 + 12 * ((r / 3 + c / 3) % 2) + 7 * ch);
            }
        }
    }
    RasterImage abnormal = normal;
    Mask mask(24, 24);
    for (int r = 5; r < 12; ++r) {
        for (int c = 9; c < 16; ++c) {
            mask.at(r, c) = 1;
            for (int ch = 0; ch < 3; ++ch) {
                abnormal.pixels[(static_cast<size_t>(r) * 24 + c) * 3 + ch] =
                    static_cast<uint8_t>(200 + ch);
            }
        }
    }
    AnomalyRegion region = make_region(mask);

    auto generate_all = [&] {
        std::vector<std::pair<std::vector<uint8_t>, std::vector<uint8_t>>> out;
        for (uint64_t seed = 0; seed < 100; ++seed) {
            auto [img, reg] = racp_generate(normal, abnormal, region, 3, seed);
            out.emplace_back(img.pixels, reg.mask.data);
        }
        return out;
    };
    auto run_a = generate_all();
    auto run_b = generate_all();
    expect(run_a == run_b, "two generation sweeps are not byte-identical");

    for (size_t k = 0; k < run_a.size(); ++k) {
        const auto& [pixels, bits] = run_a[k];
        bool any = false;
        for (size_t i = 0; i < bits.size(); ++i) {
            any |= bits[i] != 0;
            if (bits[i]) continue;
            for (int ch = 0; ch < 3; ++ch) {
                expect(pixels[i * 3 + ch] == normal.pixels[i * 3 + ch],
                       fmt("composite %g differs from the normal image outside its mask",
                           static_cast<double>(k)));
            }
        }
        expect(any, fmt("composite %g has an empty mask", static_cast<double>(k)));
    }
    return "100 seeded composites byte-identical; masks bound every edit";
}

std::string criterion_bound_report() {
    const EndToEnd& e = end_to_end();
    const LevelState& state = e.lambda1.levels.at(0);
    expect(state.boundary.has_value(), "converged run lacks a boundary");
    const BoundaryState& b = *state.boundary;

    LevelPool pool = build_level_pool(e.test_ds, 0, e.base.cond_dim);
    std::vector<double> norm, abn;
    for (const Sample& s : pool.samples) {
        double v = state.model.log_likelihood(s.features, s.condition) / b.alpha_n;
        (s.label == Label::Normal ? norm : abn).push_back(v);
    }
    double epsilon = 0.05 * (b.b_n - b.b_a);
    BoundReport r = bound_report(norm, abn, b, epsilon, e.base.lambda, 8);
    expect(r.slack >= 0.0, fmt("reported slack %.6f < 0", r.slack));

    double lhs_n = 0.0;
    for (double v : norm) lhs_n += std::max(b.b_n - epsilon - v, 0.0);
    lhs_n /= static_cast<double>(norm.size());
    double lhs_a = 0.0;
    for (double v : abn) lhs_a += std::max(v - (b.b_a + epsilon), 0.0);
    lhs_a /= static_cast<double>(abn.size());
    double lhs = lhs_n + lhs_a;
    double rhs = (0.5 * 8 * std::log(2.0 * std::numbers::pi) - 0.5) * (b.b_n - b.b_a) /
                     e.base.lambda +
                 static_cast<double>(norm.size()) /
                     static_cast<double>(norm.size() + abn.size());
    expect(std::abs(r.lhs - lhs) <= 1e-12, fmt("lhs %.17g != brute force %.17g", r.lhs, lhs));
    expect(std::abs(r.rhs - rhs) <= 1e-12, fmt("rhs %.17g != brute force %.17g", r.rhs, rhs));
    return fmt("slack %.4f >= 0; both sides match brute force", r.slack);
}

std::string criterion_determinism() {
    Dataset train_ds = make_cluster(800, 8, 4, 51, "train");
    Dataset test_ds = make_cluster(200, 40, 4, 52, "test");
    TrainConfig cfg;
    cfg.blocks = 4;
    cfg.cond_dim = 4;
    cfg.epochs = 12;
    cfg.phase1_epochs = 6;
    cfg.meta_epoch = 3;
    cfg.warmup_epochs = 1;
    cfg.batch_size = 32;
    cfg.lr = 1e-3;
    cfg.seed = 9;

    auto run_once = [&](const std::string& tag) {
        Checkpoint ckpt = train(train_ds, cfg);
        fs::path dir = fs::temp_directory_path() / ("bgad_acceptance_" + tag);
        fs::remove_all(dir);
        save_checkpoint(ckpt, dir.string());
        std::ostringstream report;
        report << "image_auroc = " << format_double(held_out_auroc(ckpt, test_ds)) << "\n";
        for (const SampleScore& s : score_dataset(ckpt, test_ds)) {
            report << s.id << " = " << format_double(s.score) << "\n";
        }
        return std::make_pair(dir, report.str());
    };
    auto [dir_a, report_a] = run_once("a");
    auto [dir_b, report_b] = run_once("b");

    size_t files = 0;
    for (const auto& entry : fs::directory_iterator(dir_a)) {
        ++files;
        fs::path other = dir_b / entry.path().filename();
        expect(fs::exists(other), "checkpoint file sets differ");
        std::ifstream fa(entry.path(), std::ios::binary), fb(other, std::ios::binary);
        std::string ba{std::istreambuf_iterator<char>(fa), std::istreambuf_iterator<char>()};
        std::string bb{std::istreambuf_iterator<char>(fb), std::istreambuf_iterator<char>()};
        expect(ba == bb,
               "checkpoint file " + entry.path().filename().string() + " differs between runs");
    }
    expect(files > 0, "empty checkpoint directory");
    expect(report_a == report_b, "metric reports differ between runs");
    return fmt("%g checkpoint files and the metric report byte-identical",
               static_cast<double>(files));
}

struct Criterion {
    int id;
    const char* name;
    std::function<std::string()> run;
    double budget_seconds;  // 0 = unchecked
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "flow invertibility", criterion_invertibility, 10.0},
        {2, "log-determinant agreement", criterion_logdet, 60.0},
        {3, "density normalization", criterion_normalization, 30.0},
        {4, "objective gradients", criterion_gradients, 120.0},
        {5, "boundary percentile", criterion_boundary, 0.0},
        {6, "metric oracles", criterion_metric_oracles, 0.0},
        {7, "end-to-end synthetic detection", criterion_end_to_end, 600.0},
        {8, "beta sensitivity direction", criterion_beta_direction, 0.0},
        {9, "anomaly-free training", criterion_anomaly_free, 0.0},
        {10, "augmentation determinism and mask fidelity", criterion_augmentation, 0.0},
        {11, "error-bound report", criterion_bound_report, 0.0},
        {12, "training determinism", criterion_determinism, 0.0},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = true;
        try {
            detail = c.run();
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (ok && c.budget_seconds > 0.0 && seconds >= c.budget_seconds) {
            ok = false;
            detail = fmt("runtime %.1f s exceeded the %.0f s budget", seconds,
                         c.budget_seconds) +
                     "; " + detail;
        }
        failures += !ok;
        std::printf("[%s] %2d %s: %s (%.1f s)\n", ok ? "PASS" : "FAIL", c.id, c.name,
                    detail.c_str(), seconds);
        std::fflush(stdout);
    }
    if (failures) std::printf("%d of 12 criteria failed\n", failures);
    return failures;
}
