#include "bgad/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>

#include "bgad/kv.hpp"
#include "bgad/rng.hpp"

namespace fs = std::filesystem;

namespace bgad {

void adam_step(std::span<float> params, std::span<const double> grads, AdamSlot& slot,
               int64_t step, double lr, const AdamConfig& cfg) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adam_step: parameter/gradient shape mismatch");
    }
    if (slot.m.empty()) {
        slot.m.assign(params.size(), 0.0);
        slot.v.assign(params.size(), 0.0);
    }
    if (slot.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: state shape mismatch");
    }
    if (!(lr >= 0.0)) throw std::invalid_argument("adam_step: lr must be >= 0");
    if (step < 1) throw std::invalid_argument("adam_step: step must be >= 1");

    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
        slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
        double mhat = slot.m[i] / bc1;
        double vhat = slot.v[i] / bc2;
        double p = static_cast<double>(params[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps);
        params[i] = static_cast<float>(p);
    }
}

double lr_schedule(double epoch_fraction, double warmup_fraction, double base_lr) {
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw std::invalid_argument("lr_schedule: warmup_fraction must lie in [0, 1)");
    }
    if (epoch_fraction < warmup_fraction) {
        return base_lr * epoch_fraction / warmup_fraction;
    }
    double progress = (epoch_fraction - warmup_fraction) / (1.0 - warmup_fraction);
    return base_lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

LevelPool build_level_pool(const Dataset& dataset, int level, int cond_dim) {
    LevelPool pool;
    size_t total = 0;
    for (const auto& s : dataset.samples) {
        auto it = s.levels.find(level);
        if (it == s.levels.end()) {
            throw std::runtime_error("sample " + s.id + ": missing features for level " +
                                     std::to_string(level));
        }
        const FeatureGrid& g = it->second;
        if (pool.d == 0) pool.d = g.d;
        if (g.d != pool.d) {
            throw std::runtime_error("sample " + s.id + ": level " + std::to_string(level) +
                                     " feature dim " + std::to_string(g.d) + " differs from " +
                                     std::to_string(pool.d));
        }
        total += static_cast<size_t>(g.h) * g.w;
    }
    if (total == 0) throw std::runtime_error("level pool is empty");

    pool.features.reserve(total * pool.d);
    pool.conditions.reserve(total * cond_dim);
    std::vector<Label> labels;
    labels.reserve(total);

    for (const auto& s : dataset.samples) {
        const FeatureGrid& g = s.levels.at(level);
        const bool multi = g.h * g.w > 1;
        if (s.label == Label::Abnormal && multi && !s.has_mask) {
            throw std::runtime_error("sample " + s.id +
                                     ": abnormal image with a feature grid needs a mask");
        }
        for (int r = 0; r < g.h; ++r) {
            for (int c = 0; c < g.w; ++c) {
                Label cell = Label::Normal;
                if (s.label == Label::Abnormal) {
                    if (!multi) {
                        cell = Label::Abnormal;
                    } else {
                        int r0 = r * s.mask.h / g.h, c0 = c * s.mask.w / g.w;
                        int r1 = std::max(r0 + 1, (r + 1) * s.mask.h / g.h);
                        int c1 = std::max(c0 + 1, (c + 1) * s.mask.w / g.w);
                        r1 = std::min(r1, s.mask.h);
                        c1 = std::min(c1, s.mask.w);
                        for (int mr = r0; mr < r1 && cell == Label::Normal; ++mr) {
                            for (int mc = c0; mc < c1; ++mc) {
                                if (s.mask.at(mr, mc)) {
                                    cell = Label::Abnormal;
                                    break;
                                }
                            }
                        }
                    }
                }
                auto feat = g.at(r, c);
                for (float v : feat) pool.features.push_back(static_cast<double>(v));
                ConditionVector cond = position_embedding({r, c}, g.h, g.w, cond_dim);
                pool.conditions.insert(pool.conditions.end(), cond.values.begin(),
                                       cond.values.end());
                labels.push_back(cell);
            }
        }
    }

    pool.samples.resize(total);
    for (size_t i = 0; i < total; ++i) {
        Sample& smp = pool.samples[i];
        smp.features = {pool.features.data() + i * pool.d, static_cast<size_t>(pool.d)};
        smp.condition = {pool.conditions.data() + i * cond_dim, static_cast<size_t>(cond_dim)};
        smp.label = labels[i];
        smp.id = static_cast<int64_t>(i);
        if (labels[i] == Label::Normal) {
            pool.normal_indices.push_back(i);
        } else {
            ++pool.abnormal_count;
        }
    }
    return pool;
}

void init_fixed_scales(FlowModel& model, std::span<const Sample> batch) {
    const size_t n = batch.size();
    if (n < 2) return;
    const int d = model.d();

    std::vector<std::vector<double>> cur(n);
    for (size_t i = 0; i < n; ++i) {
        cur[i].assign(batch[i].features.begin(), batch[i].features.end());
    }
    std::vector<double> out(d);
    for (size_t b = 0; b < model.num_blocks(); ++b) {
        CouplingBlock& blk = model.block(b);
        for (size_t i = 0; i < n; ++i) {
            blk.forward(cur[i], batch[i].condition, out, nullptr, static_cast<int>(b));
            cur[i] = out;
        }
        std::vector<float> scale(d, 1.0f);
        for (int ch = 0; ch < d; ++ch) {
            double mean = 0.0;
            for (size_t i = 0; i < n; ++i) mean += cur[i][ch];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (size_t i = 0; i < n; ++i) {
                double dlt = cur[i][ch] - mean;
                var += dlt * dlt;
            }
            double sd = std::sqrt(var / static_cast<double>(n));
            if (sd > 1e-6) scale[ch] = static_cast<float>(1.0 / (sd + 1e-6));
        }
        blk.set_fixed_scale(scale);
        for (size_t i = 0; i < n; ++i) {
            for (int ch = 0; ch < d; ++ch) cur[i][ch] *= static_cast<double>(scale[ch]);
        }
    }
}

namespace {

uint32_t derive_model_seed(uint64_t seed, int level) {
    // keep in sync with save_checkpoint's metadata echo
    return static_cast<uint32_t>(
        splitmix64(seed + 0x9E3779B97F4A7C15ull * static_cast<uint64_t>(level + 1)) >> 16);
}

}  // namespace

void validate_train_config(const TrainConfig& c) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("train: " + msg); };
    if (c.levels.empty()) fail("levels must be nonempty");
    if (c.blocks < 1) fail("blocks must be >= 1");
    if (c.cond_dim < 4 || c.cond_dim % 4 != 0) fail("cond_dim must be a positive multiple of 4");
    if (!(c.lr > 0.0)) fail("lr must be > 0");
    if (c.epochs < 1) fail("epochs must be >= 1");
    if (c.batch_size < 1) fail("batch_size must be >= 1");
    if (c.warmup_epochs < 0 || c.warmup_epochs >= c.epochs) {
        fail("warmup_epochs must lie in [0, epochs)");
    }
    if (c.phase1_epochs < 0 || c.phase1_epochs >= c.epochs) {
        fail("phase1_epochs must be < epochs");
    }
    if (c.meta_epoch < 1) fail("meta_epoch must be >= 1");
    if (!(c.beta > 0.0 && c.beta <= 100.0)) fail("beta must lie in (0, 100]");
    if (!(c.alpha >= 1.0)) fail("alpha must be >= 1");
    if (!(c.tau > 0.0 && c.tau <= 1.0 - 1.0 / c.alpha)) {
        fail("tau must lie in (0, 1 - 1/alpha]");
    }
    if (!(c.lambda >= 0.0)) fail("lambda must be >= 0");
    if (!(c.grad_clip > 0.0)) fail("grad_clip must be > 0");
    if (c.threads < 1) fail("threads must be >= 1");
    if (c.boundary_refresh != "meta-epoch" && c.boundary_refresh != "once") {
        fail("boundary_refresh must be 'meta-epoch' or 'once'");
    }
    std::vector<int> lv = c.levels;
    std::sort(lv.begin(), lv.end());
    if (std::adjacent_find(lv.begin(), lv.end()) != lv.end()) fail("duplicate level id");
}

Checkpoint train(const Dataset& dataset, const TrainConfig& config,
                 const BatchObserver& observer) {
    validate_train_config(config);
    bool any_normal = std::any_of(dataset.samples.begin(), dataset.samples.end(),
                                  [](const DataSample& s) { return s.label == Label::Normal; });
    if (!any_normal) throw std::invalid_argument("train: dataset has no normal samples");

    std::map<int, LevelPool> pools;
    for (int level : config.levels) {
        pools.emplace(level, build_level_pool(dataset, level, config.cond_dim));
    }

    Checkpoint ckpt;
    ckpt.config = config;
    OptimizerState opt;
    Rng master(config.seed);

    for (int level : config.levels) {
        LevelPool& pool = pools.at(level);
        if (pool.normal_indices.empty()) {
            throw std::invalid_argument("train: level " + std::to_string(level) +
                                        " has no normal positions");
        }
        LevelState state;
        state.model = FlowModel::create(pool.d, config.cond_dim, config.blocks, level,
                                        derive_model_seed(config.seed, level), config.clamp_c,
                                        PermKind::SeededOrthogonal);
        size_t n_init = std::min<size_t>(config.batch_size, pool.normal_indices.size());
        std::vector<Sample> first_batch;
        for (size_t i = 0; i < n_init; ++i) {
            first_batch.push_back(pool.samples[pool.normal_indices[i]]);
        }
        init_fixed_scales(state.model, first_batch);
        ckpt.levels.emplace(level, std::move(state));
        opt.slots[level].resize(static_cast<size_t>(config.blocks) * 4);
    }

    std::map<int, double> raw_boundary;
    auto refresh_boundaries = [&]() {
        for (int level : config.levels) {
            LevelPool& pool = pools.at(level);
            LevelState& state = ckpt.levels.at(level);
            std::vector<double> lls;
            lls.reserve(pool.normal_indices.size());
            for (size_t idx : pool.normal_indices) {
                const Sample& s = pool.samples[idx];
                lls.push_back(state.model.log_likelihood(s.features, s.condition));
            }
            double raw = find_normal_boundary(lls, config.beta);
            state.boundary = build_boundary(raw, config.alpha, config.tau, config.beta);
            state.logp_ref = *std::max_element(lls.begin(), lls.end());
            raw_boundary[level] = raw;
        }
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const int phase = epoch < config.phase1_epochs ? 1 : 2;
        const double lr_e =
            lr_schedule(static_cast<double>(epoch) / config.epochs,
                        static_cast<double>(config.warmup_epochs) / config.epochs, config.lr);
        const bool at_refresh =
            phase == 2 && (epoch == config.phase1_epochs ||
                           (config.boundary_refresh == "meta-epoch" &&
                            (epoch - config.phase1_epochs) % config.meta_epoch == 0));
        if (at_refresh) refresh_boundaries();

        double ml_sum = 0.0, bg_sum = 0.0;
        size_t n_batches = 0;
        for (int level : config.levels) {
            LevelPool& pool = pools.at(level);
            LevelState& state = ckpt.levels.at(level);

            std::vector<size_t> order;
            if (phase == 1) {
                order = pool.normal_indices;
            } else {
                order.resize(pool.samples.size());
                std::iota(order.begin(), order.end(), size_t{0});
            }
            Rng shuffler = master.fork(static_cast<uint64_t>(epoch) * 0x10001ull +
                                       static_cast<uint64_t>(level) + 1);
            shuffler.shuffle(order);

            for (size_t start = 0; start < order.size(); start += config.batch_size) {
                size_t end = std::min(order.size(), start + config.batch_size);
                std::vector<Sample> batch;
                batch.reserve(end - start);
                int n_norm = 0, n_abn = 0;
                for (size_t i = start; i < end; ++i) {
                    const Sample& s = pool.samples[order[i]];
                    batch.push_back(s);
                    (s.label == Label::Normal ? n_norm : n_abn) += 1;
                }
                if (n_norm == 0) continue;  // ml_loss needs a normal sample

                ObjectiveConfig ocfg;
                ocfg.phase = phase;
                ocfg.lambda = config.lambda / static_cast<double>(batch.size());
                if (phase == 2) {
                    ocfg.boundary = state.boundary;
                    ocfg.focal = config.focal;
                }

                const int batch_index = static_cast<int>(start / config.batch_size);
                GradientSet grads;
                try {
                    grads = loss_and_gradients(state.model, batch, ocfg, config.threads);
                } catch (const std::exception& e) {
                    throw std::runtime_error("train: epoch " + std::to_string(epoch) + " batch " +
                                             std::to_string(batch_index) + " level " +
                                             std::to_string(level) + ": " + e.what());
                }
                if (!std::isfinite(grads.loss_value)) {
                    throw std::runtime_error("train: epoch " + std::to_string(epoch) + " batch " +
                                             std::to_string(batch_index) + " level " +
                                             std::to_string(level) + ": loss diverged");
                }

                double sq = 0.0;
                for (const TensorGrads& tg : grads.blocks) sq += tg.squared_norm();
                double norm = std::sqrt(sq);
                if (norm > config.grad_clip) {
                    double f = config.grad_clip / norm;
                    for (TensorGrads& tg : grads.blocks) tg.scale(f);
                }

                ++opt.step;
                auto& slots = opt.slots.at(level);
                for (int b = 0; b < config.blocks; ++b) {
                    CouplingBlock& blk = state.model.block(b);
                    TensorGrads& tg = grads.blocks[b];
                    adam_step(blk.w1(), tg.w1, slots[b * 4 + 0], opt.step, lr_e, config.adam);
                    adam_step(blk.b1(), tg.b1, slots[b * 4 + 1], opt.step, lr_e, config.adam);
                    adam_step(blk.w2(), tg.w2, slots[b * 4 + 2], opt.step, lr_e, config.adam);
                    adam_step(blk.b2(), tg.b2, slots[b * 4 + 3], opt.step, lr_e, config.adam);
                }

                ml_sum += grads.ml_value;
                bg_sum += grads.bgspp_value;
                ++n_batches;
                if (observer) {
                    observer(BatchEvent{epoch, phase, level, batch_index, n_norm, n_abn,
                                        grads.loss_value, lr_e});
                }
            }
        }

        EpochStats row;
        row.epoch = epoch;
        row.ml_loss = n_batches ? ml_sum / static_cast<double>(n_batches) : 0.0;
        row.bgspp_loss = n_batches ? bg_sum / static_cast<double>(n_batches) : 0.0;
        row.lr = lr_e;
        auto it = raw_boundary.find(config.levels.front());
        row.raw_b_n =
            it != raw_boundary.end() ? it->second : std::numeric_limits<double>::quiet_NaN();
        ckpt.history.push_back(row);
    }

    // closing refresh: boundary and reference likelihood match the final weights
    refresh_boundaries();
    ckpt.epoch = config.epochs;
    ckpt.rng_digest = master.state_digest();
    return ckpt;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(std::stoi(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(std::stoi(cur));
    return out;
}

class KvReader {
public:
    explicit KvReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    const std::string& str(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw std::runtime_error("checkpoint metadata missing key " + key);
        return it->second;
    }
    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    int geti(const std::string& key) const { return std::stoi(str(key)); }
    int64_t geti64(const std::string& key) const { return std::stoll(str(key)); }
    uint64_t getu64(const std::string& key) const { return std::stoull(str(key)); }
    double getd(const std::string& key) const {
        const std::string& s = str(key);
        double v = 0.0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
            throw std::runtime_error("checkpoint metadata: bad number for " + key);
        }
        return v;
    }

private:
    std::map<std::string, std::string> kv_;
};

void write_param_tensor(const std::string& path, std::span<const float> values) {
    Tensor t;
    t.dims = {static_cast<uint32_t>(values.size())};
    t.values.assign(values.begin(), values.end());
    write_fbt(path, t);
}

void read_param_tensor(const std::string& path, std::span<float> dst) {
    Tensor t = read_fbt(path);
    if (t.values.size() != dst.size()) {
        throw std::runtime_error("checkpoint tensor " + path + " has " +
                                 std::to_string(t.values.size()) + " values, expected " +
                                 std::to_string(dst.size()));
    }
    std::copy(t.values.begin(), t.values.end(), dst.begin());
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
    fs::create_directories(dir);
    const TrainConfig& c = ckpt.config;

    std::ostringstream md;
    md << "format = bgad-checkpoint-v1\n";
    md << "epoch = " << ckpt.epoch << "\n";
    md << "rng_digest = " << ckpt.rng_digest << "\n";
    md << "config.levels = " << join_ints(c.levels) << "\n";
    md << "config.blocks = " << c.blocks << "\n";
    md << "config.cond_dim = " << c.cond_dim << "\n";
    md << "config.clamp_c = " << format_double(c.clamp_c) << "\n";
    md << "config.lr = " << format_double(c.lr) << "\n";
    md << "config.epochs = " << c.epochs << "\n";
    md << "config.batch_size = " << c.batch_size << "\n";
    md << "config.warmup_epochs = " << c.warmup_epochs << "\n";
    md << "config.phase1_epochs = " << c.phase1_epochs << "\n";
    md << "config.meta_epoch = " << c.meta_epoch << "\n";
    md << "config.beta = " << format_double(c.beta) << "\n";
    md << "config.tau = " << format_double(c.tau) << "\n";
    md << "config.alpha = " << format_double(c.alpha) << "\n";
    md << "config.lambda = " << format_double(c.lambda) << "\n";
    md << "config.focal = " << (c.focal ? 1 : 0) << "\n";
    if (c.focal) {
        md << "config.focal.alpha_norm = " << format_double(c.focal->alpha_norm) << "\n";
        md << "config.focal.gamma_norm = " << format_double(c.focal->gamma_norm) << "\n";
        md << "config.focal.logp_norm_threshold = " << format_double(c.focal->logp_norm_threshold)
           << "\n";
        md << "config.focal.alpha_abn = " << format_double(c.focal->alpha_abn) << "\n";
        md << "config.focal.gamma_abn = " << format_double(c.focal->gamma_abn) << "\n";
        md << "config.focal.logp_abn_threshold = " << format_double(c.focal->logp_abn_threshold)
           << "\n";
    }
    md << "config.seed = " << c.seed << "\n";
    md << "config.adam.beta1 = " << format_double(c.adam.beta1) << "\n";
    md << "config.adam.beta2 = " << format_double(c.adam.beta2) << "\n";
    md << "config.adam.eps = " << format_double(c.adam.eps) << "\n";
    md << "config.grad_clip = " << format_double(c.grad_clip) << "\n";
    md << "config.threads = " << c.threads << "\n";
    md << "config.boundary_refresh = " << c.boundary_refresh << "\n";

    for (const auto& [level, state] : ckpt.levels) {
        const std::string p = "level." + std::to_string(level) + ".";
        const FlowModel& m = state.model;
        md << p << "d = " << m.d() << "\n";
        PermSpec spec = m.block(0).perm_spec();
        md << p << "perm_kind = "
           << (spec.kind == PermKind::Identity ? "identity" : "seeded-orthogonal") << "\n";
        md << p << "model_seed = " << derive_model_seed(c.seed, level) << "\n";
        md << p << "logp_ref = " << format_double(state.logp_ref) << "\n";
        md << p << "boundary = " << (state.boundary ? 1 : 0) << "\n";
        if (state.boundary) {
            const BoundaryState& b = *state.boundary;
            md << p << "boundary.b_n = " << format_double(b.b_n) << "\n";
            md << p << "boundary.b_a = " << format_double(b.b_a) << "\n";
            md << p << "boundary.alpha_n = " << format_double(b.alpha_n) << "\n";
            md << p << "boundary.beta = " << format_double(b.beta) << "\n";
            md << p << "boundary.tau = " << format_double(b.tau) << "\n";
            md << p << "boundary.alpha = " << format_double(b.alpha) << "\n";
        }

        for (size_t b = 0; b < m.num_blocks(); ++b) {
            const CouplingBlock& blk = m.block(b);
            std::string stem =
                (fs::path(dir) / ("l" + std::to_string(level) + "_b" + std::to_string(b) + "_"))
                    .string();
            write_param_tensor(stem + "w1.fbt", blk.w1());
            write_param_tensor(stem + "b1.fbt", blk.b1());
            write_param_tensor(stem + "w2.fbt", blk.w2());
            write_param_tensor(stem + "b2.fbt", blk.b2());
            write_param_tensor(stem + "scale.fbt", blk.fixed_scale());
        }
    }
    write_text_atomic((fs::path(dir) / "metadata.txt").string(), md.str());
}

Checkpoint load_checkpoint(const std::string& dir) {
    KvReader kv(parse_kv_file((fs::path(dir) / "metadata.txt").string()));
    if (kv.str("format") != "bgad-checkpoint-v1") {
        throw std::runtime_error("load_checkpoint: unknown format " + kv.str("format"));
    }

    Checkpoint ckpt;
    TrainConfig& c = ckpt.config;
    c.levels = split_ints(kv.str("config.levels"));
    c.blocks = kv.geti("config.blocks");
    c.cond_dim = kv.geti("config.cond_dim");
    c.clamp_c = kv.getd("config.clamp_c");
    c.lr = kv.getd("config.lr");
    c.epochs = kv.geti("config.epochs");
    c.batch_size = kv.geti("config.batch_size");
    c.warmup_epochs = kv.geti("config.warmup_epochs");
    c.phase1_epochs = kv.geti("config.phase1_epochs");
    c.meta_epoch = kv.geti("config.meta_epoch");
    c.beta = kv.getd("config.beta");
    c.tau = kv.getd("config.tau");
    c.alpha = kv.getd("config.alpha");
    c.lambda = kv.getd("config.lambda");
    if (kv.geti("config.focal")) {
        FocalConfig f;
        f.alpha_norm = kv.getd("config.focal.alpha_norm");
        f.gamma_norm = kv.getd("config.focal.gamma_norm");
        f.logp_norm_threshold = kv.getd("config.focal.logp_norm_threshold");
        f.alpha_abn = kv.getd("config.focal.alpha_abn");
        f.gamma_abn = kv.getd("config.focal.gamma_abn");
        f.logp_abn_threshold = kv.getd("config.focal.logp_abn_threshold");
        c.focal = f;
    } else {
        c.focal.reset();
    }
    c.seed = kv.getu64("config.seed");
    c.adam.beta1 = kv.getd("config.adam.beta1");
    c.adam.beta2 = kv.getd("config.adam.beta2");
    c.adam.eps = kv.getd("config.adam.eps");
    c.grad_clip = kv.getd("config.grad_clip");
    c.threads = kv.geti("config.threads");
    c.boundary_refresh = kv.str("config.boundary_refresh");
    ckpt.epoch = kv.geti("epoch");
    ckpt.rng_digest = kv.getu64("rng_digest");

    for (int level : c.levels) {
        const std::string p = "level." + std::to_string(level) + ".";
        int d = kv.geti(p + "d");
        PermKind kind = kv.str(p + "perm_kind") == "identity" ? PermKind::Identity
                                                              : PermKind::SeededOrthogonal;
        uint32_t seed = static_cast<uint32_t>(kv.getu64(p + "model_seed"));

        LevelState state;
        state.model = FlowModel::create(d, c.cond_dim, c.blocks, level, seed, c.clamp_c, kind);
        state.logp_ref = kv.getd(p + "logp_ref");
        if (kv.geti(p + "boundary")) {
            BoundaryState b;
            b.b_n = kv.getd(p + "boundary.b_n");
            b.b_a = kv.getd(p + "boundary.b_a");
            b.alpha_n = kv.getd(p + "boundary.alpha_n");
            b.beta = kv.getd(p + "boundary.beta");
            b.tau = kv.getd(p + "boundary.tau");
            b.alpha = kv.getd(p + "boundary.alpha");
            state.boundary = b;
        }

        for (int b = 0; b < c.blocks; ++b) {
            CouplingBlock& blk = state.model.block(b);
            std::string stem =
                (fs::path(dir) / ("l" + std::to_string(level) + "_b" + std::to_string(b) + "_"))
                    .string();
            read_param_tensor(stem + "w1.fbt", blk.w1());
            read_param_tensor(stem + "b1.fbt", blk.b1());
            read_param_tensor(stem + "w2.fbt", blk.w2());
            read_param_tensor(stem + "b2.fbt", blk.b2());
            Tensor scale = read_fbt(stem + "scale.fbt");
            if (scale.values.size() != static_cast<size_t>(d)) {
                throw std::runtime_error("checkpoint tensor " + stem + "scale.fbt: bad size");
            }
            blk.set_fixed_scale(scale.values);
        }
        ckpt.levels.emplace(level, std::move(state));
    }
    return ckpt;
}

std::vector<SampleScore> score_dataset(const Checkpoint& ckpt, const Dataset& dataset,
                                       int map_scale, double smoothing_sigma) {
    if (map_scale < 1) throw std::invalid_argument("score_dataset: map_scale must be >= 1");
    std::vector<SampleScore> out;
    out.reserve(dataset.samples.size());

    for (size_t si = 0; si < dataset.samples.size(); ++si) {
        const DataSample& s = dataset.samples[si];
        SampleScore res;
        res.id = s.id;
        res.label = s.label;

        int max_h = 0, max_w = 0;
        double score = 0.0;
        std::vector<LevelGrid> grids;
        for (const auto& [level, state] : ckpt.levels) {
            auto it = s.levels.find(level);
            if (it == s.levels.end()) {
                throw std::runtime_error("sample " + s.id + ": missing features for level " +
                                         std::to_string(level));
            }
            const FeatureGrid& g = it->second;
            if (g.d != state.model.d()) {
                throw std::runtime_error("sample " + s.id + ": level " + std::to_string(level) +
                                         " feature dim " + std::to_string(g.d) +
                                         " does not match the checkpoint (" +
                                         std::to_string(state.model.d()) + ")");
            }
            LevelGrid lg;
            lg.h = g.h;
            lg.w = g.w;
            lg.logps.resize(static_cast<size_t>(g.h) * g.w);
            std::vector<double> feat(g.d);
            double min_ll = std::numeric_limits<double>::infinity();
            for (int r = 0; r < g.h; ++r) {
                for (int col = 0; col < g.w; ++col) {
                    auto f = g.at(r, col);
                    for (int k = 0; k < g.d; ++k) feat[k] = static_cast<double>(f[k]);
                    ConditionVector cond =
                        position_embedding({r, col}, g.h, g.w, ckpt.config.cond_dim);
                    double ll = state.model.log_likelihood(feat, cond.values);
                    lg.logps[static_cast<size_t>(r) * g.w + col] = ll;
                    min_ll = std::min(min_ll, ll);
                }
            }
            double level_score =
                min_ll >= state.logp_ref ? 0.0 : anomaly_score(min_ll, state.logp_ref);
            score = std::max(score, level_score);
            max_h = std::max(max_h, g.h);
            max_w = std::max(max_w, g.w);
            res.grids.emplace(level, lg);
            grids.push_back(std::move(lg));
        }
        res.score = score;
        res.map = assemble_map(grids, max_h * map_scale, max_w * map_scale, smoothing_sigma,
                               static_cast<int64_t>(si));
        out.push_back(std::move(res));
    }
    return out;
}

}  // namespace bgad
