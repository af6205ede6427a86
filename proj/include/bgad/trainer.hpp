#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bgad/data.hpp"
#include "bgad/flow.hpp"
#include "bgad/gradients.hpp"
#include "bgad/metrics.hpp"
#include "bgad/objective.hpp"

namespace bgad {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected moment accumulators for one parameter tensor.
struct AdamSlot {
    std::vector<double> m, v;
};

struct OptimizerState {
    std::map<int, std::vector<AdamSlot>> slots;  // level -> one slot per tensor
    int64_t step = 0;                            // shared across levels
};

// One bias-corrected Adam update at the given (1-based) step. Parameters are
// stored f32; all arithmetic runs in double.
void adam_step(std::span<float> params, std::span<const double> grads, AdamSlot& slot,
               int64_t step, double lr, const AdamConfig& cfg);

// Linear ramp 0 -> base_lr over the warmup span, then cosine annealing
// base_lr * (1 + cos(pi * progress)) / 2 over the remaining span.
double lr_schedule(double epoch_fraction, double warmup_fraction, double base_lr);

struct TrainConfig {
    std::vector<int> levels{0};  // feature levels to train, one flow each
    int blocks = 8;              // coupling blocks per flow
    int cond_dim = 8;            // position embedding width, divisible by 4
    double clamp_c = kDefaultClampC;
    double lr = 2e-4;
    int epochs = 200;
    int batch_size = 32;
    int warmup_epochs = 2;
    int phase1_epochs = 16;
    int meta_epoch = 8;
    double beta = 10.0;   // percentile for the normal boundary
    double tau = 0.1;     // normalized margin width
    double alpha = 10.0;  // log-likelihood normalizer gain
    double lambda = 1.0;  // semi-push-pull weight
    std::optional<FocalConfig> focal = FocalConfig{};
    uint64_t seed = 0;
    AdamConfig adam;
    double grad_clip = 10.0;  // global-norm gradient clip
    int threads = 1;
    // "meta-epoch": recompute the boundary every meta_epoch epochs of phase 2;
    // "once": fix it when phase 2 starts
    std::string boundary_refresh = "meta-epoch";
};

struct BatchEvent {
    int epoch = 0;
    int phase = 1;
    int level = 0;
    int batch_index = 0;
    int n_normal = 0;
    int n_abnormal = 0;
    double loss = 0.0;
    double lr = 0.0;
};
using BatchObserver = std::function<void(const BatchEvent&)>;

struct EpochStats {
    int epoch = 0;
    double ml_loss = 0.0;     // mean over batches (all levels)
    double bgspp_loss = 0.0;  // mean hinge sum over batches, before lambda
    double lr = 0.0;
    double raw_b_n = 0.0;  // NaN until a boundary exists (first level)
};

struct LevelState {
    FlowModel model;
    std::optional<BoundaryState> boundary;
    double logp_ref = 0.0;  // max training-normal log-likelihood at the last refresh
};

struct Checkpoint {
    std::map<int, LevelState> levels;
    TrainConfig config;
    int epoch = 0;
    uint64_t rng_digest = 0;
    std::vector<EpochStats> history;  // transient: not serialized
};

// Flattened position-level training pool for one feature level; spans in
// `samples` point into the owned storage.
struct LevelPool {
    int d = 0;
    std::vector<double> features;
    std::vector<double> conditions;
    std::vector<Sample> samples;
    std::vector<size_t> normal_indices;
    size_t abnormal_count = 0;
};

// Positions of abnormal images count as abnormal exactly where the mask
// covers their grid cell; everything else is normal. Abnormal multi-position
// samples therefore require masks.
LevelPool build_level_pool(const Dataset& dataset, int level, int cond_dim);

// Data-dependent init: walks the blocks once over the batch, setting each
// fixed per-channel scale to 1/(stddev + 1e-6) of that block's pre-scale
// output. Batches of fewer than 2 samples leave the scales at 1.
void init_fixed_scales(FlowModel& model, std::span<const Sample> batch);

// Throws std::invalid_argument on any out-of-contract field.
void validate_train_config(const TrainConfig& config);

// Two-phase loop: phase 1 fits normals by maximum likelihood; phase 2 holds
// a boundary fixed inside each meta-epoch and optimizes the combined
// objective. A closing refresh aligns the stored boundary and reference
// likelihood with the final parameters.
Checkpoint train(const Dataset& dataset, const TrainConfig& config,
                 const BatchObserver& observer = {});

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

struct SampleScore {
    std::string id;
    Label label = Label::Normal;
    double score = 0.0;  // image-level anomaly score in [0, 1]
    AnomalyMap map;
    std::map<int, LevelGrid> grids;  // per-level position log-likelihoods
};

// Scores every sample: per-level log-likelihood grids, an assembled anomaly
// map at map_scale times the largest grid, and an image score taken against
// the checkpoint's stored normal reference likelihood.
std::vector<SampleScore> score_dataset(const Checkpoint& ckpt, const Dataset& dataset,
                                       int map_scale = 4, double smoothing_sigma = 4.0);

}  // namespace bgad
