#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bgad/data.hpp"
#include "bgad/kv.hpp"
#include "bgad/metrics.hpp"
#include "bgad/objective.hpp"
#include "bgad/png_io.hpp"
#include "bgad/racp.hpp"
#include "bgad/rng.hpp"
#include "bgad/trainer.hpp"

namespace fs = std::filesystem;
using namespace bgad;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Resolved key-value configuration for one command: file keys overlaid by
// explicit command-line flags, checked against the command's key set.
class Settings {
public:
    void load_file(const std::string& path) {
        for (auto& [k, v] : parse_kv_file(path)) kv_[k] = v;
    }
    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    void restrict_keys(const std::set<std::string>& allowed) const {
        std::string bad;
        for (const auto& [k, _] : kv_) {
            if (!allowed.count(k)) bad += (bad.empty() ? "" : ", ") + k;
        }
        if (!bad.empty()) throw ConfigError("unknown config keys: " + bad);
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    const std::string& str(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw ConfigError("missing required config key: " + key);
        return it->second;
    }
    std::string str_or(const std::string& key, const std::string& dflt) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? dflt : it->second;
    }
    int geti(const std::string& key, int dflt) const {
        return has(key) ? parse_int(key, str(key)) : dflt;
    }
    uint64_t getu64(const std::string& key, uint64_t dflt) const {
        if (!has(key)) return dflt;
        try {
            return std::stoull(str(key));
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not an unsigned integer");
        }
    }
    double getd(const std::string& key, double dflt) const {
        if (!has(key)) return dflt;
        const std::string& s = str(key);
        double v = 0.0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
            throw ConfigError("config key " + key + ": not a number: " + s);
        }
        return v;
    }
    bool getb(const std::string& key, bool dflt) const {
        if (!has(key)) return dflt;
        const std::string& s = str(key);
        if (s == "0" || s == "false") return false;
        if (s == "1" || s == "true") return true;
        throw ConfigError("config key " + key + ": expected 0/1/true/false");
    }

    std::string echo() const {
        std::ostringstream out;
        for (const auto& [k, v] : kv_) out << k << " = " << v << "\n";
        return out.str();
    }

private:
    static int parse_int(const std::string& key, const std::string& s) {
        int v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
            throw ConfigError("config key " + key + ": not an integer: " + s);
        }
        return v;
    }

    std::map<std::string, std::string> kv_;
};

const std::set<std::string> kCommonKeys = {"seed", "threads", "out"};

std::set<std::string> with_common(std::set<std::string> keys) {
    keys.insert(kCommonKeys.begin(), kCommonKeys.end());
    return keys;
}

void require_readable(const std::string& path, const char* what) {
    if (!fs::exists(path)) {
        throw ConfigError(std::string(what) + " not found: " + path);
    }
}

void write_echo(const Settings& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_text_atomic((fs::path(out_dir) / "config_echo.txt").string(), cfg.echo());
}

TrainConfig train_config_from(const Settings& cfg) {
    TrainConfig tc;
    if (cfg.has("levels")) {
        tc.levels.clear();
        std::string cur;
        for (char ch : cfg.str("levels") + ",") {
            if (ch == ',') {
                if (!cur.empty()) tc.levels.push_back(std::stoi(cur));
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
    }
    tc.blocks = cfg.geti("blocks", tc.blocks);
    tc.cond_dim = cfg.geti("cond_dim", tc.cond_dim);
    tc.clamp_c = cfg.getd("clamp_c", tc.clamp_c);
    tc.lr = cfg.getd("lr", tc.lr);
    tc.epochs = cfg.geti("epochs", tc.epochs);
    tc.batch_size = cfg.geti("batch_size", tc.batch_size);
    tc.warmup_epochs = cfg.geti("warmup_epochs", tc.warmup_epochs);
    tc.phase1_epochs = cfg.geti("phase1_epochs", tc.phase1_epochs);
    tc.meta_epoch = cfg.geti("meta_epoch", tc.meta_epoch);
    tc.beta = cfg.getd("beta", tc.beta);
    tc.tau = cfg.getd("tau", tc.tau);
    tc.alpha = cfg.getd("alpha", tc.alpha);
    tc.lambda = cfg.getd("lambda", tc.lambda);
    if (!cfg.getb("focal", true)) {
        tc.focal.reset();
    } else {
        FocalConfig f;
        f.alpha_norm = cfg.getd("focal.alpha_norm", f.alpha_norm);
        f.gamma_norm = cfg.getd("focal.gamma_norm", f.gamma_norm);
        f.logp_norm_threshold = cfg.getd("focal.logp_norm_threshold", f.logp_norm_threshold);
        f.alpha_abn = cfg.getd("focal.alpha_abn", f.alpha_abn);
        f.gamma_abn = cfg.getd("focal.gamma_abn", f.gamma_abn);
        f.logp_abn_threshold = cfg.getd("focal.logp_abn_threshold", f.logp_abn_threshold);
        tc.focal = f;
    }
    tc.seed = cfg.getu64("seed", tc.seed);
    tc.adam.beta1 = cfg.getd("adam.beta1", tc.adam.beta1);
    tc.adam.beta2 = cfg.getd("adam.beta2", tc.adam.beta2);
    tc.adam.eps = cfg.getd("adam.eps", tc.adam.eps);
    tc.grad_clip = cfg.getd("grad_clip", tc.grad_clip);
    tc.threads = cfg.geti("threads", tc.threads);
    tc.boundary_refresh = cfg.str_or("boundary_refresh", tc.boundary_refresh);
    return tc;
}

int cmd_train(const Settings& cfg) {
    cfg.restrict_keys(with_common({"manifest",
                                   "levels",
                                   "blocks",
                                   "cond_dim",
                                   "clamp_c",
                                   "lr",
                                   "epochs",
                                   "batch_size",
                                   "warmup_epochs",
                                   "phase1_epochs",
                                   "meta_epoch",
                                   "beta",
                                   "tau",
                                   "alpha",
                                   "lambda",
                                   "focal",
                                   "focal.alpha_norm",
                                   "focal.gamma_norm",
                                   "focal.logp_norm_threshold",
                                   "focal.alpha_abn",
                                   "focal.gamma_abn",
                                   "focal.logp_abn_threshold",
                                   "adam.beta1",
                                   "adam.beta2",
                                   "adam.eps",
                                   "grad_clip",
                                   "boundary_refresh"}));
    const std::string out = cfg.str("out");
    const std::string manifest_path = cfg.str("manifest");
    TrainConfig tc = train_config_from(cfg);
    try {
        validate_train_config(tc);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    require_readable(manifest_path, "manifest");

    Manifest manifest = load_manifest(manifest_path, "train");
    auto issues = validate_manifest(manifest, false);
    if (!issues.empty()) {
        std::string msg = "manifest problems:";
        for (const auto& i : issues) msg += "\n  " + i;
        throw ConfigError(msg);
    }

    write_echo(cfg, out);
    Dataset dataset = load_dataset(manifest);
    Checkpoint ckpt = train(dataset, tc);
    save_checkpoint(ckpt, (fs::path(out) / "checkpoint").string());

    std::ostringstream csv;
    csv << "epoch,ml_loss,bgspp_loss,lr,raw_b_n\n";
    for (const EpochStats& row : ckpt.history) {
        csv << row.epoch << "," << format_double(row.ml_loss) << ","
            << format_double(row.bgspp_loss) << "," << format_double(row.lr) << ","
            << format_double(row.raw_b_n) << "\n";
    }
    write_text_atomic((fs::path(out) / "loss_curve.csv").string(), csv.str());
    std::cout << "trained " << tc.epochs << " epochs; checkpoint at "
              << (fs::path(out) / "checkpoint").string() << "\n";
    return kExitOk;
}

int cmd_score(const Settings& cfg) {
    cfg.restrict_keys(with_common({"checkpoint", "manifest", "map_scale", "smoothing_sigma"}));
    const std::string out = cfg.str("out");
    const std::string ckpt_dir = cfg.str("checkpoint");
    const std::string manifest_path = cfg.str("manifest");
    const int map_scale = cfg.geti("map_scale", 4);
    const double sigma = cfg.getd("smoothing_sigma", 4.0);
    if (map_scale < 1) throw ConfigError("map_scale must be >= 1");
    if (sigma < 0) throw ConfigError("smoothing_sigma must be >= 0");
    require_readable(ckpt_dir, "checkpoint");
    require_readable(manifest_path, "manifest");

    Checkpoint ckpt = load_checkpoint(ckpt_dir);  // corrupt checkpoint: fail before outputs
    Manifest manifest = load_manifest(manifest_path, "test");
    Dataset dataset = load_dataset(manifest);

    write_echo(cfg, out);
    auto scores = score_dataset(ckpt, dataset, map_scale, sigma);

    fs::create_directories(fs::path(out) / "maps");
    std::ostringstream csv;
    csv << "id,label,score\n";
    for (const SampleScore& s : scores) {
        csv << s.id << "," << to_string(s.label) << "," << format_double(s.score) << "\n";
        Tensor t;
        t.dims = {static_cast<uint32_t>(s.map.h), static_cast<uint32_t>(s.map.w)};
        t.values.assign(s.map.scores.begin(), s.map.scores.end());
        write_fbt((fs::path(out) / "maps" / (s.id + ".fbt")).string(), t);
    }
    write_text_atomic((fs::path(out) / "scores.csv").string(), csv.str());
    std::cout << "scored " << scores.size() << " samples into " << out << "\n";
    return kExitOk;
}

struct ScoreRow {
    std::string id;
    Label label = Label::Normal;
    double score = 0.0;
};

std::vector<ScoreRow> read_scores_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scores file: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "id,label,score") {
        throw ConfigError("scores file must start with header id,label,score: " + path);
    }
    std::vector<ScoreRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t c1 = line.find(','), c2 = line.rfind(',');
        if (c1 == std::string::npos || c2 == c1) {
            throw ConfigError("malformed scores row: " + line);
        }
        ScoreRow row;
        row.id = line.substr(0, c1);
        std::string label = line.substr(c1 + 1, c2 - c1 - 1);
        if (label == "normal") {
            row.label = Label::Normal;
        } else if (label == "abnormal") {
            row.label = Label::Abnormal;
        } else {
            throw ConfigError("bad label in scores row: " + line);
        }
        std::string sval = line.substr(c2 + 1);
        auto res = std::from_chars(sval.data(), sval.data() + sval.size(), row.score);
        if (res.ec != std::errc{} || res.ptr != sval.data() + sval.size()) {
            throw ConfigError("bad score in scores row: " + line);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

int cmd_eval(const Settings& cfg) {
    cfg.restrict_keys(with_common({"scores", "maps", "manifest", "fpr_limit"}));
    const std::string out = cfg.str("out");
    const std::string scores_path = cfg.str("scores");
    const std::string manifest_path = cfg.str("manifest");
    const double fpr_limit = cfg.getd("fpr_limit", 0.3);
    require_readable(scores_path, "scores file");
    require_readable(manifest_path, "manifest");
    const std::string maps_dir = cfg.str_or("maps", "");
    if (!maps_dir.empty()) require_readable(maps_dir, "maps directory");

    std::vector<ScoreRow> rows = read_scores_csv(scores_path);
    Manifest manifest = load_manifest(manifest_path, "test");

    std::map<std::string, const SampleRecord*> by_id;
    for (const auto& rec : manifest.records) by_id[rec.id] = &rec;
    std::vector<std::string> problems;
    std::set<std::string> seen;
    for (const auto& row : rows) {
        auto it = by_id.find(row.id);
        if (it == by_id.end()) {
            problems.push_back("scored id not in manifest: " + row.id);
        } else if (it->second->label != row.label) {
            problems.push_back("label mismatch for id: " + row.id);
        }
        seen.insert(row.id);
    }
    for (const auto& rec : manifest.records) {
        if (!seen.count(rec.id)) problems.push_back("manifest id missing a score: " + rec.id);
    }
    if (!problems.empty()) {
        std::string msg = "score/manifest mismatch:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ConfigError(msg);
    }

    write_echo(cfg, out);

    std::vector<double> img_scores;
    std::vector<uint8_t> img_labels;
    for (const auto& row : rows) {
        img_scores.push_back(row.score);
        img_labels.push_back(row.label == Label::Abnormal ? 1 : 0);
    }

    std::ostringstream report;
    report << "n_samples = " << rows.size() << "\n";
    report << "image_auroc = " << format_double(auroc(img_scores, img_labels)) << "\n";

    if (!maps_dir.empty()) {
        std::vector<AnomalyMap> maps;
        std::vector<Mask> masks;
        std::vector<double> pix_scores;
        std::vector<uint8_t> pix_labels;
        bool masks_ok = true;
        for (const auto& row : rows) {
            const SampleRecord& rec = *by_id.at(row.id);
            if (rec.label == Label::Abnormal && rec.mask_path.empty()) {
                masks_ok = false;
                break;
            }
        }
        if (masks_ok) {
            for (size_t i = 0; i < rows.size(); ++i) {
                const SampleRecord& rec = *by_id.at(rows[i].id);
                Tensor t = read_fbt((fs::path(maps_dir) / (rows[i].id + ".fbt")).string());
                if (t.dims.size() != 2) {
                    throw std::runtime_error("map tensor for " + rows[i].id + " must be rank 2");
                }
                AnomalyMap map;
                map.h = static_cast<int>(t.dims[0]);
                map.w = static_cast<int>(t.dims[1]);
                map.sample_id = static_cast<int64_t>(i);
                map.scores.assign(t.values.begin(), t.values.end());

                Mask mask(map.h, map.w);
                if (!rec.mask_path.empty()) {
                    fs::path mp(rec.mask_path);
                    mask = read_mask_png(
                        mp.is_absolute() ? mp.string()
                                         : (fs::path(manifest.base_dir) / mp).string());
                    if (mask.h != map.h || mask.w != map.w) {
                        throw std::runtime_error("mask and map dims differ for " + rows[i].id);
                    }
                }
                for (size_t p = 0; p < map.scores.size(); ++p) {
                    pix_scores.push_back(map.scores[p]);
                    pix_labels.push_back(mask.data[p]);
                }
                maps.push_back(std::move(map));
                masks.push_back(std::move(mask));
            }
            report << "pixel_auroc = " << format_double(auroc(pix_scores, pix_labels)) << "\n";
            report << "pro = " << format_double(pro(maps, masks, fpr_limit)) << "\n";
            report << "fpr_limit = " << format_double(fpr_limit) << "\n";
        } else {
            report << "# pixel metrics skipped: abnormal samples without masks\n";
        }
    }

    write_text_atomic((fs::path(out) / "metrics.txt").string(), report.str());

    std::ostringstream roc;
    roc << "threshold,tpr,fpr\n";
    for (const RocPoint& p : roc_points(img_scores, img_labels)) {
        roc << format_double(p.threshold) << "," << format_double(p.tpr) << ","
            << format_double(p.fpr) << "\n";
    }
    write_text_atomic((fs::path(out) / "roc.csv").string(), roc.str());
    std::cout << report.str();
    return kExitOk;
}

int cmd_augment(const Settings& cfg) {
    cfg.restrict_keys(with_common({"manifest", "s", "count"}));
    const std::string out = cfg.str("out");
    const std::string manifest_path = cfg.str("manifest");
    const int subset = cfg.geti("s", 3);
    const uint64_t seed = cfg.getu64("seed", 0);
    if (subset < 0 || subset > kNumTransforms) {
        throw ConfigError("s must lie in [0, " + std::to_string(kNumTransforms) + "]");
    }
    require_readable(manifest_path, "manifest");

    Manifest manifest = load_manifest(manifest_path, "train");
    std::vector<const SampleRecord*> normals, abnormals;
    for (const auto& rec : manifest.records) {
        if (rec.image_path.empty()) continue;
        if (rec.label == Label::Normal) {
            normals.push_back(&rec);
        } else if (!rec.mask_path.empty()) {
            abnormals.push_back(&rec);
        }
    }
    if (normals.empty()) throw ConfigError("manifest has no normal images");
    if (abnormals.empty()) throw ConfigError("manifest has no abnormal images with masks");
    const int count = cfg.geti("count", static_cast<int>(abnormals.size()));
    if (count < 1) throw ConfigError("count must be >= 1");

    write_echo(cfg, out);
    fs::create_directories(fs::path(out) / "composites");
    fs::create_directories(fs::path(out) / "masks");

    auto resolve = [&](const std::string& rel) {
        fs::path p(rel);
        return p.is_absolute() ? p.string() : (fs::path(manifest.base_dir) / p).string();
    };

    Manifest extended;
    extended.split = manifest.split;
    extended.base_dir = out;
    for (const auto& rec : manifest.records) {
        SampleRecord abs = rec;
        if (!abs.image_path.empty()) abs.image_path = resolve(abs.image_path);
        if (!abs.mask_path.empty()) abs.mask_path = resolve(abs.mask_path);
        extended.records.push_back(std::move(abs));
    }

    for (int i = 0; i < count; ++i) {
        Rng pick = Rng(seed).fork(static_cast<uint64_t>(i) + 1);
        const SampleRecord* nrec = normals[pick.below(normals.size())];
        const SampleRecord* arec = abnormals[pick.below(abnormals.size())];
        RasterImage normal_img = read_png(resolve(nrec->image_path));
        RasterImage abnormal_img = read_png(resolve(arec->image_path));
        AnomalyRegion region = make_region(read_mask_png(resolve(arec->mask_path)));

        auto [composite, out_region] =
            racp_generate(normal_img, abnormal_img, region, subset,
                          splitmix64(seed + 0x9E3779B97F4A7C15ull * (i + 1)));

        std::string id = "aug-" + std::to_string(i);
        std::string img_rel = "composites/" + id + ".png";
        std::string mask_rel = "masks/" + id + ".png";
        write_png((fs::path(out) / img_rel).string(), composite);
        write_mask_png((fs::path(out) / mask_rel).string(), out_region.mask);

        SampleRecord rec;
        rec.id = id;
        rec.label = Label::Abnormal;
        rec.image_path = img_rel;
        rec.mask_path = mask_rel;
        extended.records.push_back(std::move(rec));
    }
    write_manifest(extended, (fs::path(out) / "augmented.csv").string());
    std::cout << "generated " << count << " composites into " << out << "\n";
    return kExitOk;
}

int cmd_bound_report(const Settings& cfg) {
    cfg.restrict_keys(with_common({"checkpoint", "manifest", "epsilon"}));
    const std::string out = cfg.str("out");
    const std::string ckpt_dir = cfg.str("checkpoint");
    const std::string manifest_path = cfg.str("manifest");
    if (!cfg.has("epsilon")) throw ConfigError("missing required config key: epsilon");
    const double epsilon = cfg.getd("epsilon", 0.0);
    require_readable(ckpt_dir, "checkpoint");
    require_readable(manifest_path, "manifest");

    Checkpoint ckpt = load_checkpoint(ckpt_dir);
    for (const auto& [level, state] : ckpt.levels) {
        if (!state.boundary) {
            throw ConfigError("checkpoint level " + std::to_string(level) +
                              " has no boundary; run phase-2 training first");
        }
        double margin = state.boundary->b_n - state.boundary->b_a;
        if (!(epsilon > 0.0 && epsilon < margin)) {
            throw ConfigError("epsilon must lie in (0, " + format_double(margin) + ")");
        }
    }

    Manifest manifest = load_manifest(manifest_path, "test");
    Dataset dataset = load_dataset(manifest);

    write_echo(cfg, out);

    std::ostringstream report;
    std::vector<double> all_norm, all_abn;
    for (const auto& [level, state] : ckpt.levels) {
        LevelPool pool = build_level_pool(dataset, level, ckpt.config.cond_dim);
        std::vector<double> norm_lls, abn_lls;
        for (const Sample& s : pool.samples) {
            double ll = state.model.log_likelihood(s.features, s.condition);
            double nv = normalize_logp(ll, state.boundary->alpha_n);
            (s.label == Label::Normal ? norm_lls : abn_lls).push_back(nv);
        }
        if (abn_lls.empty()) {
            throw ConfigError("manifest has no abnormal positions; the report needs both classes");
        }
        BoundReport br = bound_report(norm_lls, abn_lls, *state.boundary, epsilon,
                                      ckpt.config.lambda, state.model.d());
        const std::string p = "level." + std::to_string(level) + ".";
        report << p << "lhs = " << format_double(br.lhs) << "\n";
        report << p << "rhs = " << format_double(br.rhs) << "\n";
        report << p << "slack = " << format_double(br.slack) << "\n";
        all_norm.insert(all_norm.end(), norm_lls.begin(), norm_lls.end());
        all_abn.insert(all_abn.end(), abn_lls.begin(), abn_lls.end());
    }
    // normalized boundaries agree across levels (b_n = -1/alpha), so the
    // pooled positions admit one aggregate report
    const LevelState& first = ckpt.levels.begin()->second;
    BoundReport agg = bound_report(all_norm, all_abn, *first.boundary, epsilon,
                                   ckpt.config.lambda, first.model.d());
    report << "aggregate.lhs = " << format_double(agg.lhs) << "\n";
    report << "aggregate.rhs = " << format_double(agg.rhs) << "\n";
    report << "aggregate.slack = " << format_double(agg.slack) << "\n";

    write_text_atomic((fs::path(out) / "bound_report.txt").string(), report.str());
    std::cout << report.str();
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"boundary-guided anomaly detection toolkit"};
    app.require_subcommand(1);

    struct Flags {
        std::string config, out, manifest, checkpoint, scores, maps;
        std::optional<uint64_t> seed;
        std::optional<int> threads, s, count;
        std::optional<double> epsilon;
    } flags;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", flags.config, "key = value config file");
        sub->add_option("--seed", flags.seed, "seed override");
        sub->add_option("--threads", flags.threads, "thread count override");
        sub->add_option("--out", flags.out, "output directory");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "two-phase training");
    add_common(train_cmd);
    train_cmd->add_option("--manifest", flags.manifest, "training manifest CSV");

    CLI::App* score_cmd = app.add_subcommand("score", "score a manifest with a checkpoint");
    add_common(score_cmd);
    score_cmd->add_option("--manifest", flags.manifest, "manifest CSV");
    score_cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint directory");

    CLI::App* eval_cmd = app.add_subcommand("eval", "compute metrics from scores");
    add_common(eval_cmd);
    eval_cmd->add_option("--manifest", flags.manifest, "manifest CSV");
    eval_cmd->add_option("--scores", flags.scores, "scores CSV from the score command");
    eval_cmd->add_option("--maps", flags.maps, "anomaly map directory");

    CLI::App* augment_cmd = app.add_subcommand("augment", "synthesize abnormal composites");
    add_common(augment_cmd);
    augment_cmd->add_option("--manifest", flags.manifest, "image manifest CSV");
    augment_cmd->add_option("--s", flags.s, "transform subset size");
    augment_cmd->add_option("--count", flags.count, "number of composites");

    CLI::App* bound_cmd = app.add_subcommand("bound-report", "error-bound diagnostic");
    add_common(bound_cmd);
    bound_cmd->add_option("--manifest", flags.manifest, "manifest CSV");
    bound_cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint directory");
    bound_cmd->add_option("--epsilon", flags.epsilon, "margin shrink in normalized units");

    CLI11_PARSE(app, argc, argv);

    try {
        Settings cfg;
        if (!flags.config.empty()) cfg.load_file(flags.config);
        if (flags.seed) cfg.set("seed", std::to_string(*flags.seed));
        if (flags.threads) cfg.set("threads", std::to_string(*flags.threads));
        if (!flags.out.empty()) cfg.set("out", flags.out);
        if (!flags.manifest.empty()) cfg.set("manifest", flags.manifest);
        if (!flags.checkpoint.empty()) cfg.set("checkpoint", flags.checkpoint);
        if (!flags.scores.empty()) cfg.set("scores", flags.scores);
        if (!flags.maps.empty()) cfg.set("maps", flags.maps);
        if (flags.s) cfg.set("s", std::to_string(*flags.s));
        if (flags.count) cfg.set("count", std::to_string(*flags.count));
        if (flags.epsilon) cfg.set("epsilon", format_double(*flags.epsilon));

        if (app.got_subcommand("train")) return cmd_train(cfg);
        if (app.got_subcommand("score")) return cmd_score(cfg);
        if (app.got_subcommand("eval")) return cmd_eval(cfg);
        if (app.got_subcommand("augment")) return cmd_augment(cfg);
        if (app.got_subcommand("bound-report")) return cmd_bound_report(cfg);
        std::cerr << "no subcommand\n";
        return kExitValidation;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
