#include "bgad/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "bgad/png_io.hpp"
#include "bgad/rng.hpp"

namespace fs = std::filesystem;

namespace bgad {

namespace {

constexpr char kMagic[4] = {'F', 'B', 'T', '1'};
constexpr uint32_t kMaxRank = 32;
constexpr uint64_t kMaxElements = uint64_t{1} << 31;

uint32_t read_u32le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

void put_u32le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

std::string resolve(const std::string& base_dir, const std::string& rel) {
    fs::path p(rel);
    if (p.is_absolute() || base_dir.empty()) return rel;
    return (fs::path(base_dir) / p).string();
}

}  // namespace

Tensor read_fbt(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FbtException(FbtError::Truncated, "cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());

    if (bytes.size() < 4) {
        throw FbtException(FbtError::Truncated, path + ": too short for the magic");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FbtException(FbtError::BadMagic, path + ": bad magic");
    }
    if (bytes.size() < 8) throw FbtException(FbtError::Truncated, path + ": missing rank");
    uint32_t rank = read_u32le(bytes.data() + 4);
    if (rank == 0 || rank > kMaxRank) {
        throw FbtException(FbtError::DimOverflow,
                           path + ": rank " + std::to_string(rank) + " out of range");
    }
    size_t dim_end = 8 + static_cast<size_t>(rank) * 4;
    if (bytes.size() < dim_end) throw FbtException(FbtError::Truncated, path + ": missing dims");

    Tensor t;
    uint64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t d = read_u32le(bytes.data() + 8 + static_cast<size_t>(i) * 4);
        t.dims.push_back(d);
        count *= d;
        if (count > kMaxElements) {
            throw FbtException(FbtError::DimOverflow, path + ": element count overflows");
        }
    }
    size_t want = dim_end + count * 4;
    if (bytes.size() < want) {
        throw FbtException(FbtError::Truncated, path + ": payload shorter than declared");
    }
    if (bytes.size() > want) {
        throw FbtException(FbtError::Truncated, path + ": trailing bytes after payload");
    }
    t.values.resize(count);
    for (uint64_t i = 0; i < count; ++i) {
        t.values[i] = std::bit_cast<float>(read_u32le(bytes.data() + dim_end + i * 4));
    }
    return t;
}

void write_fbt(const std::string& path, const Tensor& tensor) {
    if (tensor.dims.empty() || tensor.dims.size() > kMaxRank) {
        throw FbtException(FbtError::DimOverflow, path + ": rank out of range");
    }
    uint64_t count = 1;
    for (uint32_t d : tensor.dims) {
        count *= d;
        if (count > kMaxElements) {
            throw FbtException(FbtError::DimOverflow, path + ": element count overflows");
        }
    }
    if (tensor.values.size() != count) {
        throw std::invalid_argument("write_fbt: payload size does not match dims");
    }

    std::string out;
    out.reserve(8 + tensor.dims.size() * 4 + tensor.values.size() * 4);
    out.append(kMagic, 4);
    put_u32le(out, static_cast<uint32_t>(tensor.dims.size()));
    for (uint32_t d : tensor.dims) put_u32le(out, d);
    for (float v : tensor.values) put_u32le(out, std::bit_cast<uint32_t>(v));

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("write_fbt: cannot open " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw std::runtime_error("write_fbt: short write to " + tmp);
    }
    fs::rename(tmp, path);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

const char* kFixedColumns[4] = {"id", "label", "image_path", "mask_path"};

}  // namespace

Manifest load_manifest(const std::string& path, const std::string& split) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_manifest: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_manifest: empty file " + path);
    auto header = split_csv_line(line);
    if (header.size() < 4) {
        throw std::runtime_error("load_manifest: header must start with id,label,image_path,mask_path");
    }
    for (int i = 0; i < 4; ++i) {
        if (header[i] != kFixedColumns[i]) {
            throw std::runtime_error("load_manifest: missing column '" +
                                     std::string(kFixedColumns[i]) + "' in " + path);
        }
    }
    std::vector<int> feature_levels;
    for (size_t i = 4; i < header.size(); ++i) {
        const std::string& col = header[i];
        if (col.rfind("feat_l", 0) != 0 || col.size() == 6) {
            throw std::runtime_error("load_manifest: unknown column '" + col + "' in " + path);
        }
        size_t pos = 0;
        int level = std::stoi(col.substr(6), &pos);
        if (pos != col.size() - 6 || level < 0) {
            throw std::runtime_error("load_manifest: unknown column '" + col + "' in " + path);
        }
        feature_levels.push_back(level);
    }

    Manifest m;
    m.split = split;
    m.base_dir = fs::path(path).parent_path().string();
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw std::runtime_error("load_manifest: line " + std::to_string(line_no) + " has " +
                                     std::to_string(fields.size()) + " fields, expected " +
                                     std::to_string(header.size()));
        }
        SampleRecord rec;
        rec.id = fields[0];
        if (fields[1] == "normal") {
            rec.label = Label::Normal;
        } else if (fields[1] == "abnormal") {
            rec.label = Label::Abnormal;
        } else {
            throw std::runtime_error("load_manifest: line " + std::to_string(line_no) +
                                     ": label must be normal or abnormal, got '" + fields[1] + "'");
        }
        rec.image_path = fields[2];
        rec.mask_path = fields[3];
        for (size_t i = 0; i < feature_levels.size(); ++i) {
            if (!fields[4 + i].empty()) rec.feature_paths[feature_levels[i]] = fields[4 + i];
        }
        m.records.push_back(std::move(rec));
    }
    return m;
}

void write_manifest(const Manifest& manifest, const std::string& path) {
    std::set<int> levels;
    for (const auto& rec : manifest.records) {
        for (const auto& [level, _] : rec.feature_paths) levels.insert(level);
    }

    auto sanitize = [](const std::string& s) {
        if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos) {
            throw std::invalid_argument("write_manifest: field contains a delimiter: " + s);
        }
        return s;
    };

    std::ostringstream out;
    out << "id,label,image_path,mask_path";
    for (int level : levels) out << ",feat_l" << level;
    out << "\n";
    for (const auto& rec : manifest.records) {
        out << sanitize(rec.id) << "," << to_string(rec.label) << ","
            << sanitize(rec.image_path) << "," << sanitize(rec.mask_path);
        for (int level : levels) {
            auto it = rec.feature_paths.find(level);
            out << "," << (it != rec.feature_paths.end() ? sanitize(it->second) : "");
        }
        out << "\n";
    }

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("write_manifest: cannot open " + tmp);
        f << out.str();
        if (!f) throw std::runtime_error("write_manifest: short write to " + tmp);
    }
    fs::rename(tmp, path);
}

std::vector<std::string> validate_manifest(const Manifest& manifest, bool require_masks) {
    std::vector<std::string> issues;
    std::set<std::string> seen;
    for (const auto& rec : manifest.records) {
        if (!seen.insert(rec.id).second) issues.push_back("duplicate id: " + rec.id);
        if (rec.feature_paths.empty()) {
            issues.push_back("sample " + rec.id + ": no feature files");
        }
        auto check_path = [&](const std::string& p, const char* what) {
            if (p.empty()) return;
            if (!fs::exists(resolve(manifest.base_dir, p))) {
                issues.push_back("sample " + rec.id + ": missing " + what + " file " + p);
            }
        };
        check_path(rec.image_path, "image");
        check_path(rec.mask_path, "mask");
        for (const auto& [level, p] : rec.feature_paths) check_path(p, "feature");
        if (require_masks && rec.label == Label::Abnormal && rec.mask_path.empty()) {
            issues.push_back("sample " + rec.id + ": abnormal record lacks a mask");
        }
    }
    return issues;
}

Dataset load_dataset(const Manifest& manifest) {
    Dataset ds;
    ds.split = manifest.split;
    for (const auto& rec : manifest.records) {
        DataSample s;
        s.id = rec.id;
        s.label = rec.label;
        for (const auto& [level, p] : rec.feature_paths) {
            Tensor t = read_fbt(resolve(manifest.base_dir, p));
            FeatureGrid grid;
            if (t.dims.size() == 1) {
                grid.h = 1;
                grid.w = 1;
                grid.d = static_cast<int>(t.dims[0]);
            } else if (t.dims.size() == 3) {
                grid.h = static_cast<int>(t.dims[0]);
                grid.w = static_cast<int>(t.dims[1]);
                grid.d = static_cast<int>(t.dims[2]);
            } else {
                throw std::runtime_error("load_dataset: sample " + rec.id + " level " +
                                         std::to_string(level) + ": rank must be 1 or 3");
            }
            if (grid.d < 1 || grid.h < 1 || grid.w < 1) {
                throw std::runtime_error("load_dataset: sample " + rec.id +
                                         ": degenerate feature dims");
            }
            grid.values = std::move(t.values);
            s.levels[level] = std::move(grid);
        }
        if (!rec.mask_path.empty()) {
            s.mask = read_mask_png(resolve(manifest.base_dir, rec.mask_path));
            s.has_mask = true;
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

namespace {

void draw_feature(const std::string& kind, bool abnormal, int d, Rng& rng, float* out) {
    if (kind == "gaussian-cluster") {
        for (int i = 0; i < d; ++i) out[i] = static_cast<float>(rng.normal());
        if (abnormal) out[0] += 6.0f;
    } else if (kind == "ring") {
        if (abnormal) {
            for (int i = 0; i < d; ++i) out[i] = static_cast<float>(0.3 * rng.normal());
        } else {
            double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            double r = 4.0 + 0.25 * rng.normal();
            out[0] = static_cast<float>(r * std::cos(theta));
            out[1] = static_cast<float>(r * std::sin(theta));
            for (int i = 2; i < d; ++i) out[i] = static_cast<float>(0.25 * rng.normal());
        }
    } else if (kind == "two-moons") {
        double t = rng.uniform(0.0, 3.14159265358979323846);
        double x0, x1;
        if (abnormal) {
            x0 = 1.0 - std::cos(t);
            x1 = 0.5 - std::sin(t);
        } else {
            x0 = std::cos(t);
            x1 = std::sin(t);
        }
        out[0] = static_cast<float>(2.0 * x0 + 0.15 * rng.normal());
        out[1] = static_cast<float>(2.0 * x1 + 0.15 * rng.normal());
        for (int i = 2; i < d; ++i) out[i] = static_cast<float>(0.15 * rng.normal());
    } else {
        throw std::invalid_argument("synth_dataset: unknown kind '" + kind + "'");
    }
}

}  // namespace

Dataset synth_dataset(const SynthConfig& cfg) {
    if (cfg.d < 2) throw std::invalid_argument("synth_dataset: d must be >= 2");
    if (cfg.n_normal < 0 || cfg.n_abnormal < 0) {
        throw std::invalid_argument("synth_dataset: counts must be >= 0");
    }
    if (cfg.grid_h < 1 || cfg.grid_w < 1) {
        throw std::invalid_argument("synth_dataset: grid dims must be >= 1");
    }
    const bool grid_mode = cfg.grid_h > 1 || cfg.grid_w > 1;
    const int mask_scale = 4;
    Rng base(cfg.seed);

    Dataset ds;
    ds.split = cfg.split;
    auto make_sample = [&](bool abnormal, int index, uint64_t stream) {
        Rng rng = base.fork(stream);
        DataSample s;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s-%c-%04d", cfg.split.c_str(), abnormal ? 'a' : 'n',
                      index);
        s.id = buf;
        s.label = abnormal ? Label::Abnormal : Label::Normal;

        FeatureGrid grid;
        grid.h = cfg.grid_h;
        grid.w = cfg.grid_w;
        grid.d = cfg.d;
        grid.values.resize(static_cast<size_t>(cfg.grid_h) * cfg.grid_w * cfg.d);

        int r0 = 0, c0 = 0, rh = 0, rw = 0;
        if (abnormal && grid_mode) {
            rh = 1 + static_cast<int>(rng.below(std::max(1, cfg.grid_h / 2)));
            rw = 1 + static_cast<int>(rng.below(std::max(1, cfg.grid_w / 2)));
            r0 = static_cast<int>(rng.below(cfg.grid_h - rh + 1));
            c0 = static_cast<int>(rng.below(cfg.grid_w - rw + 1));
        }
        for (int r = 0; r < cfg.grid_h; ++r) {
            for (int c = 0; c < cfg.grid_w; ++c) {
                bool in_patch = abnormal && (!grid_mode || (r >= r0 && r < r0 + rh && c >= c0 &&
                                                            c < c0 + rw));
                float* out = grid.values.data() + (static_cast<size_t>(r) * cfg.grid_w + c) * cfg.d;
                draw_feature(cfg.kind, in_patch, cfg.d, rng, out);
            }
        }
        s.levels[0] = std::move(grid);

        if (grid_mode) {
            s.mask = Mask(cfg.grid_h * mask_scale, cfg.grid_w * mask_scale);
            if (abnormal) {
                for (int r = r0 * mask_scale; r < (r0 + rh) * mask_scale; ++r) {
                    for (int c = c0 * mask_scale; c < (c0 + rw) * mask_scale; ++c) {
                        s.mask.at(r, c) = 1;
                    }
                }
            }
            s.has_mask = true;
        }
        ds.samples.push_back(std::move(s));
    };

    for (int i = 0; i < cfg.n_normal; ++i) make_sample(false, i, static_cast<uint64_t>(i));
    for (int i = 0; i < cfg.n_abnormal; ++i) {
        make_sample(true, i, uint64_t{1} << 40 | static_cast<uint64_t>(i));
    }
    return ds;
}

Manifest write_dataset(const Dataset& dataset, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "features");
    bool any_mask = false;
    for (const auto& s : dataset.samples) any_mask = any_mask || s.has_mask;
    if (any_mask) fs::create_directories(fs::path(dir) / "masks");

    Manifest m;
    m.split = dataset.split;
    m.base_dir = dir;
    for (const auto& s : dataset.samples) {
        SampleRecord rec;
        rec.id = s.id;
        rec.label = s.label;
        for (const auto& [level, grid] : s.levels) {
            Tensor t;
            if (grid.h == 1 && grid.w == 1) {
                t.dims = {static_cast<uint32_t>(grid.d)};
            } else {
                t.dims = {static_cast<uint32_t>(grid.h), static_cast<uint32_t>(grid.w),
                          static_cast<uint32_t>(grid.d)};
            }
            t.values = grid.values;
            std::string rel = "features/" + s.id + "_l" + std::to_string(level) + ".fbt";
            write_fbt((fs::path(dir) / rel).string(), t);
            rec.feature_paths[level] = rel;
        }
        if (s.has_mask) {
            std::string rel = "masks/" + s.id + ".png";
            write_mask_png((fs::path(dir) / rel).string(), s.mask);
            rec.mask_path = rel;
        }
        m.records.push_back(std::move(rec));
    }
    write_manifest(m, (fs::path(dir) / (dataset.split + ".csv")).string());
    return m;
}

}  // namespace bgad
