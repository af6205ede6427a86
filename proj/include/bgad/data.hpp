#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bgad/mask.hpp"
#include "bgad/types.hpp"

namespace bgad {

// FBT container: magic "FBT1", little-endian u32 rank, rank little-endian
// u32 dims, then the row-major f32 payload, little-endian.
struct Tensor {
    std::vector<uint32_t> dims;
    std::vector<float> values;

    size_t element_count() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }
};

enum class FbtError { BadMagic, Truncated, DimOverflow };

class FbtException : public std::runtime_error {
public:
    FbtException(FbtError code, const std::string& what)
        : std::runtime_error(what), code_(code) {}
    FbtError code() const { return code_; }

private:
    FbtError code_;
};

Tensor read_fbt(const std::string& path);
void write_fbt(const std::string& path, const Tensor& tensor);  // temp file + rename

struct SampleRecord {
    std::string id;
    Label label = Label::Normal;
    std::string image_path;                    // empty when absent
    std::string mask_path;                     // empty when absent
    std::map<int, std::string> feature_paths;  // level -> path
};

struct Manifest {
    std::vector<SampleRecord> records;
    std::string split;  // "train" or "test"
    std::string base_dir;
};

// CSV with header id,label,image_path,mask_path,feat_l0,feat_l1,...; empty
// cells mean absent and relative paths resolve against the manifest directory.
Manifest load_manifest(const std::string& path, const std::string& split);
void write_manifest(const Manifest& manifest, const std::string& path);

// Itemized structural diagnostics; empty means valid. When require_masks is
// set, abnormal records must reference a mask.
std::vector<std::string> validate_manifest(const Manifest& manifest, bool require_masks);

// One feature level laid out on a grid: h*w positions of d channels each.
struct FeatureGrid {
    int h = 0, w = 0, d = 0;
    std::vector<float> values;  // row-major positions, channels innermost

    std::span<const float> at(int r, int c) const {
        return {values.data() + (static_cast<size_t>(r) * w + c) * d, static_cast<size_t>(d)};
    }
};

struct DataSample {
    std::string id;
    Label label = Label::Normal;
    std::map<int, FeatureGrid> levels;
    Mask mask;  // empty (h = w = 0) when absent
    bool has_mask = false;
};

struct Dataset {
    std::vector<DataSample> samples;
    std::string split;
};

// Materializes every record: feature tensors (rank 1 = a single position,
// rank 3 = H×W×d grid) and mask PNGs.
Dataset load_dataset(const Manifest& manifest);

struct SynthConfig {
    std::string kind = "gaussian-cluster";  // gaussian-cluster | ring | two-moons
    int n_normal = 100;
    int n_abnormal = 10;
    int d = 8;
    uint64_t seed = 1;
    std::string split = "train";
    // grid mode: every sample becomes a grid_h×grid_w feature grid; abnormal
    // samples get a planted anomalous patch and a matching mask at 4x scale
    int grid_h = 1;
    int grid_w = 1;
};

// Pure function of its config; abnormal features come from a displaced or
// structurally distinct distribution.
Dataset synth_dataset(const SynthConfig& cfg);

// Writes features (FBT), masks (PNG) and the manifest CSV under dir; returns
// the manifest (paths relative to dir).
Manifest write_dataset(const Dataset& dataset, const std::string& dir);

}  // namespace bgad
