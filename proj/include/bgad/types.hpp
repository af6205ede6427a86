#pragma once

#include <string>
#include <vector>

namespace bgad {

enum class Label { Normal, Abnormal };

inline const char* to_string(Label l) { return l == Label::Normal ? "normal" : "abnormal"; }

struct GridPosition {
    int row = 0;
    int col = 0;
};

// One spatial position of a feature map; the flow's input domain.
struct FeatureVector {
    std::vector<double> values;
    int level = 0;
    GridPosition position;
};

struct LatentVector {
    std::vector<double> values;
};

// Sinusoidal encoding of a grid position, fed to every coupling subnet.
struct ConditionVector {
    std::vector<double> values;
};

}  // namespace bgad
