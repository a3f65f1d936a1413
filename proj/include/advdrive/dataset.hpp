#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "advdrive/image.hpp"

namespace advdrive {

struct Sample {
    Image image;
    double angle = 0.0;  // steering label in [-1, 1]
    std::string id;
};

enum class SplitTag { Train, Test };

// Ordered, immutable after construction. Order matters: the universal
// perturbation crafting loop walks samples in dataset order.
struct Dataset {
    std::vector<Sample> samples;
    SplitTag split_tag = SplitTag::Train;
    uint64_t seed = 0;

    size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

// Synthetic road scenes with derivable steering labels. A lane with
// centerline x(y) = c0 + c1*y + c2*y^2 is drawn over a textured ground;
// the label is clamp(kCurvatureGain*c2 + kOffsetGain*offset, -1, 1) where
// offset is the lane-center displacement at the bottom of the frame.
// Sample i depends only on (seed, i), so regeneration is exact.
constexpr double kCurvatureGain = 1.0;
constexpr double kOffsetGain = 2.0;

Dataset generate_synthetic(int n, int size, uint64_t seed);

// Renders sample `index` of generate_synthetic(n, size, seed) for any
// n > index without generating the rest.
Sample synthetic_sample(uint64_t seed, int index, int size);

// Manifest: UTF-8 CSV, header "image,angle"; image paths are relative to
// the manifest file, angles are decimals in [-1, 1]. Images are 8-bit
// RGB PNG, scaled to [0, 1] by /255 on load.
Dataset load_manifest(const std::string& path);

// Writes dir/manifest.csv plus dir/images/NNNNNN.png for each sample and
// returns the manifest path.
std::string write_dataset(const Dataset& ds, const std::string& dir);

std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, uint64_t seed);

// Dataset restricted to the first n samples (dataset order preserved).
Dataset take(const Dataset& ds, size_t n);

}  // namespace advdrive
