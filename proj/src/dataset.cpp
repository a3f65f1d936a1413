#include "advdrive/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "advdrive/png_io.hpp"
#include "advdrive/rng.hpp"

namespace advdrive {

namespace {

namespace fs = std::filesystem;

struct Scene {
    double offset;     // lane-center displacement at the bottom, in [-0.22, 0.22]
    double slope;      // c1
    double curvature;  // c2
};

Scene draw_scene(Rng& rng) {
    Scene s;
    s.offset = rng.uniform(-0.22, 0.22);
    s.slope = rng.uniform(-0.2, 0.2);
    s.curvature = rng.uniform(-0.3, 0.3);
    return s;
}

double label_for(const Scene& s) {
    const double raw = kCurvatureGain * s.curvature + kOffsetGain * s.offset;
    return std::min(1.0, std::max(-1.0, raw));
}

void render_scene(Image& img, const Scene& s, Rng& rng) {
    const int size = img.height;
    const double horizon = 0.82;
    const double line_half = 1.3 / size;
    for (int py = 0; py < size; ++py) {
        const double y = 1.0 - (py + 0.5) / size;  // 0 at the bottom row
        const double center = 0.5 + s.offset + s.slope * y + s.curvature * y * y;
        const double half_width = 0.17 * (1.0 - 0.45 * y);
        for (int px = 0; px < size; ++px) {
            const double x = (px + 0.5) / size;
            double r, g, b;
            if (y > horizon) {
                r = 0.55;
                g = 0.65;
                b = 0.85;
            } else if (x > center - half_width && x < center + half_width) {
                const double shade = 0.34 + 0.05 * y;
                r = shade;
                g = shade;
                b = shade + 0.02;
            } else {
                r = 0.20;
                g = 0.42 + 0.06 * y;
                b = 0.16;
            }
            if (y <= horizon) {
                const double dl = std::fabs(x - (center - half_width));
                const double dr = std::fabs(x - (center + half_width));
                if (dl < line_half || dr < line_half) {
                    r = 0.92;
                    g = 0.92;
                    b = 0.88;
                }
                // dashed yellow centerline
                if (std::fabs(x - center) < line_half && std::fmod(y, 0.16) < 0.09) {
                    r = 0.85;
                    g = 0.74;
                    b = 0.22;
                }
            }
            const double noise = rng.uniform(-0.03, 0.03);
            img.at(0, py, px) = std::min(1.0, std::max(0.0, r + noise));
            img.at(1, py, px) = std::min(1.0, std::max(0.0, g + noise));
            img.at(2, py, px) = std::min(1.0, std::max(0.0, b + noise));
        }
    }
}

void check_size(int size) {
    if (size != 64 && size != 128) {
        throw std::invalid_argument("synthetic image size must be 64 or 128");
    }
}

std::string pad6(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", i);
    return buf;
}

}  // namespace

Sample synthetic_sample(uint64_t seed, int index, int size) {
    check_size(size);
    Rng rng(derive_seed(seed, static_cast<uint64_t>(index)));
    const Scene scene = draw_scene(rng);
    Sample sample;
    sample.image = Image(size, size);
    render_scene(sample.image, scene, rng);
    sample.angle = label_for(scene);
    sample.id = pad6(index);
    return sample;
}

Dataset generate_synthetic(int n, int size, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("synthetic dataset needs n >= 1");
    check_size(size);
    Dataset ds;
    ds.seed = seed;
    ds.samples.reserve(n);
    for (int i = 0; i < n; ++i) {
        ds.samples.push_back(synthetic_sample(seed, i, size));
    }
    return ds;
}

Dataset load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);
    const fs::path base = fs::path(path).parent_path();
    std::string line;
    if (!std::getline(f, line) || line != "image,angle") {
        throw std::runtime_error("manifest must start with header 'image,angle': " + path);
    }
    Dataset ds;
    int row = 0;
    while (std::getline(f, line)) {
        ++row;
        if (line.empty()) continue;
        const size_t comma = line.rfind(',');
        if (comma == std::string::npos || comma == 0) {
            throw std::runtime_error("malformed manifest row " + std::to_string(row));
        }
        const std::string rel = line.substr(0, comma);
        const std::string angle_text = line.substr(comma + 1);
        double angle = 0.0;
        try {
            size_t used = 0;
            angle = std::stod(angle_text, &used);
            if (used != angle_text.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw std::runtime_error("malformed angle in manifest row " + std::to_string(row));
        }
        if (!(angle >= -1.0 && angle <= 1.0)) {
            throw std::runtime_error("angle out of [-1,1] in manifest row " + std::to_string(row));
        }
        int w = 0, h = 0;
        const std::vector<uint8_t> rgb = read_png_rgb8((base / rel).string(), w, h);
        Sample sample;
        sample.image = from_rgb8(rgb, h, w);
        sample.angle = angle;
        sample.id = std::to_string(row) + ":" + rel;
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

std::string write_dataset(const Dataset& ds, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root / "images");
    std::ostringstream manifest;
    manifest << "image,angle\n";
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        const std::string rel = "images/" + pad6(static_cast<int>(i)) + ".png";
        write_png_rgb8((root / rel).string(), s.image.width, s.image.height, to_rgb8(s.image));
        char angle[32];
        std::snprintf(angle, sizeof angle, "%.6f", s.angle);
        manifest << rel << "," << angle << "\n";
    }
    const std::string manifest_path = (root / "manifest.csv").string();
    std::ofstream f(manifest_path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write manifest: " + manifest_path);
    f << manifest.str();
    return manifest_path;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw std::invalid_argument("test_fraction must be in (0, 1)");
    }
    std::vector<size_t> order(ds.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, 0x5b17u));
    rng.shuffle(order);
    const size_t n_test =
        static_cast<size_t>(std::llround(test_fraction * static_cast<double>(ds.samples.size())));
    std::vector<bool> is_test(ds.samples.size(), false);
    for (size_t i = 0; i < n_test && i < order.size(); ++i) is_test[order[i]] = true;
    Dataset train, test;
    train.split_tag = SplitTag::Train;
    test.split_tag = SplitTag::Test;
    train.seed = test.seed = ds.seed;
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        (is_test[i] ? test : train).samples.push_back(ds.samples[i]);
    }
    return {std::move(train), std::move(test)};
}

Dataset take(const Dataset& ds, size_t n) {
    Dataset out;
    out.split_tag = ds.split_tag;
    out.seed = ds.seed;
    out.samples.assign(ds.samples.begin(),
                       ds.samples.begin() + std::min(n, ds.samples.size()));
    return out;
}

}  // namespace advdrive
