#pragma once

#include <string>

#include "advdrive/attacks.hpp"
#include "advdrive/image.hpp"
#include "advdrive/model.hpp"

namespace advdrive {

// Artifact file layout (models, perturbation grids, generators):
// a single-line JSON header (format_version, kind, architecture metadata,
// a named shape manifest and a CRC32 checksum) followed by the raw
// parameter values as little-endian 64-bit floats in manifest order.

void save_model(const RegressionModel& model, const std::string& path);
RegressionModel load_model(const std::string& path);

struct PerturbationArtifact {
    Image perturbation;
    std::string attack;      // attack that crafted it
    std::string crafted_on;  // architecture of the crafting model
    double delta = 0.3;
    double perturb_clip = 0.3;
};

void save_perturbation(const PerturbationArtifact& artifact, const std::string& path);
PerturbationArtifact load_perturbation(const std::string& path);

void save_generator(const Generator& generator, const std::string& path);
Generator load_generator(const std::string& path);

}  // namespace advdrive
