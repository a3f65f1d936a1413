#include "advdrive/serialize.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace advdrive {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

void append_doubles_le(std::string& out, const std::vector<double>& values) {
    for (double v : values) {
        uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
}

std::vector<double> read_doubles_le(const std::string& payload, size_t offset, size_t count) {
    std::vector<double> values(count);
    for (size_t i = 0; i < count; ++i) {
        uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<uint64_t>(
                        static_cast<uint8_t>(payload[offset + i * 8 + b]))
                    << (8 * b);
        }
        std::memcpy(&values[i], &bits, sizeof bits);
    }
    return values;
}

std::string crc_hex(const std::string& payload) {
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", crc);
    return buf;
}

void write_artifact(const std::string& path, json header, const std::string& payload) {
    header["format_version"] = kFormatVersion;
    header["checksum"] = crc_hex(payload);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open artifact for writing: " + path);
    f << header.dump() << "\n" << payload;
    if (!f) throw std::runtime_error("artifact write failed: " + path);
}

struct Artifact {
    json header;
    std::string payload;
};

Artifact read_artifact(const std::string& path, const std::string& expected_kind) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open artifact: " + path);
    std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const size_t nl = content.find('\n');
    if (nl == std::string::npos) throw std::runtime_error("corrupt artifact (no header): " + path);
    Artifact a;
    try {
        a.header = json::parse(content.substr(0, nl));
    } catch (const json::exception&) {
        throw std::runtime_error("corrupt artifact (bad header): " + path);
    }
    if (!a.header.contains("format_version") || !a.header["format_version"].is_number_integer()) {
        throw std::runtime_error("corrupt artifact (no format_version): " + path);
    }
    if (a.header["format_version"].get<int>() != kFormatVersion) {
        throw std::runtime_error("unsupported artifact format_version in " + path);
    }
    if (a.header.value("kind", "") != expected_kind) {
        throw std::runtime_error("artifact kind mismatch (expected " + expected_kind + "): " +
                                 path);
    }
    a.payload = content.substr(nl + 1);
    if (a.header.value("checksum", "") != crc_hex(a.payload)) {
        throw std::runtime_error("corrupt artifact (checksum mismatch): " + path);
    }
    return a;
}

json shape_manifest(const std::vector<std::pair<std::string, Shape>>& manifest) {
    json layers = json::array();
    for (const auto& [name, shape] : manifest) {
        layers.push_back(json::array({name, shape}));
    }
    return layers;
}

size_t manifest_extent(const json& layers) {
    size_t total = 0;
    for (const auto& entry : layers) {
        long long n = 1;
        for (const auto& d : entry.at(1)) n *= d.get<long long>();
        total += static_cast<size_t>(n);
    }
    return total;
}

void check_payload_extent(const Artifact& a, const std::string& path) {
    const size_t expected = manifest_extent(a.header.at("layers")) * sizeof(double);
    if (a.payload.size() != expected) {
        throw std::runtime_error("corrupt artifact (payload size mismatch): " + path);
    }
}

}  // namespace

void save_model(const RegressionModel& model, const std::string& path) {
    json header;
    header["kind"] = "model";
    header["arch_id"] = arch_name(model.arch_id());
    header["input_size"] = model.input_size();
    header["layers"] = shape_manifest(param_manifest(model.arch_id(), model.input_size()));
    std::string payload;
    for (const Tensor& p : model.params()) append_doubles_le(payload, p.values());
    write_artifact(path, std::move(header), payload);
}

RegressionModel load_model(const std::string& path) {
    Artifact a = read_artifact(path, "model");
    const ArchId arch = arch_from_name(a.header.at("arch_id").get<std::string>());
    const int input_size = a.header.at("input_size").get<int>();
    check_payload_extent(a, path);
    std::vector<Tensor> params;
    size_t offset = 0;
    for (const auto& [name, shape] : param_manifest(arch, input_size)) {
        (void)name;
        const size_t n = static_cast<size_t>(numel(shape));
        params.emplace_back(shape, read_doubles_le(a.payload, offset, n), true);
        offset += n * sizeof(double);
    }
    return assemble_model(arch, input_size, std::move(params));
}

void save_perturbation(const PerturbationArtifact& artifact, const std::string& path) {
    json header;
    header["kind"] = "perturbation";
    header["attack_id"] = artifact.attack;
    header["crafted_on"] = artifact.crafted_on;
    header["delta"] = artifact.delta;
    header["perturb_clip"] = artifact.perturb_clip;
    header["input_size"] = artifact.perturbation.height;
    header["layers"] = shape_manifest(
        {{"perturbation",
          Shape{3, artifact.perturbation.height, artifact.perturbation.width}}});
    std::string payload;
    append_doubles_le(payload, artifact.perturbation.data);
    write_artifact(path, std::move(header), payload);
}

PerturbationArtifact load_perturbation(const std::string& path) {
    Artifact a = read_artifact(path, "perturbation");
    check_payload_extent(a, path);
    PerturbationArtifact artifact;
    artifact.attack = a.header.at("attack_id").get<std::string>();
    artifact.crafted_on = a.header.value("crafted_on", "");
    artifact.delta = a.header.at("delta").get<double>();
    artifact.perturb_clip = a.header.at("perturb_clip").get<double>();
    const auto shape = a.header.at("layers").at(0).at(1);
    const int h = shape.at(1).get<int>();
    const int w = shape.at(2).get<int>();
    artifact.perturbation = Image(h, w);
    artifact.perturbation.data = read_doubles_le(a.payload, 0, static_cast<size_t>(3) * h * w);
    return artifact;
}

void save_generator(const Generator& generator, const std::string& path) {
    json header;
    header["kind"] = "generator";
    header["mode"] = generator.mode() == GanMode::Universal ? "universal" : "per_image";
    header["input_size"] = generator.input_size();
    header["perturb_clip"] = generator.clip();
    header["noise_seed"] = generator.noise_seed();
    std::vector<std::pair<std::string, Shape>> manifest;
    const std::vector<Shape> shapes = Generator::param_shapes(generator.input_size());
    for (size_t i = 0; i < shapes.size(); ++i) {
        const std::string base = "g" + std::to_string(i / 2);
        manifest.emplace_back(base + (i % 2 == 0 ? ".weight" : ".bias"), shapes[i]);
    }
    header["layers"] = shape_manifest(manifest);
    std::string payload;
    for (const Tensor& p : generator.params()) append_doubles_le(payload, p.values());
    write_artifact(path, std::move(header), payload);
}

Generator load_generator(const std::string& path) {
    Artifact a = read_artifact(path, "generator");
    check_payload_extent(a, path);
    const int input_size = a.header.at("input_size").get<int>();
    const double clip = a.header.at("perturb_clip").get<double>();
    const GanMode mode = a.header.at("mode").get<std::string>() == "universal"
                             ? GanMode::Universal
                             : GanMode::PerImage;
    const uint64_t noise_seed = a.header.at("noise_seed").get<uint64_t>();
    Generator g = Generator::build(input_size, clip, mode, 0, noise_seed);
    size_t offset = 0;
    for (Tensor& p : g.params()) {
        const size_t n = p.values().size();
        p.mutable_values() = read_doubles_le(a.payload, offset, n);
        offset += n * sizeof(double);
    }
    return g;
}

}  // namespace advdrive
