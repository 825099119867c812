#ifndef AULLMXX_DATA_MANIFEST_HPP
#define AULLMXX_DATA_MANIFEST_HPP

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aullmxx/data/synthetic.hpp"
#include "aullmxx/data/types.hpp"

namespace aullmxx::data {

inline constexpr int kManifestVersion = 1;

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["version"] = m.version;
    j["tensor_dtype"] = "f32le";
    j["au_names"] = m.au_names;
    j["sample_count"] = m.sample_count;
    j["generator_seed"] = m.generator_seed;
    j["clamped_voxels"] = m.clamped_voxels;
    auto& samples = j["samples"] = nlohmann::json::array();
    for (const auto& s : m.samples) {
        nlohmann::json js;
        js["clip_id"] = s.clip_id;
        js["subject_id"] = s.subject_id;
        js["domain_id"] = s.domain_id;
        js["labels"] = s.labels;
        js["path"] = s.path;
        js["shape"] = s.shape;
        samples.push_back(std::move(js));
    }
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    if (!j.contains("version")) throw DataError("manifest: missing version");
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion) {
        throw DataError("manifest: unsupported version " + std::to_string(m.version));
    }
    if (j.value("tensor_dtype", std::string("f32le")) != "f32le") {
        throw DataError("manifest: unsupported tensor dtype");
    }
    m.au_names = j.at("au_names").get<std::vector<std::string>>();
    m.sample_count = j.at("sample_count").get<std::size_t>();
    m.generator_seed = j.value("generator_seed", std::uint64_t{0});
    m.clamped_voxels = j.value("clamped_voxels", std::uint64_t{0});
    for (const auto& js : j.at("samples")) {
        SampleRecord s;
        s.clip_id = js.at("clip_id").get<std::string>();
        s.subject_id = js.at("subject_id").get<std::string>();
        s.domain_id = js.at("domain_id").get<std::string>();
        s.labels = js.at("labels").get<std::vector<std::uint8_t>>();
        s.path = js.at("path").get<std::string>();
        const auto shape = js.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 4) throw DataError("manifest: sample shape must have 4 dims");
        std::copy(shape.begin(), shape.end(), s.shape.begin());
        m.samples.push_back(std::move(s));
    }
    m.validate();
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << manifest_to_json(m).dump(2) << '\n';
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest parse error: " + std::string(e.what()));
    }
    return manifest_from_json(j);
}

inline void write_clip_file(const std::vector<float>& frames, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write clip file: " + path);
    out.write(reinterpret_cast<const char*>(frames.data()),
              static_cast<std::streamsize>(frames.size() * sizeof(float)));
    if (!out) throw IoError("clip write failed: " + path);
}

inline std::vector<float> read_clip_file(const std::string& path, std::size_t expected_voxels) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open clip file: " + path);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected_voxels * sizeof(float)) {
        throw DataError("clip file " + path + ": byte length " + std::to_string(bytes) +
                        " does not match declared shape (" +
                        std::to_string(expected_voxels * sizeof(float)) + " expected)");
    }
    in.seekg(0);
    std::vector<float> frames(expected_voxels);
    in.read(reinterpret_cast<char*>(frames.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw DataError("clip file " + path + ": short read");
    return frames;
}

inline void export_labels_csv(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write label csv: " + path);
    out << "clip_id,subject_id,domain_id";
    for (const auto& au : m.au_names) out << ',' << au;
    out << '\n';
    for (const auto& s : m.samples) {
        out << s.clip_id << ',' << s.subject_id << ',' << s.domain_id;
        for (auto v : s.labels) out << ',' << static_cast<int>(v);
        out << '\n';
    }
}

// Writes manifest.json, clips/*.f32 and labels.csv under `dir`.
inline void write_dataset(const GeneratedDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "clips");
    for (std::size_t i = 0; i < ds.manifest.samples.size(); ++i) {
        write_clip_file(ds.tensors[i], (fs::path(dir) / ds.manifest.samples[i].path).string());
    }
    save_manifest(ds.manifest, (fs::path(dir) / "manifest.json").string());
    export_labels_csv(ds.manifest, (fs::path(dir) / "labels.csv").string());
}

inline MicroClip make_clip(const SampleRecord& rec, std::vector<float> frames) {
    MicroClip clip;
    clip.clip_id = rec.clip_id;
    clip.subject_id = rec.subject_id;
    clip.domain_id = rec.domain_id;
    clip.t = rec.shape[0];
    clip.c = rec.shape[1];
    clip.h = rec.shape[2];
    clip.w = rec.shape[3];
    clip.frames = std::move(frames);
    clip.validate();
    return clip;
}

// Data access seam. Evaluation protocols and the trainer only see this
// interface, which is what lets tests prove the cross-domain runner never
// touches target tensors during training.
class ClipSource {
public:
    virtual ~ClipSource() = default;
    virtual const DatasetManifest& manifest() const = 0;
    virtual std::pair<MicroClip, AULabelVector> load(const std::string& clip_id) = 0;
};

class ManifestSource final : public ClipSource {
public:
    ManifestSource(DatasetManifest manifest, std::string root_dir, bool cache = true)
        : manifest_(std::move(manifest)), root_(std::move(root_dir)), cache_enabled_(cache) {}

    static ManifestSource open(const std::string& dir) {
        namespace fs = std::filesystem;
        return ManifestSource(load_manifest((fs::path(dir) / "manifest.json").string()), dir);
    }

    const DatasetManifest& manifest() const override { return manifest_; }

    std::pair<MicroClip, AULabelVector> load(const std::string& clip_id) override {
        const auto& rec = manifest_.find(clip_id);
        std::vector<float> frames;
        if (cache_enabled_) {
            auto it = cache_.find(clip_id);
            if (it == cache_.end()) {
                it = cache_
                         .emplace(clip_id,
                                  read_clip_file((std::filesystem::path(root_) / rec.path).string(),
                                                 rec.shape[0] * rec.shape[1] * rec.shape[2] *
                                                     rec.shape[3]))
                         .first;
            }
            frames = it->second;
        } else {
            frames = read_clip_file((std::filesystem::path(root_) / rec.path).string(),
                                    rec.shape[0] * rec.shape[1] * rec.shape[2] * rec.shape[3]);
        }
        return {make_clip(rec, std::move(frames)),
                AULabelVector{rec.labels, manifest_.au_names}};
    }

private:
    DatasetManifest manifest_;
    std::string root_;
    bool cache_enabled_;
    std::unordered_map<std::string, std::vector<float>> cache_;
};

// In-memory source over a freshly generated dataset; used by tests and the
// acceptance harness to skip disk round-trips.
class MemorySource final : public ClipSource {
public:
    explicit MemorySource(GeneratedDataset ds) : ds_(std::move(ds)) {
        for (std::size_t i = 0; i < ds_.manifest.samples.size(); ++i) {
            index_[ds_.manifest.samples[i].clip_id] = i;
        }
    }

    const DatasetManifest& manifest() const override { return ds_.manifest; }

    std::pair<MicroClip, AULabelVector> load(const std::string& clip_id) override {
        auto it = index_.find(clip_id);
        if (it == index_.end()) throw LookupError("clip_id not in manifest: " + clip_id);
        const auto& rec = ds_.manifest.samples[it->second];
        return {make_clip(rec, ds_.tensors[it->second]),
                AULabelVector{rec.labels, ds_.manifest.au_names}};
    }

private:
    GeneratedDataset ds_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace aullmxx::data

#endif  // AULLMXX_DATA_MANIFEST_HPP
