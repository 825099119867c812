#ifndef AULLMXX_DATA_TYPES_HPP
#define AULLMXX_DATA_TYPES_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "aullmxx/core/config.hpp"
#include "aullmxx/core/error.hpp"

namespace aullmxx::data {

// One face-cropped clip: frames are row-major T x C x H x W intensities in
// [0, 1], stored as f32 to match the on-disk format exactly.
struct MicroClip {
    std::string clip_id;
    std::string subject_id;
    std::string domain_id;
    std::size_t t{0}, c{0}, h{0}, w{0};
    std::vector<float> frames;

    std::size_t voxel_count() const { return t * c * h * w; }

    void validate() const {
        if (t < 2) throw ShapeError("clip " + clip_id + ": T must be >= 2");
        if (h < 8 || w < 8) throw ShapeError("clip " + clip_id + ": spatial size must be >= 8x8");
        if (c != 1 && c != 3) throw ShapeError("clip " + clip_id + ": C must be 1 or 3");
        if (frames.size() != voxel_count()) {
            throw DataError("clip " + clip_id + ": tensor size does not match declared shape");
        }
        for (float v : frames) {
            if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
                throw InputError("clip " + clip_id + ": voxel outside [0, 1]");
            }
        }
    }
};

struct AULabelVector {
    std::vector<std::uint8_t> values;
    std::vector<std::string> au_names;

    void validate() const {
        if (values.size() != au_names.size()) {
            throw ShapeError("label vector length disagrees with AU name list");
        }
        std::set<std::string> uniq(au_names.begin(), au_names.end());
        if (uniq.size() != au_names.size()) throw ConfigError("duplicate AU names");
        for (auto v : values) {
            if (v > 1) throw InputError("label entries must be 0 or 1");
        }
    }
};

struct SampleRecord {
    std::string clip_id;
    std::string subject_id;
    std::string domain_id;
    std::vector<std::uint8_t> labels;
    std::string path;  // relative to the manifest directory
    std::array<std::size_t, 4> shape{};  // T, C, H, W
};

struct DatasetManifest {
    int version{1};
    std::vector<std::string> au_names;
    std::vector<SampleRecord> samples;
    std::size_t sample_count{0};
    std::uint64_t generator_seed{0};
    std::uint64_t clamped_voxels{0};

    std::size_t size() const { return samples.size(); }

    const SampleRecord& find(const std::string& clip_id) const {
        for (const auto& s : samples) {
            if (s.clip_id == clip_id) return s;
        }
        throw LookupError("clip_id not in manifest: " + clip_id);
    }

    std::vector<std::string> subjects() const {
        std::set<std::string> uniq;
        for (const auto& s : samples) uniq.insert(s.subject_id);
        return {uniq.begin(), uniq.end()};
    }

    void validate() const {
        if (sample_count != samples.size()) {
            throw DataError("manifest sample_count disagrees with sample list");
        }
        std::set<std::string> ids;
        for (const auto& s : samples) {
            if (s.subject_id.empty()) throw DataError("sample with empty subject_id: " + s.clip_id);
            if (s.labels.size() != au_names.size()) {
                throw DataError("sample label length mismatch: " + s.clip_id);
            }
            if (!ids.insert(s.clip_id).second) throw DataError("duplicate clip_id: " + s.clip_id);
        }
    }
};

struct DomainStyle {
    double brightness{0.0};
    double noise_sigma{0.0};
};

// Planted-rule generator settings. Spatial bump sigma is fixed at 2 px; the
// non-overlap check uses radius 2*sigma.
struct SyntheticConfig {
    static constexpr double kBumpSigma = 2.0;
    static constexpr double kBumpRadius = 2.0 * kBumpSigma;
    static constexpr int kGibbsSweeps = 50;
    static constexpr double kCouplingScale = 2.0;

    std::uint64_t seed{7};
    std::size_t num_subjects{6};
    std::size_t clips_per_subject{10};
    std::vector<std::string> au_names;
    std::size_t t{16}, c{1}, h{32}, w{32};
    std::vector<std::pair<double, double>> au_region_centers;  // (row, col) per AU
    double bump_amplitude{0.08};
    double base_rate{0.35};
    std::vector<std::tuple<std::string, std::string, double>> co_occurrence_rules;
    double identity_offset_scale{0.05};
    std::vector<std::pair<std::string, DomainStyle>> domain_styles{{"base", {0.0, 0.01}}};

    std::size_t num_aus() const { return au_names.size(); }

    static std::vector<std::string> default_au_names() {
        return {"AU1", "AU2", "AU4", "AU6", "AU7", "AU12", "AU15", "AU17"};
    }

    // Margin-4, step-8 grid: the tightest layout the overlap rule accepts.
    static std::vector<std::pair<double, double>> grid_centers(std::size_t n, std::size_t h,
                                                               std::size_t w) {
        std::vector<double> rows, cols;
        for (double r = 4; r + 4 <= static_cast<double>(h); r += 8) rows.push_back(r);
        for (double cc = 4; cc + 4 <= static_cast<double>(w); cc += 8) cols.push_back(cc);
        std::vector<std::pair<double, double>> out;
        for (double r : rows)
            for (double cc : cols) {
                if (out.size() < n) out.emplace_back(r, cc);
            }
        if (out.size() < n) {
            throw ConfigError("not enough room for " + std::to_string(n) +
                              " AU region centers on a " + std::to_string(h) + "x" +
                              std::to_string(w) + " frame; provide synth.center entries");
        }
        return out;
    }

    void validate() const {
        if (num_subjects == 0) throw ConfigError("synthetic config: zero subjects");
        if (clips_per_subject == 0) throw ConfigError("synthetic config: zero clips per subject");
        if (au_names.empty()) throw ConfigError("synthetic config: empty AU list");
        if (bump_amplitude <= 0.0) throw ConfigError("synthetic config: bump_amplitude must be > 0");
        if (base_rate <= 0.0 || base_rate >= 1.0) {
            throw ConfigError("synthetic config: base_rate must lie in (0, 1)");
        }
        if (au_region_centers.size() != au_names.size()) {
            throw ConfigError("synthetic config: one region center per AU required");
        }
        if (domain_styles.empty()) throw ConfigError("synthetic config: no domain styles");
        for (const auto& [name, style] : domain_styles) {
            if (style.noise_sigma < 0.0) throw ConfigError("domain " + name + ": negative noise sigma");
        }
        for (const auto& [r, cc] : au_region_centers) {
            if (r < 0 || r >= static_cast<double>(h) || cc < 0 || cc >= static_cast<double>(w)) {
                throw ConfigError("synthetic config: region center outside the frame");
            }
        }
        for (std::size_t i = 0; i < au_region_centers.size(); ++i) {
            for (std::size_t j = i + 1; j < au_region_centers.size(); ++j) {
                const double dr = au_region_centers[i].first - au_region_centers[j].first;
                const double dc = au_region_centers[i].second - au_region_centers[j].second;
                if (std::sqrt(dr * dr + dc * dc) < 2.0 * kBumpRadius) {
                    throw ConfigError("synthetic config: region centers of " + au_names[i] +
                                      " and " + au_names[j] + " overlap");
                }
            }
        }
        for (const auto& [a, b, s] : co_occurrence_rules) {
            if (std::abs(s) > 1.0) throw ConfigError("co-occurrence strength outside [-1, 1]");
            if (!contains(au_names, a) || !contains(au_names, b)) {
                throw ConfigError("co-occurrence rule names unknown AU: " + a + "/" + b);
            }
        }
    }

    static SyntheticConfig from_config(const Config& cfg) {
        SyntheticConfig s;
        s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 7));
        s.num_subjects = static_cast<std::size_t>(cfg.get_int("synth.num_subjects", 6));
        s.clips_per_subject = static_cast<std::size_t>(cfg.get_int("synth.clips_per_subject", 10));
        s.au_names = cfg.has("synth.au_names") ? split_ws(cfg.get_string("synth.au_names"))
                                               : default_au_names();
        s.t = static_cast<std::size_t>(cfg.get_int("synth.t", 16));
        s.c = static_cast<std::size_t>(cfg.get_int("synth.c", 1));
        s.h = static_cast<std::size_t>(cfg.get_int("synth.h", 32));
        s.w = static_cast<std::size_t>(cfg.get_int("synth.w", 32));
        s.bump_amplitude = cfg.get_double("synth.bump_amplitude", 0.08);
        s.base_rate = cfg.get_double("synth.base_rate", 0.35);
        s.identity_offset_scale = cfg.get_double("synth.identity_offset_scale", 0.05);
        if (cfg.has("synth.center")) {
            std::vector<std::pair<double, double>> centers(s.au_names.size(), {-1, -1});
            for (const auto& line : cfg.get_all("synth.center")) {
                const auto parts = split_ws(line);
                if (parts.size() != 3) throw ConfigError("synth.center expects: AU row col");
                centers.at(index_of(s.au_names, parts[0])) = {std::stod(parts[1]),
                                                              std::stod(parts[2])};
            }
            for (const auto& [r, cc] : centers) {
                if (r < 0) throw ConfigError("synth.center missing for some AU");
            }
            s.au_region_centers = centers;
        } else {
            s.au_region_centers = grid_centers(s.au_names.size(), s.h, s.w);
        }
        if (cfg.has("synth.rule")) {
            for (const auto& line : cfg.get_all("synth.rule")) {
                const auto parts = split_ws(line);
                if (parts.size() != 3) throw ConfigError("synth.rule expects: AU_i AU_j strength");
                s.co_occurrence_rules.emplace_back(parts[0], parts[1], std::stod(parts[2]));
            }
        }
        if (cfg.has("synth.domain")) {
            s.domain_styles.clear();
            for (const auto& line : cfg.get_all("synth.domain")) {
                const auto parts = split_ws(line);
                if (parts.size() != 3) {
                    throw ConfigError("synth.domain expects: name brightness noise_sigma");
                }
                s.domain_styles.emplace_back(parts[0],
                                             DomainStyle{std::stod(parts[1]), std::stod(parts[2])});
            }
        }
        s.validate();
        return s;
    }

    static std::vector<std::string> split_ws(const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char ch : s) {
            if (ch == ' ' || ch == '\t') {
                if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
        return out;
    }

    static bool contains(const std::vector<std::string>& v, const std::string& s) {
        for (const auto& x : v)
            if (x == s) return true;
        return false;
    }

    static std::size_t index_of(const std::vector<std::string>& v, const std::string& s) {
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] == s) return i;
        throw LookupError("unknown AU name: " + s);
    }
};

}  // namespace aullmxx::data

#endif  // AULLMXX_DATA_TYPES_HPP
