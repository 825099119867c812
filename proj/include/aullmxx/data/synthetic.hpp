#ifndef AULLMXX_DATA_SYNTHETIC_HPP
#define AULLMXX_DATA_SYNTHETIC_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "aullmxx/core/rng.hpp"
#include "aullmxx/data/types.hpp"

namespace aullmxx::data {

struct GeneratedDataset {
    DatasetManifest manifest;
    std::vector<std::vector<float>> tensors;  // one per sample, manifest order
    std::uint64_t clamped_voxels{0};
};

namespace synth_detail {

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Pairwise-potential Gibbs sampler over the label vector. Couplings are the
// signed rule strengths scaled by kCouplingScale.
inline std::vector<std::uint8_t> sample_labels(const SyntheticConfig& cfg,
                                               const std::vector<std::vector<double>>& coupling,
                                               Rng& rng) {
    const std::size_t n = cfg.num_aus();
    const double bias = logit(cfg.base_rate);
    std::vector<std::uint8_t> y(n);
    for (auto& v : y) v = rng.bernoulli(cfg.base_rate) ? 1 : 0;
    for (int sweep = 0; sweep < SyntheticConfig::kGibbsSweeps; ++sweep) {
        for (std::size_t i = 0; i < n; ++i) {
            double field = bias;
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i && y[j]) field += coupling[i][j];
            }
            y[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-field))) ? 1 : 0;
        }
    }
    return y;
}

inline std::vector<std::vector<double>> coupling_matrix(const SyntheticConfig& cfg) {
    const std::size_t n = cfg.num_aus();
    std::vector<std::vector<double>> coupling(n, std::vector<double>(n, 0.0));
    for (const auto& [a, b, s] : cfg.co_occurrence_rules) {
        const std::size_t i = SyntheticConfig::index_of(cfg.au_names, a);
        const std::size_t j = SyntheticConfig::index_of(cfg.au_names, b);
        coupling[i][j] = coupling[j][i] = s * SyntheticConfig::kCouplingScale;
    }
    return coupling;
}

// Static low-frequency per-subject field built from the first cosine modes.
inline std::vector<double> identity_offset(const SyntheticConfig& cfg, std::size_t subject) {
    Rng rng(fork_seed(cfg.seed, "identity", subject));
    const double c01 = rng.uniform(-1.0, 1.0);
    const double c10 = rng.uniform(-1.0, 1.0);
    const double c11 = rng.uniform(-1.0, 1.0);
    std::vector<double> field(cfg.h * cfg.w);
    constexpr double pi = 3.14159265358979323846;
    for (std::size_t r = 0; r < cfg.h; ++r) {
        for (std::size_t c = 0; c < cfg.w; ++c) {
            const double fr = pi * (static_cast<double>(r) + 0.5) / static_cast<double>(cfg.h);
            const double fc = pi * (static_cast<double>(c) + 0.5) / static_cast<double>(cfg.w);
            field[r * cfg.w + c] = cfg.identity_offset_scale *
                                   (c10 * std::cos(fr) + c01 * std::cos(fc) +
                                    c11 * std::cos(fr) * std::cos(fc)) /
                                   3.0;
        }
    }
    return field;
}

inline double hann(std::size_t t, std::size_t total) {
    if (total < 2) return 1.0;
    constexpr double pi = 3.14159265358979323846;
    return 0.5 * (1.0 - std::cos(2.0 * pi * static_cast<double>(t) /
                                 static_cast<double>(total - 1)));
}

}  // namespace synth_detail

// Deterministic given the seed: labels from the Gibbs sampler, one Gaussian
// bump per active AU peaking mid-sequence, a static per-subject offset, then
// the domain's brightness shift and pixel noise, clamped into [0, 1].
inline GeneratedDataset generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    const auto coupling = synth_detail::coupling_matrix(cfg);
    const std::size_t n = cfg.num_aus();

    GeneratedDataset out;
    out.manifest.version = 1;
    out.manifest.au_names = cfg.au_names;
    out.manifest.generator_seed = cfg.seed;

    // Precompute spatial bump profiles.
    std::vector<std::vector<double>> bumps(n, std::vector<double>(cfg.h * cfg.w, 0.0));
    for (std::size_t k = 0; k < n; ++k) {
        const auto [cr, cc] = cfg.au_region_centers[k];
        for (std::size_t r = 0; r < cfg.h; ++r) {
            for (std::size_t c = 0; c < cfg.w; ++c) {
                const double dr = static_cast<double>(r) - cr;
                const double dc = static_cast<double>(c) - cc;
                bumps[k][r * cfg.w + c] =
                    std::exp(-(dr * dr + dc * dc) /
                             (2.0 * SyntheticConfig::kBumpSigma * SyntheticConfig::kBumpSigma));
            }
        }
    }

    std::size_t clip_index = 0;
    for (std::size_t s = 0; s < cfg.num_subjects; ++s) {
        const auto offset = synth_detail::identity_offset(cfg, s);
        char sid[16];
        std::snprintf(sid, sizeof(sid), "s%03zu", s);
        for (std::size_t j = 0; j < cfg.clips_per_subject; ++j, ++clip_index) {
            char cid[32];
            std::snprintf(cid, sizeof(cid), "%s_c%03zu", sid, j);
            const auto& [domain_id, style] = cfg.domain_styles[clip_index % cfg.domain_styles.size()];

            Rng label_rng(fork_seed(cfg.seed, "labels", clip_index));
            const auto labels = synth_detail::sample_labels(cfg, coupling, label_rng);

            Rng noise_rng(fork_seed(cfg.seed, "noise", clip_index));
            std::vector<float> frames(cfg.t * cfg.c * cfg.h * cfg.w);
            for (std::size_t t = 0; t < cfg.t; ++t) {
                const double wt = synth_detail::hann(t, cfg.t);
                for (std::size_t ch = 0; ch < cfg.c; ++ch) {
                    for (std::size_t px = 0; px < cfg.h * cfg.w; ++px) {
                        double v = 0.5 + offset[px] + style.brightness;
                        for (std::size_t k = 0; k < n; ++k) {
                            if (labels[k]) v += cfg.bump_amplitude * wt * bumps[k][px];
                        }
                        if (style.noise_sigma > 0.0) v += style.noise_sigma * noise_rng.gaussian();
                        if (v < 0.0) {
                            v = 0.0;
                            ++out.clamped_voxels;
                        } else if (v > 1.0) {
                            v = 1.0;
                            ++out.clamped_voxels;
                        }
                        frames[(t * cfg.c + ch) * cfg.h * cfg.w + px] = static_cast<float>(v);
                    }
                }
            }

            SampleRecord rec;
            rec.clip_id = cid;
            rec.subject_id = sid;
            rec.domain_id = domain_id;
            rec.labels = labels;
            rec.path = "clips/" + rec.clip_id + ".f32";
            rec.shape = {cfg.t, cfg.c, cfg.h, cfg.w};
            out.manifest.samples.push_back(std::move(rec));
            out.tensors.push_back(std::move(frames));
        }
    }
    out.manifest.sample_count = out.manifest.samples.size();
    out.manifest.clamped_voxels = out.clamped_voxels;
    out.manifest.validate();
    return out;
}

}  // namespace aullmxx::data

#endif  // AULLMXX_DATA_SYNTHETIC_HPP
