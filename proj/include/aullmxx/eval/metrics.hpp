#ifndef AULLMXX_EVAL_METRICS_HPP
#define AULLMXX_EVAL_METRICS_HPP

#include <cstdint>
#include <vector>

#include "aullmxx/core/error.hpp"

namespace aullmxx::eval {

struct ConfusionCounts {
    std::size_t tp{0}, fp{0}, fn{0}, tn{0};
};

struct F1Result {
    std::vector<double> f1;            // per AU; 0 when TP=0 with errors present
    std::vector<bool> included;        // false when TP=FP=FN=0 (degenerate)
    std::vector<ConfusionCounts> counts;
};

// Per-AU F1 over M x N binary matrices. An AU with no positives anywhere
// (TP=FP=FN=0) is masked out of the macro average; an AU with TP=0 but
// FP+FN>0 scores zero.
inline F1Result f1_per_au(const std::vector<std::vector<std::uint8_t>>& predictions,
                          const std::vector<std::vector<std::uint8_t>>& truth) {
    if (predictions.size() != truth.size()) throw ShapeError("f1_per_au: row count mismatch");
    if (predictions.empty()) throw ShapeError("f1_per_au: empty matrices");
    const std::size_t n = truth[0].size();
    F1Result out;
    out.counts.resize(n);
    for (std::size_t m = 0; m < predictions.size(); ++m) {
        if (predictions[m].size() != n || truth[m].size() != n) {
            throw ShapeError("f1_per_au: column count mismatch");
        }
        for (std::size_t k = 0; k < n; ++k) {
            const bool p = predictions[m][k] != 0;
            const bool t = truth[m][k] != 0;
            auto& c = out.counts[k];
            if (p && t) ++c.tp;
            else if (p && !t) ++c.fp;
            else if (!p && t) ++c.fn;
            else ++c.tn;
        }
    }
    out.f1.resize(n, 0.0);
    out.included.resize(n, true);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& c = out.counts[k];
        if (c.tp + c.fp + c.fn == 0) {
            out.included[k] = false;
        } else if (c.tp == 0) {
            out.f1[k] = 0.0;
        } else {
            out.f1[k] = 2.0 * static_cast<double>(c.tp) /
                        static_cast<double>(2 * c.tp + c.fp + c.fn);
        }
    }
    return out;
}

// Unweighted mean over the unmasked AUs.
inline double macro_f1(const std::vector<double>& f1, const std::vector<bool>& included) {
    if (f1.size() != included.size()) throw ShapeError("macro_f1: mask length mismatch");
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < f1.size(); ++k) {
        if (included[k]) {
            acc += f1[k];
            ++count;
        }
    }
    if (count == 0) throw Error("macro_f1: every AU is masked");
    return acc / static_cast<double>(count);
}

inline double macro_f1(const F1Result& r) { return macro_f1(r.f1, r.included); }

}  // namespace aullmxx::eval

#endif  // AULLMXX_EVAL_METRICS_HPP
