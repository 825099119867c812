#ifndef AULLMXX_DATA_SPLITS_HPP
#define AULLMXX_DATA_SPLITS_HPP

#include <string>
#include <vector>

#include "aullmxx/data/types.hpp"

namespace aullmxx::data {

struct Fold {
    std::string held_out_subject;
    std::vector<std::size_t> train_ids;  // indices into manifest.samples
    std::vector<std::size_t> test_ids;
};

// One fold per distinct subject, folds ordered by subject id. The held-out
// subject's samples form the test set exactly; everything else trains.
inline std::vector<Fold> loso_folds(const DatasetManifest& manifest) {
    const auto subjects = manifest.subjects();
    if (subjects.size() < 2) {
        throw ConfigError("LOSO needs at least 2 distinct subjects, got " +
                          std::to_string(subjects.size()));
    }
    std::vector<Fold> folds;
    folds.reserve(subjects.size());
    for (const auto& subject : subjects) {
        Fold f;
        f.held_out_subject = subject;
        for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
            (manifest.samples[i].subject_id == subject ? f.test_ids : f.train_ids).push_back(i);
        }
        folds.push_back(std::move(f));
    }
    return folds;
}

}  // namespace aullmxx::data

#endif  // AULLMXX_DATA_SPLITS_HPP
