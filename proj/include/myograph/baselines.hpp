#pragma once

// Non-learned baselines: same-exercise random retrieval and nearest-neighbour
// keypoint retrieval over a training-window index.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "myograph/datamodel.hpp"

namespace myograph::baselines {

class RetrievalIndex {
public:
    // Windows are kept sorted by (clip_id, start); all must share one length.
    explicit RetrievalIndex(std::vector<Window> windows);

    std::size_t size() const { return windows_.size(); }
    std::size_t length() const { return length_; }
    const Window& at(std::size_t i) const { return windows_[i]; }
    std::span<const std::size_t> bucket(Exercise e) const { return buckets_[index_of(e)]; }

private:
    std::vector<Window> windows_;
    std::array<std::vector<std::size_t>, kExercises> buckets_;
    std::size_t length_ = 0;
};

// Uniform choice among training windows of the query's exercise.
std::vector<double> random_baseline(const Window& query, const RetrievalIndex& index, std::mt19937_64& rng);
std::size_t random_choice(std::size_t n, std::mt19937_64& rng);

// Sum of squared differences between two keypoint windows.
double keypoint_distance(std::span<const double> a, std::span<const double> b);

// Position in the index of the window with the lowest keypoint MSE; ties go
// to the smallest (clip_id, start). Windows from exclude_clip are skipped.
std::optional<std::size_t> nearest(std::span<const double> query_keypoints, const RetrievalIndex& index,
                                   const std::string* exclude_clip = nullptr);

std::vector<double> nn_baseline(std::span<const double> query_keypoints, const RetrievalIndex& index);

// Predictions for many queries, [N*T, 8]. The random stream is seeded once.
std::vector<double> predict_random(std::span<const Window> queries, const RetrievalIndex& index, std::uint64_t seed);
std::vector<double> predict_nn(std::span<const Window> queries, const RetrievalIndex& index);

}  // namespace myograph::baselines
