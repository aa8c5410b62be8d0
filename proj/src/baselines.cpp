#include "myograph/baselines.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace myograph::baselines {

RetrievalIndex::RetrievalIndex(std::vector<Window> windows) : windows_(std::move(windows)) {
    if (windows_.empty()) throw std::invalid_argument("RetrievalIndex: no windows");
    length_ = windows_.front().length;
    for (const auto& w : windows_)
        if (w.length != length_) throw std::invalid_argument("RetrievalIndex: mixed window lengths");
    std::sort(windows_.begin(), windows_.end(), [](const Window& a, const Window& b) {
        return a.clip_id != b.clip_id ? a.clip_id < b.clip_id : a.start < b.start;
    });
    for (std::size_t i = 0; i < windows_.size(); ++i) buckets_[index_of(windows_[i].exercise)].push_back(i);
}

std::size_t random_choice(std::size_t n, std::mt19937_64& rng) {
    // Top 53 bits scaled to [0, n); engine output is specified by the standard.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
}

std::vector<double> random_baseline(const Window& query, const RetrievalIndex& index, std::mt19937_64& rng) {
    auto bucket = index.bucket(query.exercise);
    if (bucket.empty())
        throw std::invalid_argument("random_baseline: no training window for " +
                                    std::string(exercise_name(query.exercise)));
    return index.at(bucket[random_choice(bucket.size(), rng)]).emg;
}

double keypoint_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("keypoint_distance: size mismatch");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::optional<std::size_t> nearest(std::span<const double> query, const RetrievalIndex& index,
                                   const std::string* exclude_clip) {
    if (query.size() != index.length() * kFrameDim)
        throw std::invalid_argument("nearest: query has " + std::to_string(query.size()) + " values, index windows " +
                                    std::to_string(index.length() * kFrameDim));
    std::optional<std::size_t> best;
    double best_d = std::numeric_limits<double>::infinity();
    const std::size_t n = query.size();
    for (std::size_t i = 0; i < index.size(); ++i) {
        const Window& w = index.at(i);
        if (exclude_clip && w.clip_id == *exclude_clip) continue;
        const double* x = w.keypoints.data();
        double s = 0;
        std::size_t j = 0;
        // Abandon once the partial sum exceeds the best: it can neither win nor tie.
        for (; j < n; ++j) {
            double d = query[j] - x[j];
            s += d * d;
            if (s > best_d) break;
        }
        if (j == n && s < best_d) {
            best_d = s;
            best = i;
        }
    }
    return best;
}

std::vector<double> nn_baseline(std::span<const double> query_keypoints, const RetrievalIndex& index) {
    return index.at(*nearest(query_keypoints, index)).emg;
}

std::vector<double> predict_random(std::span<const Window> queries, const RetrievalIndex& index, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<double> out;
    for (const auto& q : queries) {
        auto e = random_baseline(q, index, rng);
        out.insert(out.end(), e.begin(), e.end());
    }
    return out;
}

std::vector<double> predict_nn(std::span<const Window> queries, const RetrievalIndex& index) {
    std::vector<double> out;
    for (const auto& q : queries) {
        auto e = nn_baseline(q.keypoints, index);
        out.insert(out.end(), e.begin(), e.end());
    }
    return out;
}

}  // namespace myograph::baselines
