#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ecsac/errors.hpp"
#include "ecsac/matrix.hpp"
#include "ecsac/rng.hpp"

namespace ecsac {

/// Gaussian random projection of concatenated state-action vectors onto a
/// low-dimensional key space. Entries are i.i.d. N(0, 1/target_dim) so the
/// expected squared norm of the input is preserved. Frozen after
/// construction: same (seed, dims) gives the same matrix forever.
class ProjectionMatrix {
public:
    ProjectionMatrix(std::size_t source_dim, std::size_t target_dim, std::uint64_t seed)
        : source_dim_(source_dim), target_dim_(target_dim), seed_(seed),
          entries_(target_dim, source_dim) {
        if (source_dim == 0 || target_dim == 0)
            throw ConfigError("ProjectionMatrix: dimensions must be positive");
        Rng rng(seed);
        const double sd = 1.0 / std::sqrt(static_cast<double>(target_dim));
        for (double& e : entries_.data) e = sd * rng.normal();
    }

    /// Explicit-entries constructor (checkpoint restore, tests).
    ProjectionMatrix(Matrix entries, std::uint64_t seed = 0)
        : source_dim_(entries.cols), target_dim_(entries.rows), seed_(seed),
          entries_(std::move(entries)) {
        if (source_dim_ == 0 || target_dim_ == 0)
            throw ConfigError("ProjectionMatrix: dimensions must be positive");
    }

    std::size_t source_dim() const { return source_dim_; }
    std::size_t target_dim() const { return target_dim_; }
    std::uint64_t seed() const { return seed_; }
    const Matrix& entries() const { return entries_; }

    /// Key for a concatenated source-space vector.
    std::vector<double> project_concat(std::span<const double> x) const {
        if (x.size() != source_dim_)
            throw ConfigError("ProjectionMatrix::project: source dimension mismatch");
        std::vector<double> key(target_dim_, 0.0);
        for (std::size_t i = 0; i < target_dim_; ++i) {
            const double* row = entries_.row_ptr(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < source_dim_; ++j) acc += row[j] * x[j];
            key[i] = acc;
        }
        return key;
    }

    /// Key for a state-action pair; concatenation order is [state; action].
    std::vector<double> project(std::span<const double> state,
                                std::span<const double> action) const {
        if (state.size() + action.size() != source_dim_)
            throw ConfigError("ProjectionMatrix::project: state+action dimension mismatch");
        std::vector<double> x;
        x.reserve(source_dim_);
        x.insert(x.end(), state.begin(), state.end());
        x.insert(x.end(), action.begin(), action.end());
        return project_concat(x);
    }

private:
    std::size_t source_dim_;
    std::size_t target_dim_;
    std::uint64_t seed_;
    Matrix entries_;
};

/// Pairwise distance-ratio diagnostics for a point cloud: how much the
/// projection distorts distances. Duplicate points have no defined ratio
/// and are skipped but counted.
struct DistortionReport {
    std::size_t valid_pairs = 0;
    std::size_t skipped_pairs = 0;
    double min_ratio = 0.0;
    double max_ratio = 0.0;
    double mean_ratio = 0.0;
    static constexpr std::size_t kBins = 40;   // [0, 2) in steps of 0.05, last bin catches >= 2
    std::array<std::size_t, kBins> histogram{};
    std::vector<double> ratios;

    double fraction_within(double lo, double hi) const {
        if (ratios.empty()) return 0.0;
        std::size_t n = 0;
        for (double r : ratios)
            if (r >= lo && r <= hi) ++n;
        return static_cast<double>(n) / static_cast<double>(ratios.size());
    }
};

inline DistortionReport distortion_report(const ProjectionMatrix& pm,
                                          const std::vector<std::vector<double>>& points) {
    if (points.size() < 2)
        throw ConfigError("distortion_report: need at least 2 points");

    std::vector<std::vector<double>> projected;
    projected.reserve(points.size());
    for (const auto& p : points) projected.push_back(pm.project_concat(p));

    auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
        double sq = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            const double d = a[k] - b[k];
            sq += d * d;
        }
        return std::sqrt(sq);
    };

    DistortionReport rep;
    double sum = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            const double d0 = dist(points[i], points[j]);
            if (d0 == 0.0) {
                rep.skipped_pairs += 1;
                continue;
            }
            const double r = dist(projected[i], projected[j]) / d0;
            rep.ratios.push_back(r);
            sum += r;
            if (rep.valid_pairs == 0 || r < rep.min_ratio) rep.min_ratio = r;
            if (rep.valid_pairs == 0 || r > rep.max_ratio) rep.max_ratio = r;
            rep.valid_pairs += 1;
            const auto bin = std::min(static_cast<std::size_t>(r / 0.05), DistortionReport::kBins - 1);
            rep.histogram[bin] += 1;
        }
    }
    if (rep.valid_pairs > 0) rep.mean_ratio = sum / static_cast<double>(rep.valid_pairs);
    return rep;
}

} // namespace ecsac
