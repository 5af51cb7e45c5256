#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "ecsac/errors.hpp"
#include "ecsac/projection.hpp"
#include "ecsac/rng.hpp"
#include "ecsac/transition.hpp"

namespace ecsac {

/// A stored memory: projection key plus the original transition.
struct EpisodicRecord {
    std::vector<double> key;
    Transition transition;
    std::uint64_t insertion_index = 0;
};

/// One k-NN hit. `slot` stays valid until the record is evicted.
struct Neighbor {
    std::size_t slot = 0;
    std::uint64_t insertion_index = 0;
    double distance = 0.0;
};

/// Capacity-bounded FIFO store of transitions keyed by projection vectors.
///
/// Retrieval is an exact linear scan: at 100k records x 10 dims x batch 256
/// this is the throughput hot spot, so keys live in component-major layout
/// (all first components contiguous, then all second components, ...) and the
/// scan accumulates squared distances over contiguous slot ranges that the
/// compiler vectorizes. Exactness is contractual; there is no index structure.
class EpisodicStore {
public:
    EpisodicStore(std::size_t capacity, std::size_t key_dim)
        : capacity_(capacity), key_dim_(key_dim),
          keys_(capacity * key_dim), trans_(capacity), index_(capacity) {
        detail::tune_malloc_once();
        if (capacity == 0 || key_dim == 0)
            throw ConfigError("EpisodicStore: capacity and key_dim must be positive");
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t key_dim() const { return key_dim_; }
    std::size_t size() const { return size_; }

    /// FIFO insert; the oldest record is evicted silently at capacity.
    /// Insertion indices (global step at insertion) must be strictly
    /// increasing.
    void insert(const Transition& t, std::span<const double> key, std::uint64_t global_step) {
        if (key.size() != key_dim_)
            throw ConfigError("EpisodicStore::insert: key dimension mismatch");
        if (size_ > 0 && global_step <= newest_index())
            throw UsageError("EpisodicStore::insert: insertion index not increasing");
        const std::size_t slot = next_;
        for (std::size_t c = 0; c < key_dim_; ++c) keys_[c * capacity_ + slot] = key[c];
        trans_[slot] = t;
        index_[slot] = global_step;
        next_ = (next_ + 1) % capacity_;
        if (size_ < capacity_) ++size_;
    }

    const Transition& transition_at(std::size_t slot) const { return trans_[slot]; }
    std::uint64_t insertion_index_at(std::size_t slot) const { return index_[slot]; }

    EpisodicRecord record_at(std::size_t slot) const {
        EpisodicRecord r;
        r.key.resize(key_dim_);
        for (std::size_t c = 0; c < key_dim_; ++c) r.key[c] = keys_[c * capacity_ + slot];
        r.transition = trans_[slot];
        r.insertion_index = index_[slot];
        return r;
    }

    bool contains_index(std::uint64_t insertion_index) const {
        return logical_of_index(insertion_index).has_value();
    }

    /// Exact k nearest records by L2 key distance, ascending; ties broken by
    /// smaller insertion index. Empty store returns an empty list (cold start).
    std::vector<Neighbor> knn(std::span<const double> query, std::size_t k) const {
        if (k == 0) throw ConfigError("EpisodicStore::knn: K must be >= 1");
        if (query.size() != key_dim_)
            throw ConfigError("EpisodicStore::knn: query dimension mismatch");
        std::vector<std::vector<Neighbor>> out(1);
        if (size_ > 0) scan_range(query.data(), 0, 1, k, out);
        return std::move(out[0]);
    }

    /// Batched scan: queries is n_queries x key_dim row-major; results for
    /// query q land in out[q]. Record blocks sized for L1 are scanned once
    /// while every query in the worker's range visits them, so the key
    /// array streams from memory once per worker rather than once per
    /// query. Fan-out across queries is read-only and safe.
    void knn_batch(const double* queries, std::size_t n_queries, std::size_t k,
                   std::vector<std::vector<Neighbor>>& out, unsigned threads = 1) const {
        if (k == 0) throw ConfigError("EpisodicStore::knn: K must be >= 1");
        out.assign(n_queries, {});
        if (size_ == 0 || n_queries == 0) return;
        auto work = [&](std::size_t begin, std::size_t end) { scan_range(queries, begin, end, k, out); };
        if (threads <= 1 || n_queries < 2 || size_ < 512) {
            work(0, n_queries);
            return;
        }
        const std::size_t n_workers = std::min<std::size_t>(threads, n_queries);
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        const std::size_t chunk = (n_queries + n_workers - 1) / n_workers;
        for (std::size_t w = 0; w < n_workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(n_queries, begin + chunk);
            if (begin >= end) break;
            pool.emplace_back(work, begin, end);
        }
        for (auto& t : pool) t.join();
    }

    /// Discounted return along the stored trajectory that follows a record:
    /// G = sum_{k=0}^{d-1} gamma^k r_{t+k}, truncated at episode termination
    /// or at the end of contiguous stored history. d == 1 is the record's own
    /// reward. Returns nullopt when the record has been evicted.
    std::optional<double> mc_return(std::uint64_t insertion_index, std::size_t d, double gamma) const {
        if (d == 0) throw ConfigError("EpisodicStore::mc_return: d must be >= 1");
        auto pos = logical_of_index(insertion_index);
        if (!pos) return std::nullopt;
        double g = 0.0;
        double discount = 1.0;
        std::size_t cur = *pos;
        for (std::size_t k = 0; k < d; ++k) {
            const Transition& t = trans_[slot_of_logical(cur)];
            g += discount * t.reward;
            if (t.done) break;
            const std::size_t nxt = cur + 1;
            if (nxt >= size_) break; // end of stored history
            const std::size_t nslot = slot_of_logical(nxt);
            if (index_[nslot] != index_[slot_of_logical(cur)] + 1) break; // gap
            if (trans_[nslot].episode_id != t.episode_id) break;
            discount *= gamma;
            cur = nxt;
        }
        return g;
    }

private:
    std::size_t slot_of_logical(std::size_t i) const {
        const std::size_t oldest = size_ < capacity_ ? 0 : next_;
        return (oldest + i) % capacity_;
    }

    std::uint64_t newest_index() const {
        return index_[slot_of_logical(size_ - 1)];
    }

    /// Binary search over the logically ordered (strictly increasing)
    /// insertion indices.
    std::optional<std::size_t> logical_of_index(std::uint64_t insertion_index) const {
        if (size_ == 0) return std::nullopt;
        std::size_t lo = 0, hi = size_;
        while (lo < hi) {
            const std::size_t mid = lo + (hi - lo) / 2;
            if (index_[slot_of_logical(mid)] < insertion_index)
                lo = mid + 1;
            else
                hi = mid;
        }
        if (lo < size_ && index_[slot_of_logical(lo)] == insertion_index) return lo;
        return std::nullopt;
    }

    struct Cand {
        double d2;
        std::uint64_t idx;
        std::size_t slot;
    };

    static bool better(const Cand& a, const Cand& b) {
        return a.d2 < b.d2 || (a.d2 == b.d2 && a.idx < b.idx);
    }

    // Sorted top-k insert; k is tiny (default 2).
    static void offer(std::vector<Cand>& best, std::size_t k, const Cand& cand) {
        if (best.size() < k) {
            best.insert(std::upper_bound(best.begin(), best.end(), cand, better), cand);
        } else if (better(cand, best.back())) {
            best.back() = cand;
            std::size_t i = best.size() - 1;
            while (i > 0 && better(best[i], best[i - 1])) {
                std::swap(best[i], best[i - 1]);
                --i;
            }
        }
    }

    void scan_range(const double* queries, std::size_t q_begin, std::size_t q_end, std::size_t k,
                    std::vector<std::vector<Neighbor>>& out) const {
        const std::size_t nq = q_end - q_begin;
        std::vector<std::vector<Cand>> best(nq);
        for (auto& b : best) b.reserve(k);

        // Distances accumulate component-by-component in ascending order so
        // the values round exactly like a plain per-pair loop (the oracle).
        constexpr std::size_t kBlock = 256;
        double acc[kBlock];
        for (std::size_t base = 0; base < size_; base += kBlock) {
            const std::size_t n = std::min(kBlock, size_ - base);
            for (std::size_t qi = 0; qi < nq; ++qi) {
                const double* q = queries + (q_begin + qi) * key_dim_;
                for (std::size_t j = 0; j < n; ++j) acc[j] = 0.0;
                for (std::size_t c = 0; c < key_dim_; ++c) {
                    const double qc = q[c];
                    const double* kc = keys_.data() + c * capacity_ + base;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double diff = qc - kc[j];
                        acc[j] += diff * diff;
                    }
                }
                auto& bq = best[qi];
                if (bq.size() == k) {
                    const double worst = bq.back().d2;
                    for (std::size_t j = 0; j < n; ++j)
                        if (acc[j] <= worst) offer(bq, k, Cand{acc[j], index_[base + j], base + j});
                } else {
                    for (std::size_t j = 0; j < n; ++j)
                        offer(bq, k, Cand{acc[j], index_[base + j], base + j});
                }
            }
        }
        for (std::size_t qi = 0; qi < nq; ++qi) {
            auto& dst = out[q_begin + qi];
            dst.reserve(best[qi].size());
            for (const Cand& c : best[qi]) dst.push_back(Neighbor{c.slot, c.idx, std::sqrt(c.d2)});
        }
    }

    std::size_t capacity_;
    std::size_t key_dim_;
    std::vector<double> keys_; // component-major: keys_[c * capacity_ + slot]
    std::vector<Transition> trans_;
    std::vector<std::uint64_t> index_;
    std::size_t next_ = 0;
    std::size_t size_ = 0;
};

/// Inverse-distance weights, epsilon-regularized and normalized to sum 1.
/// Closer neighbors dominate; an exact-match neighbor takes nearly all mass.
inline std::vector<double> blend_weights(std::span<const double> distances) {
    constexpr double kEps = 1e-6;
    std::vector<double> w(distances.size());
    if (w.empty()) return w;
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = 1.0 / (distances[i] + kEps);
        total += w[i];
    }
    for (double& x : w) x /= total;
    return w;
}

/// Output of the retrieval pipeline for one query: the weighted aggregate of
/// neighbor states and the weighted blend of their MC-returns.
struct RetrievalResult {
    std::vector<double> past_state;
    double past_reward = 0.0;
    std::size_t neighbor_count = 0;
};

namespace detail {

inline RetrievalResult retrieve_for_key(const EpisodicStore& store, std::span<const double> key,
                                        std::size_t state_dim, std::size_t K, std::size_t d,
                                        double gamma) {
    RetrievalResult res;
    res.past_state.assign(state_dim, 0.0);
    const auto neighbors = store.knn(key, K);
    if (neighbors.empty()) return res;

    std::vector<double> dist;
    std::vector<double> returns;
    std::vector<std::size_t> slots;
    dist.reserve(neighbors.size());
    for (const Neighbor& nb : neighbors) {
        const auto g = store.mc_return(nb.insertion_index, d, gamma);
        if (!g) continue; // evicted between scan and walk: drop the neighbor
        dist.push_back(nb.distance);
        returns.push_back(*g);
        slots.push_back(nb.slot);
    }
    if (dist.empty()) return res;

    const auto w = blend_weights(dist);
    double rp = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        rp += w[i] * returns[i];
        const auto& s = store.transition_at(slots[i]).state;
        for (std::size_t c = 0; c < state_dim; ++c) res.past_state[c] += w[i] * s[c];
    }
    res.past_reward = rp;
    res.neighbor_count = dist.size();
    return res;
}

} // namespace detail

/// Full single-query pipeline: project, scan, walk trajectories, blend.
/// An empty store yields the zero result (cold start degrades to vanilla).
inline RetrievalResult retrieve(const EpisodicStore& store, std::span<const double> state,
                                std::span<const double> action, std::size_t K, std::size_t d,
                                double gamma, const ProjectionMatrix& pm) {
    const auto key = pm.project(state, action);
    return detail::retrieve_for_key(store, key, state.size(), K, d, gamma);
}

/// Batched pipeline over precomputed keys (n x key_dim row-major). The scan
/// fans out across queries; inserts must not run concurrently with this.
inline std::vector<RetrievalResult> retrieve_batch(const EpisodicStore& store,
                                                   const std::vector<double>& keys,
                                                   std::size_t n_queries, std::size_t state_dim,
                                                   std::size_t K, std::size_t d, double gamma,
                                                   unsigned threads = 1) {
    std::vector<std::vector<Neighbor>> hits;
    store.knn_batch(keys.data(), n_queries, K, hits, threads);
    std::vector<RetrievalResult> out(n_queries);
    for (std::size_t q = 0; q < n_queries; ++q) {
        RetrievalResult& res = out[q];
        res.past_state.assign(state_dim, 0.0);
        std::vector<double> dist, returns;
        std::vector<std::size_t> slots;
        for (const Neighbor& nb : hits[q]) {
            const auto g = store.mc_return(nb.insertion_index, d, gamma);
            if (!g) continue;
            dist.push_back(nb.distance);
            returns.push_back(*g);
            slots.push_back(nb.slot);
        }
        if (dist.empty()) continue;
        const auto w = blend_weights(dist);
        for (std::size_t i = 0; i < w.size(); ++i) {
            res.past_reward += w[i] * returns[i];
            const auto& s = store.transition_at(slots[i]).state;
            for (std::size_t c = 0; c < state_dim; ++c) res.past_state[c] += w[i] * s[c];
        }
        res.neighbor_count = dist.size();
    }
    return out;
}

} // namespace ecsac
