#pragma once

#include <cstddef>
#include <vector>

#include "ecsac/errors.hpp"
#include "ecsac/rng.hpp"
#include "ecsac/transition.hpp"

namespace ecsac {

/// Uniform-sampling FIFO transition store backed by a ring. Slots are stable
/// while a record is alive, so sampled indices always reference live records.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity), ring_(capacity) {
        if (capacity == 0) throw ConfigError("ReplayBuffer: capacity must be positive");
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return size_; }
    std::uint64_t total_pushed() const { return pushed_; }

    void push(Transition t) {
        ring_[next_] = std::move(t);
        next_ = (next_ + 1) % capacity_;
        if (size_ < capacity_) ++size_;
        ++pushed_;
    }

    const Transition& at_slot(std::size_t slot) const { return ring_[slot]; }

    /// Logical index 0 is the oldest live transition.
    const Transition& at_logical(std::size_t i) const {
        return ring_[slot_of_logical(i)];
    }

    std::size_t slot_of_logical(std::size_t i) const {
        const std::size_t oldest = size_ < capacity_ ? 0 : next_;
        return (oldest + i) % capacity_;
    }

    /// Uniform slots with replacement. Empty buffer is a not-ready condition:
    /// the training loop should wait for warmup data.
    std::vector<std::size_t> sample_slots(std::size_t batch_size, Rng& rng) const {
        if (size_ == 0) throw NotReadyError("ReplayBuffer::sample: buffer is empty");
        std::vector<std::size_t> slots(batch_size);
        for (auto& s : slots) s = slot_of_logical(rng.uniform_index(size_));
        return slots;
    }

private:
    std::size_t capacity_;
    std::vector<Transition> ring_;
    std::size_t next_ = 0;
    std::size_t size_ = 0;
    std::uint64_t pushed_ = 0;
};

} // namespace ecsac
