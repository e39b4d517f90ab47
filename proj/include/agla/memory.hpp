#pragma once

// Per-class reservoir memory with stored logits and transform-based over-sampling.

#include "agla/dataset.hpp"
#include "agla/error.hpp"
#include "agla/nets.hpp"
#include "agla/transforms.hpp"

#include <map>
#include <optional>
#include <random>
#include <vector>

namespace agla {

/// A replay record. `origin` identifies the pre-augmentation sample; `transform` is 0
/// for stored originals and 1..M for the M-th transformed copy of that origin.
struct MemoryEntry {
    std::vector<double> x;
    std::size_t label = 0;
    std::vector<double> logits;
    std::size_t task = 0;
    std::size_t origin = 0;
    std::size_t transform = 0;
};

/// One reservoir per class, each holding at most `capacity_per_class` entries.
class ReservoirBuffer {
public:
    explicit ReservoirBuffer(std::size_t capacity_per_class = 50) : capacity_(capacity_per_class) {}

    std::size_t capacity_per_class() const { return capacity_; }

    /// Algorithm R on the reservoir of `entry.label`: the first `capacity` items are kept;
    /// item n > capacity replaces a uniformly chosen slot with probability capacity/n.
    template <class UniformRng>
    void insert(MemoryEntry entry, UniformRng& rng) {
        ClassReservoir& res = classes_[entry.label];
        const std::size_t n = ++res.seen;
        if (res.entries.size() < capacity_) {
            res.entries.push_back(std::move(entry));
            return;
        }
        if (capacity_ == 0) return;
        std::uniform_int_distribution<std::size_t> slot(0, n - 1);
        const std::size_t j = slot(rng);
        if (j < capacity_) res.entries[j] = std::move(entry);
    }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& [_, r] : classes_) n += r.entries.size();
        return n;
    }

    bool empty() const { return size() == 0; }

    std::vector<std::size_t> classes() const {
        std::vector<std::size_t> out;
        for (const auto& [c, _] : classes_) out.push_back(c);
        return out;
    }

    const std::vector<MemoryEntry>& entries(std::size_t cls) const { return reservoir(cls).entries; }
    std::size_t seen(std::size_t cls) const { return reservoir(cls).seen; }

    /// Every stored entry in ascending class order.
    std::vector<MemoryEntry> all_entries() const {
        std::vector<MemoryEntry> out;
        for (const auto& [_, r] : classes_) out.insert(out.end(), r.entries.begin(), r.entries.end());
        return out;
    }

    template <class F>
    void for_each_entry(F&& f) {
        for (auto& [_, r] : classes_)
            for (MemoryEntry& e : r.entries) f(e);
    }

    void clear() { classes_.clear(); }

private:
    struct ClassReservoir {
        std::vector<MemoryEntry> entries;
        std::size_t seen = 0;
    };

    const ClassReservoir& reservoir(std::size_t cls) const {
        auto it = classes_.find(cls);
        if (it == classes_.end()) throw ProtocolError("memory has never seen class " + std::to_string(cls));
        return it->second;
    }

    std::size_t capacity_;
    std::map<std::size_t, ClassReservoir> classes_;
};

template <class UniformRng>
void reservoir_insert(ReservoirBuffer& buffer, const Sample& sample, std::size_t cls, UniformRng& rng) {
    buffer.insert(MemoryEntry{sample.x, cls, {}, sample.task, sample.id, 0}, rng);
}

/// Overwrites every entry's stored logits with the snapshot's output on its input
/// (task-IL entries use the head of their own task).
inline void refresh_logits(ReservoirBuffer& buffer, const ModelSnapshot& snap) {
    std::map<std::optional<std::size_t>, std::vector<MemoryEntry*>> groups;
    buffer.for_each_entry([&](MemoryEntry& e) {
        const auto key = snap.mode() == IlMode::task_il ? std::optional<std::size_t>(e.task) : std::nullopt;
        groups[key].push_back(&e);
    });
    for (auto& [task, entries] : groups) {
        const std::size_t d = entries.front()->x.size();
        std::vector<double> xs;
        xs.reserve(entries.size() * d);
        for (const MemoryEntry* e : entries) xs.insert(xs.end(), e->x.begin(), e->x.end());
        const Tensor logits = snap.forward(Tensor({entries.size(), d}, std::move(xs)), task);
        const std::size_t w = logits.cols();
        for (std::size_t i = 0; i < entries.size(); ++i)
            entries[i]->logits.assign(logits.data().begin() + static_cast<std::ptrdiff_t>(i * w),
                                      logits.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * w));
    }
}

/// Originals of every class plus transformed copies up to `target_per_class` entries per
/// class. Copies cycle through the originals, keep the origin's label, logits and id, and
/// take a transform drawn uniformly from `family`.
inline std::vector<MemoryEntry> augment_memory(const ReservoirBuffer& buffer, const TransformFamily& family,
                                               std::size_t target_per_class, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<MemoryEntry> out;
    for (std::size_t cls : buffer.classes()) {
        const auto& stored = buffer.entries(cls);
        if (stored.empty()) {
            if (buffer.seen(cls) > 0)
                throw ProtocolError("augment_memory: class " + std::to_string(cls) + " was seen but holds no entries");
            continue;
        }
        if (target_per_class < stored.size())
            throw ParameterError("augment_memory: target " + std::to_string(target_per_class) +
                                 " below stored count " + std::to_string(stored.size()));
        for (const MemoryEntry& e : stored) {
            MemoryEntry orig = e;
            orig.transform = 0;
            out.push_back(std::move(orig));
        }
        std::vector<std::size_t> copies(stored.size(), 0);
        for (std::size_t c = 0; c < target_per_class - stored.size(); ++c) {
            const std::size_t i = c % stored.size();
            MemoryEntry copy = stored[i];
            copy.x = apply_transform(draw_transform(family, rng), stored[i].x, rng);
            copy.transform = ++copies[i];
            out.push_back(std::move(copy));
        }
    }
    return out;
}

}  // namespace agla
