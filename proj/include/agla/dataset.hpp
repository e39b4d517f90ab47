#pragma once

#include "agla/error.hpp"

#include <algorithm>
#include <cstddef>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace agla {

using Rng = std::mt19937_64;

/// One labelled example. `label` is the global class index; `id` is unique within a stream.
struct Sample {
    std::vector<double> x;
    std::size_t label = 0;
    std::size_t task = 0;
    std::size_t id = 0;
};

/// One task of a stream. `classes` are contiguous global labels [first_class, first_class + count).
struct Task {
    std::size_t index = 0;
    std::vector<std::size_t> classes;
    std::vector<Sample> train;
    std::vector<Sample> test;

    std::size_t first_class() const { return classes.empty() ? 0 : classes.front(); }
};

/// Ordered tasks with pairwise-disjoint class sets. Labels are numbered so that task k's
/// classes directly follow task k-1's; the class-IL column of a label is the label itself.
struct TaskStream {
    std::vector<Task> tasks;
    std::size_t input_dim = 0;
    bool unit_range = false;  // every feature lies in [0,1]

    std::size_t task_count() const { return tasks.size(); }

    std::size_t class_count() const {
        std::size_t n = 0;
        for (const Task& t : tasks) n += t.classes.size();
        return n;
    }

    std::size_t train_size() const {
        std::size_t n = 0;
        for (const Task& t : tasks) n += t.train.size();
        return n;
    }

    /// Throws ProtocolError unless the class sets are disjoint, contiguous, and every
    /// sample's label, task index and width are consistent.
    void validate() const {
        if (tasks.empty()) throw ProtocolError("task stream is empty");
        std::set<std::size_t> seen;
        std::size_t next_class = 0;
        for (std::size_t k = 0; k < tasks.size(); ++k) {
            const Task& t = tasks[k];
            if (t.index != k) throw ProtocolError("task " + std::to_string(k) + " carries index " + std::to_string(t.index));
            if (t.classes.empty()) throw ProtocolError("task " + std::to_string(k) + " has no classes");
            for (std::size_t c : t.classes) {
                if (!seen.insert(c).second)
                    throw ProtocolError("class " + std::to_string(c) + " appears in more than one task");
                if (c != next_class++) throw ProtocolError("class labels must be contiguous in task order");
            }
            auto check = [&](const std::vector<Sample>& samples) {
                for (const Sample& s : samples) {
                    if (s.task != k) throw ProtocolError("sample task id does not match its task");
                    if (s.label < t.first_class() || s.label >= t.first_class() + t.classes.size())
                        throw ProtocolError("sample label " + std::to_string(s.label) + " not in task " +
                                            std::to_string(k));
                    if (s.x.size() != input_dim) throw ProtocolError("sample width does not match stream input_dim");
                }
            };
            check(t.train);
            check(t.test);
        }
    }
};

inline bool within_unit_range(const std::vector<double>& x) {
    return std::all_of(x.begin(), x.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

}  // namespace agla
