#pragma once

// Random transformation family used for the meta-validation set and for memory
// over-sampling: invert, additive Gaussian noise, and per-channel-group scaling.

#include "agla/dataset.hpp"
#include "agla/error.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace agla {

enum class TransformKind { invert, gaussian_noise, channel_rand };

inline const char* to_string(TransformKind k) {
    switch (k) {
        case TransformKind::invert: return "invert";
        case TransformKind::gaussian_noise: return "gaussian_noise";
        case TransformKind::channel_rand: return "channel_rand";
    }
    return "?";
}

struct TransformSpec {
    TransformKind kind = TransformKind::gaussian_noise;
    double sigma = 0.1;
    double low = 0.8;
    double high = 1.2;

    static TransformSpec invert() { return {TransformKind::invert}; }
    static TransformSpec gaussian(double sigma) { return {TransformKind::gaussian_noise, sigma}; }
    static TransformSpec channel(double low, double high) { return {TransformKind::channel_rand, 0.1, low, high}; }

    void validate() const {
        if (sigma < 0) throw ParameterError("gaussian noise sigma must be >= 0");
        if (!(low > 0) || low > high) throw ParameterError("channel_rand requires 0 < low <= high");
    }
};

using TransformFamily = std::vector<TransformSpec>;

/// invert, gaussian_noise(0.1), channel_rand(0.8, 1.2).
inline TransformFamily default_transform_family() {
    return {TransformSpec::invert(), TransformSpec::gaussian(0.1), TransformSpec::channel(0.8, 1.2)};
}

inline constexpr std::size_t kChannelGroups = 3;

template <class UniformRng>
std::vector<double> apply_transform(const TransformSpec& spec, std::span<const double> x, UniformRng& rng) {
    spec.validate();
    std::vector<double> out(x.begin(), x.end());
    for (double v : out)
        if (!std::isfinite(v)) throw NumericError("apply_transform: non-finite input");
    switch (spec.kind) {
        case TransformKind::invert:
            if (!within_unit_range(out)) throw DomainError("invert transform requires inputs scaled to [0,1]");
            for (double& v : out) v = 1.0 - v;
            break;
        case TransformKind::gaussian_noise: {
            if (spec.sigma == 0) break;
            std::normal_distribution<double> noise(0.0, spec.sigma);
            for (double& v : out) v += noise(rng);
            break;
        }
        case TransformKind::channel_rand: {
            std::uniform_real_distribution<double> factor(spec.low, spec.high);
            const std::size_t d = out.size();
            for (std::size_t g = 0; g < kChannelGroups; ++g) {
                const double f = spec.low == spec.high ? spec.low : factor(rng);
                for (std::size_t i = g * d / kChannelGroups; i < (g + 1) * d / kChannelGroups; ++i) out[i] *= f;
            }
            break;
        }
    }
    return out;
}

/// Draws one member of the family uniformly.
template <class UniformRng>
const TransformSpec& draw_transform(const TransformFamily& family, UniformRng& rng) {
    if (family.empty()) throw ParameterError("transform family is empty");
    std::uniform_int_distribution<std::size_t> pick(0, family.size() - 1);
    return family[pick(rng)];
}

/// Copy of `train` with every input replaced by a randomly transformed version.
/// Works for any element type exposing a `std::vector<double> x` member; all other
/// fields, including labels, are copied unchanged.
template <class Example>
std::vector<Example> make_validation_set(const std::vector<Example>& train, const TransformFamily& family,
                                         std::uint64_t seed) {
    if (train.empty()) throw ParameterError("make_validation_set: empty training set");
    Rng rng(seed);
    std::vector<Example> val;
    val.reserve(train.size());
    for (const Example& e : train) {
        Example v = e;
        v.x = apply_transform(draw_transform(family, rng), e.x, rng);
        val.push_back(std::move(v));
    }
    return val;
}

}  // namespace agla
