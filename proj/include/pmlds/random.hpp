#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

#include "pmlds/core.hpp"

namespace pmlds {

/// Counter-based SplitMix64 stream. Satisfies UniformRandomBitGenerator so it
/// can drive the <random> distributions. Each stream is cheap to create,
/// which lets every particle of every filter step own a private stream keyed
/// by (block, step, particle) and keeps results independent of thread count.
class RandomStream {
public:
    using result_type = std::uint64_t;

    explicit RandomStream(std::uint64_t state) : state_(state) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    /// Uniform on (0, 1); never returns exactly 0 or 1.
    double uniform()
    {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() { return normal_(*this); }

    Vector normal_vector(Eigen::Index n)
    {
        Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            v[i] = normal();
        }
        return v;
    }

    static constexpr std::uint64_t mix(std::uint64_t z)
    {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Hash a path of integers into one stream id.
constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts)
{
    std::uint64_t h = 0x6A09E667F3BCC908ULL;
    for (auto p : parts) {
        h = RandomStream::mix(h ^ RandomStream::mix(p + 0x9E3779B97F4A7C15ULL));
    }
    return h;
}

/// Independent deterministic stream for (seed, stream_id).
inline RandomStream seeded_stream(std::uint64_t seed, std::uint64_t stream_id)
{
    return RandomStream(RandomStream::mix(seed ^ RandomStream::mix(stream_id ^ 0xD1B54A32D192ED03ULL)));
}

/// Hierarchical key used by the pipelines to derive sub-streams.
struct StreamKey {
    std::uint64_t seed = 0;
    std::uint64_t path = 0;

    [[nodiscard]] StreamKey child(std::uint64_t a) const { return {seed, stream_key({path, a})}; }
    [[nodiscard]] StreamKey child(std::uint64_t a, std::uint64_t b) const
    {
        return {seed, stream_key({path, a, b})};
    }
    [[nodiscard]] RandomStream stream(std::uint64_t id = 0) const
    {
        return seeded_stream(seed, stream_key({path, id}));
    }
};

// Top-level stream tags.
namespace tags {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t filter = 2;
inline constexpr std::uint64_t resample = 3;
inline constexpr std::uint64_t smooth = 4;
inline constexpr std::uint64_t predict = 5;
inline constexpr std::uint64_t generate = 6;
inline constexpr std::uint64_t heat = 7;
inline constexpr std::uint64_t em_init = 8;
inline constexpr std::uint64_t score = 9;
}  // namespace tags

}  // namespace pmlds
