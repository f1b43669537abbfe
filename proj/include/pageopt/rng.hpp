#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace pageopt {

// Deterministic splittable random stream.
//
// All distributions are implemented here rather than with <random> because the
// standard distributions are implementation-defined; reproducing a run byte for
// byte requires the whole sampling path to be pinned. Streams split by
// (label, index) so independent pieces of work (one page, one replay, ...) can
// draw without sharing mutable state.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed);

    // Child stream identified by (label, index); does not advance this stream.
    RngStream derive(std::string_view label, std::uint64_t index = 0) const;

    std::uint64_t next_u64();
    // Uniform in [0, 1), 53-bit resolution.
    double next_double();
    // Uniform in (0, 1]; safe as a log() argument.
    double next_double_open();
    double uniform(double lo, double hi);
    // Uniform integer in [0, bound); bound > 0.
    std::uint64_t next_below(std::uint64_t bound);
    bool bernoulli(double p);
    // Standard normal via Box-Muller.
    double normal();
    // Gamma(shape, 1), shape > 0. Marsaglia-Tsang squeeze method.
    double gamma(double shape);
    double beta(double a, double b);

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace pageopt
