#pragma once

// Halton quasi-random sequences and the standard-normal draw matrix used
// by the simulated likelihood. Draws are deterministic: a fixed
// (n_obs, n_draws, dims, skip) configuration always produces bit-identical
// values, and each observation owns a disjoint block of sequence indices.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixlogit/math.hpp"

namespace mixlogit {

inline constexpr int kMaxHaltonDims = 25;

// First kMaxHaltonDims primes; dimension k of a draw matrix uses primes[k].
inline const int* halton_primes() {
    static const int primes[kMaxHaltonDims] = {2,  3,  5,  7,  11, 13, 17, 19, 23,
                                               29, 31, 37, 41, 43, 47, 53, 59, 61,
                                               67, 71, 73, 79, 83, 89, 97};
    return primes;
}

// Radical inverse: reverse the base-b digits of index across the radix point.
// Computed as an exact integer digit reversal followed by a single division,
// so the result is the correctly rounded value of the underlying rational.
inline double radical_inverse(std::uint64_t index, int base) {
    if (index == 0) {
        throw std::domain_error("radical_inverse: index must be >= 1 (0 maps to 0, which "
                                "has no finite normal quantile)");
    }
    if (base < 2) {
        throw std::domain_error("radical_inverse: base must be a prime >= 2");
    }
    std::uint64_t reversed = 0;
    std::uint64_t denom = 1;
    const auto b = static_cast<std::uint64_t>(base);
    // 2^53 keeps both numerator and denominator exactly representable in double.
    constexpr std::uint64_t limit = (1ull << 53);
    while (index > 0) {
        if (denom > limit / b) {
            throw std::overflow_error("radical_inverse: index " + std::to_string(index) +
                                      " overflows exact digit reversal in base " +
                                      std::to_string(base));
        }
        reversed = reversed * b + index % b;
        denom *= b;
        index /= b;
    }
    return static_cast<double>(reversed) / static_cast<double>(denom);
}

// Standard-normal quasi-random draws, shape (n_obs x n_draws x n_dims).
struct DrawMatrix {
    std::size_t n_obs = 0;
    std::size_t n_draws = 0;
    std::size_t n_dims = 0;
    std::uint64_t skip = 0;
    std::vector<int> bases;
    std::vector<double> values;  // row-major [obs][draw][dim]

    double at(std::size_t obs, std::size_t draw, std::size_t dim) const {
        return values[(obs * n_draws + draw) * n_dims + dim];
    }
    // Contiguous (n_draws x n_dims) block for one observation.
    const double* obs_block(std::size_t obs) const {
        return values.data() + obs * n_draws * n_dims;
    }
};

inline constexpr std::uint64_t kDefaultHaltonSkip = 100;

// Observation n, draw r takes sequence index skip + 1 + (n * n_draws + r);
// every dimension shares the index and differs only in its prime base.
inline DrawMatrix build_draws(std::size_t n_obs, std::size_t n_draws, std::size_t n_dims,
                              std::uint64_t skip = kDefaultHaltonSkip) {
    if (n_obs < 1 || n_draws < 1 || n_dims < 1) {
        throw std::invalid_argument("build_draws: all counts must be >= 1");
    }
    if (n_dims > kMaxHaltonDims) {
        throw std::invalid_argument("build_draws: at most " + std::to_string(kMaxHaltonDims) +
                                    " dimensions supported");
    }
    const std::uint64_t total = static_cast<std::uint64_t>(n_obs) * n_draws;
    if (total > (1ull << 52) - skip - 1) {
        throw std::overflow_error("build_draws: index range overflow");
    }

    DrawMatrix m;
    m.n_obs = n_obs;
    m.n_draws = n_draws;
    m.n_dims = n_dims;
    m.skip = skip;
    m.bases.assign(halton_primes(), halton_primes() + n_dims);
    m.values.resize(n_obs * n_draws * n_dims);

    std::size_t out = 0;
    for (std::size_t n = 0; n < n_obs; ++n) {
        for (std::size_t r = 0; r < n_draws; ++r) {
            const std::uint64_t index = skip + 1 + (n * n_draws + r);
            for (std::size_t k = 0; k < n_dims; ++k) {
                m.values[out++] = standard_normal_quantile(radical_inverse(index, m.bases[k]));
            }
        }
    }
    return m;
}

}  // namespace mixlogit
