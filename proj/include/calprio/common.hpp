#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace calprio {

// Error categories. Throw sites name the offending quantity in the message.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// splitmix64; used to derive independent seed streams from a named seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return std::mt19937_64(mix_seed(seed + 0x632be59bd9b4e019ULL * (stream + 1)));
}

}  // namespace calprio
