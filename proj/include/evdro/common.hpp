#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evdro {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct InfeasibleError : Error {
    using Error::Error;
};

struct SolverError : Error {
    using Error::Error;
};

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();

inline bool reachable(double wstar_entry) { return std::isfinite(wstar_entry); }

// 64-bit FNV-1a, used for config hashing and labeled RNG stream derivation.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Independent stream per (seed, label, index): parallel and serial execution
// consume identical randomness.
inline std::mt19937_64 derive_rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
    std::uint64_t h = fnv1a(label, seed ^ 0x9e3779b97f4a7c15ull);
    h = splitmix64(h ^ splitmix64(index));
    return std::mt19937_64(h);
}

}  // namespace evdro
