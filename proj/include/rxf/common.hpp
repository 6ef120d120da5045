#pragma once

#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rxf {

// Error taxonomy; the CLI maps these onto stable exit codes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CorruptError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline long long shape_size(const Shape& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

struct RuntimeFlags {
    bool strict_divide = true;       // elementwise div rejects zero denominators
    bool finite_checks = false;      // scan every op output for NaN/Inf
    bool warn_large_light_up = true; // stderr warning when |light-up map| > 10
};

inline RuntimeFlags& flags() {
    static RuntimeFlags f;
    return f;
}

// Kernels are always run in a fixed order, so results do not depend on this
// flag; it is kept so RXF_DETERMINISTIC=1 is an accepted (and honored) request.
inline bool deterministic_forced() {
    const char* v = std::getenv("RXF_DETERMINISTIC");
    return v != nullptr && v[0] == '1';
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

inline double gaussian(Rng& rng, double mean, double sigma) {
    std::normal_distribution<double> d(mean, sigma);
    return d(rng);
}

} // namespace rxf
