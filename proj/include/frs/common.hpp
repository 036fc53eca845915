#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace frs {

// Error families. The CLI maps contract-side failures to exit code 1 and
// I/O-side failures to exit code 2.
struct ContractFamilyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoFamilyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : ContractFamilyError {
    using ContractFamilyError::ContractFamilyError;
};
struct ConfigError : ContractFamilyError {
    using ContractFamilyError::ContractFamilyError;
};
struct ContractError : ContractFamilyError {
    using ContractFamilyError::ContractFamilyError;
};
struct NumericError : ContractFamilyError {
    using ContractFamilyError::ContractFamilyError;
};

struct IoError : IoFamilyError {
    using IoFamilyError::IoFamilyError;
};
struct CorruptionError : IoFamilyError {
    using IoFamilyError::IoFamilyError;
};
struct CompatibilityError : IoFamilyError {
    using IoFamilyError::IoFamilyError;
};
struct UnsupportedVersionError : IoFamilyError {
    using IoFamilyError::IoFamilyError;
};

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// Finiteness checks after each op run in debug builds only.
// FRS_FORCE_FINITE_CHECKS lets a release test target opt back in.
#if !defined(NDEBUG) || defined(FRS_FORCE_FINITE_CHECKS)
#define FRS_FINITE_CHECKS 1
#else
#define FRS_FINITE_CHECKS 0
#endif

}  // namespace frs
