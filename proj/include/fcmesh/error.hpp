#pragma once

#include <stdexcept>
#include <string>

namespace fcmesh {

// Failure classes map one-to-one onto CLI exit codes (1, 2, 3).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ComputeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fcmesh
