#pragma once

#include <stdexcept>
#include <string>

namespace hetmeta {

/// Shape incompatibility between tensor operands.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition outside of shape rules.
class ValueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File format or filesystem failure.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace hetmeta
