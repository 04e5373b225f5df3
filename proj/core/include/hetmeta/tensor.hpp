#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hetmeta/error.hpp"
#include "hetmeta/rng.hpp"

namespace hetmeta {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense n-dimensional array of 64-bit reals, row-major, immutable after
/// construction. Copies are cheap and alias the same payload and identity;
/// the identity is what an active Tape uses to link a tensor back to the
/// entry that produced it. A tensor that no tape knows about participates
/// in forward computation but receives no gradient.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
    static Tensor scalar(double value) { return full({}, value); }
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor from_vector(std::vector<double> data);
    static Tensor from_matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

    bool defined() const { return payload_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const { return payload_ ? payload_->data.size() : 0; }
    std::span<const double> data() const;
    double operator[](std::size_t i) const { return payload_->data[i]; }
    /// Value of a scalar-shaped tensor.
    double value() const;
    /// Element (r, c) of a rank-2 tensor.
    double at(std::size_t r, std::size_t c) const;

    /// Identity used by tapes; 0 for a default-constructed tensor.
    std::uint64_t id() const { return id_; }

private:
    struct Payload {
        std::vector<double> data;
        Shape shape;
    };

    std::shared_ptr<const Payload> payload_;
    std::uint64_t id_ = 0;

    friend Tensor make_tensor(Shape shape, std::vector<double> data);
    friend Tensor detach(const Tensor& t);
};

/// Internal factory: wraps freshly computed data with a new identity.
Tensor make_tensor(Shape shape, std::vector<double> data);

/// Same values, fresh identity: severs any tape linkage.
Tensor detach(const Tensor& t);

/// True when shapes match and payloads are bitwise identical.
bool bit_equal(const Tensor& a, const Tensor& b);

} // namespace hetmeta
