#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "critmap/error.hpp"

namespace critmap {

enum class DType { f32, f64 };

std::string_view to_string(DType dtype);
DType dtype_from_string(std::string_view name);
std::size_t dtype_size(DType dtype);

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Dense row-major tensor. Storage is either float or double; the shape is
/// validated on construction so that data().size() == product(shape) always.
class Tensor {
public:
    Tensor() : data_(std::vector<float>{}) {}
    explicit Tensor(Shape shape, DType dtype = DType::f32);
    Tensor(Shape shape, std::vector<float> values);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape, DType dtype = DType::f32) { return Tensor(std::move(shape), dtype); }
    static Tensor full(Shape shape, double value, DType dtype = DType::f32);

    const Shape& shape() const noexcept { return shape_; }
    std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::int64_t numel() const noexcept { return numel_; }
    DType dtype() const noexcept { return data_.index() == 0 ? DType::f32 : DType::f64; }
    bool empty() const noexcept { return numel_ == 0; }

    template <typename T>
    std::span<T> data() {
        auto* v = std::get_if<std::vector<T>>(&data_);
        require(v != nullptr, ErrorKind::parameter, "tensor dtype mismatch on data access");
        return {v->data(), v->size()};
    }
    template <typename T>
    std::span<const T> data() const {
        const auto* v = std::get_if<std::vector<T>>(&data_);
        require(v != nullptr, ErrorKind::parameter, "tensor dtype mismatch on data access");
        return {v->data(), v->size()};
    }

    /// Flat element access widened to double.
    double at(std::int64_t index) const;
    void set(std::int64_t index, double value);

    Tensor to(DType dtype) const;
    Tensor reshape(Shape shape) const;
    std::vector<double> to_vector() const;

    /// Raw little-endian bytes of the element buffer.
    std::span<const std::byte> bytes() const;
    std::span<std::byte> mutable_bytes();

    /// Same shape, dtype and identical bit patterns.
    bool bit_equal(const Tensor& other) const;

private:
    Shape shape_;
    std::int64_t numel_ = 0;
    std::variant<std::vector<float>, std::vector<double>> data_;
};

/// Calls fn with a value-initialized float or double tag matching dtype.
template <typename Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
    if (dtype == DType::f32) return fn(float{});
    return fn(double{});
}

}  // namespace critmap
