#include "critmap/tensor.hpp"

#include <bit>
#include <cstring>
#include <sstream>

namespace critmap {

static_assert(std::endian::native == std::endian::little, "critmap assumes a little-endian host");

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::shape: return "shape";
        case ErrorKind::parameter: return "parameter";
        case ErrorKind::config: return "config";
        case ErrorKind::lookup: return "lookup";
        case ErrorKind::target: return "target";
        case ErrorKind::alignment: return "alignment";
        case ErrorKind::degenerate: return "degenerate";
        case ErrorKind::training: return "training";
        case ErrorKind::io: return "io";
        case ErrorKind::bad_magic: return "bad-magic";
        case ErrorKind::truncated: return "truncation";
        case ErrorKind::version_mismatch: return "version";
        case ErrorKind::shape_mismatch: return "shape-mismatch";
        case ErrorKind::validation: return "validation";
        case ErrorKind::misaligned: return "misaligned";
    }
    return "unknown";
}

std::string_view to_string(DType dtype) { return dtype == DType::f32 ? "float32" : "float64"; }

DType dtype_from_string(std::string_view name) {
    if (name == "float32") return DType::f32;
    if (name == "float64") return DType::f64;
    fail(ErrorKind::parameter, "unknown dtype '" + std::string(name) + "'");
}

std::size_t dtype_size(DType dtype) { return dtype == DType::f32 ? sizeof(float) : sizeof(double); }

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        require(d > 0, ErrorKind::shape, "dimensions must be positive, got " + shape_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), numel_(shape_numel(shape_)) {
    if (dtype == DType::f32)
        data_ = std::vector<float>(static_cast<std::size_t>(numel_), 0.0f);
    else
        data_ = std::vector<double>(static_cast<std::size_t>(numel_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)), data_(std::move(values)) {
    require(static_cast<std::int64_t>(std::get<0>(data_).size()) == numel_, ErrorKind::shape,
            "buffer length does not match shape " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)), data_(std::move(values)) {
    require(static_cast<std::int64_t>(std::get<1>(data_).size()) == numel_, ErrorKind::shape,
            "buffer length does not match shape " + shape_string(shape_));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    Tensor t(std::move(shape), dtype);
    std::visit([value](auto& v) {
        for (auto& x : v) x = static_cast<std::decay_t<decltype(x)>>(value);
    }, t.data_);
    return t;
}

double Tensor::at(std::int64_t index) const {
    return std::visit([index](const auto& v) { return static_cast<double>(v.at(static_cast<std::size_t>(index))); },
                      data_);
}

void Tensor::set(std::int64_t index, double value) {
    std::visit([index, value](auto& v) {
        v.at(static_cast<std::size_t>(index)) = static_cast<std::decay_t<decltype(v[0])>>(value);
    }, data_);
}

Tensor Tensor::to(DType target) const {
    if (target == dtype()) return *this;
    Tensor out(shape_, target);
    std::visit([&out](const auto& src) {
        std::visit([&src](auto& dst) {
            for (std::size_t i = 0; i < src.size(); ++i)
                dst[i] = static_cast<std::decay_t<decltype(dst[0])>>(src[i]);
        }, out.data_);
    }, data_);
    return out;
}

Tensor Tensor::reshape(Shape shape) const {
    require(shape_numel(shape) == numel_, ErrorKind::shape,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
}

std::vector<double> Tensor::to_vector() const {
    return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data_);
}

std::span<const std::byte> Tensor::bytes() const {
    return std::visit([](const auto& v) { return std::as_bytes(std::span(v)); }, data_);
}

std::span<std::byte> Tensor::mutable_bytes() {
    return std::visit([](auto& v) { return std::as_writable_bytes(std::span(v)); }, data_);
}

bool Tensor::bit_equal(const Tensor& other) const {
    if (shape_ != other.shape_ || dtype() != other.dtype()) return false;
    auto a = bytes();
    auto b = other.bytes();
    return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size()) == 0);
}

}  // namespace critmap
