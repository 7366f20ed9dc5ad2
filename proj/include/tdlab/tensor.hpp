#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdlab {

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Dense row-major tensor of 64-bit floats. Rank 0 denotes a scalar.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;

    static int64_t numel_of(const std::vector<int64_t>& shape);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor scalar(double value);
    // validating constructor for external inputs: NaN/Inf rejected here
    static Tensor from_data(std::vector<int64_t> shape, std::vector<double> values);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    bool is_scalar() const { return shape.empty(); }

    double scalar_value() const {
        check(numel() == 1, "tensor is not a scalar");
        return data[0];
    }

    double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
    double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double& at4(int64_t a, int64_t b, int64_t c, int64_t d) {
        return data[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }
    double at4(int64_t a, int64_t b, int64_t c, int64_t d) const {
        return data[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
    }

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

// "TNSR" file format: magic, u32 version=1, u8 dtype (1 = f64), u8 rank,
// rank x u64 dims, row-major f64 payload; all integers little-endian.
void write_tnsr(const std::string& path, const Tensor& t);
Tensor read_tnsr(const std::string& path);

// Flat view of all model parameters, segmented by parameter-group name.
struct ParamSegment {
    std::string name;
    int64_t offset = 0;
    std::vector<int64_t> shape;

    int64_t numel() const { return Tensor::numel_of(shape); }
    bool operator==(const ParamSegment& o) const {
        return name == o.name && offset == o.offset && shape == o.shape;
    }
};

struct ParamLayout {
    std::vector<ParamSegment> segments;
    int64_t total = 0;

    bool operator==(const ParamLayout& o) const {
        return total == o.total && segments == o.segments;
    }
    const ParamSegment* find(const std::string& name) const;
};

struct ParamVector {
    ParamLayout layout;
    std::vector<double> data;

    static ParamVector zeros_like(const ParamLayout& layout);

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    Tensor segment_tensor(const ParamSegment& seg) const;
    void set_segment(const ParamSegment& seg, const Tensor& t);
    bool all_finite() const;

    void add_scaled(const ParamVector& other, double scale);  // this += scale * other
    double norm() const;
};

double dot(const ParamVector& a, const ParamVector& b);

}  // namespace tdlab
