#include "tdlab/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace tdlab {

int64_t Tensor::numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        check(d >= 0, "negative dimension");
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    Tensor t;
    const int64_t n = numel_of(shape);
    t.shape = std::move(shape);
    t.data.assign(static_cast<size_t>(n), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.data) v = value;
    return t;
}

Tensor Tensor::scalar(double value) {
    Tensor t;
    t.data.assign(1, value);
    return t;
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> values) {
    check(numel_of(shape) == static_cast<int64_t>(values.size()),
          "shape does not match value count");
    for (double v : values) check(std::isfinite(v), "non-finite value in tensor input");
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_tnsr(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "cannot open for writing: " + path);
    os.write("TNSR", 4);
    put_u32(os, 1u);
    os.put(static_cast<char>(1));  // dtype: f64
    os.put(static_cast<char>(t.rank()));
    for (int64_t d : t.shape) put_u64(os, static_cast<uint64_t>(d));
    for (double v : t.data) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(os, bits);
    }
    check(os.good(), "write failed: " + path);
}

Tensor read_tnsr(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    check(is.good() && std::memcmp(magic, "TNSR", 4) == 0, "bad magic in " + path);
    check(get_u32(is) == 1u, "unsupported TNSR version in " + path);
    const int dtype = is.get();
    check(dtype == 1, "unsupported dtype in " + path);
    const int rank = is.get();
    check(rank >= 0 && rank <= 8, "unsupported rank in " + path);
    std::vector<int64_t> shape(static_cast<size_t>(rank));
    for (auto& d : shape) d = static_cast<int64_t>(get_u64(is));
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.data) {
        const uint64_t bits = get_u64(is);
        std::memcpy(&v, &bits, 8);
    }
    check(is.good(), "truncated TNSR file: " + path);
    return t;
}

const ParamSegment* ParamLayout::find(const std::string& name) const {
    for (const auto& seg : segments) {
        if (seg.name == name) return &seg;
    }
    return nullptr;
}

ParamVector ParamVector::zeros_like(const ParamLayout& layout) {
    ParamVector p;
    p.layout = layout;
    p.data.assign(static_cast<size_t>(layout.total), 0.0);
    return p;
}

Tensor ParamVector::segment_tensor(const ParamSegment& seg) const {
    Tensor t = Tensor::zeros(seg.shape);
    const int64_t n = seg.numel();
    for (int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i)] = data[static_cast<size_t>(seg.offset + i)];
    return t;
}

void ParamVector::set_segment(const ParamSegment& seg, const Tensor& t) {
    check(t.numel() == seg.numel(), "segment size mismatch for " + seg.name);
    for (int64_t i = 0; i < t.numel(); ++i)
        data[static_cast<size_t>(seg.offset + i)] = t.data[static_cast<size_t>(i)];
}

bool ParamVector::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void ParamVector::add_scaled(const ParamVector& other, double scale) {
    check(layout == other.layout, "parameter layout mismatch");
    for (size_t i = 0; i < data.size(); ++i) data[i] += scale * other.data[i];
}

double ParamVector::norm() const {
    double s = 0.0;
    for (double v : data) s += v * v;
    return std::sqrt(s);
}

double dot(const ParamVector& a, const ParamVector& b) {
    check(a.layout == b.layout, "dot: parameter layout mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

}  // namespace tdlab
