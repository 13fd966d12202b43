#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "koala/errors.hpp"
#include "koala/rng.hpp"

namespace koala {

// Numeric precision of primitive results. Test / gradient-check code runs in
// f64; training and evaluation run in f32 (values are stored as doubles but
// every primitive output is rounded through IEEE-754 binary32).
enum class Precision { f64, f32 };

Precision precision_mode();
void set_precision(Precision p);

// RAII precision switch for scoped test/gradcheck sections.
struct PrecisionGuard {
    explicit PrecisionGuard(Precision p) : prev_(precision_mode()) { set_precision(p); }
    ~PrecisionGuard() { set_precision(prev_); }
    Precision prev_;
};

inline double quantize(double x) {
    return precision_mode() == Precision::f32 ? static_cast<double>(static_cast<float>(x)) : x;
}

// Dense row-major tensor. Rank is dynamic; most of the stack uses rank 2.
struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> d);

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return n;
    }
    std::size_t rank() const { return dims.size(); }

    // 2-D accessors.
    std::size_t rows() const { return dims.empty() ? 0 : dims[0]; }
    std::size_t cols() const { return dims.size() < 2 ? 1 : dims[1]; }
    double& at(std::size_t r, std::size_t c) { return v[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }
    std::string shape_str() const;

    static Tensor zeros(std::vector<std::size_t> d);
    static Tensor full(std::vector<std::size_t> d, double value);
    static Tensor scalar(double value) { return full({1}, value); }
    // Seeded unit Gaussian, scaled; quantized to the current precision mode.
    static Tensor randn(std::vector<std::size_t> d, Rng& rng, double scale = 1.0);
    static Tensor identity(std::size_t in, std::size_t out);

    void quantize_inplace();
    bool all_finite() const;
};

// FNV-1a over the f32 little-endian byte stream, matching the KOAT payload,
// so a checksum survives a save/load round trip.
std::uint64_t checksum(const Tensor& t);
std::string checksum_hex(const Tensor& t);

// KOAT container: magic "KOAT", u32 version=1, u32 rank, rank x u64 dims,
// then row-major little-endian IEEE-754 binary32 values.
void save_koat(const Tensor& t, const std::string& path);
Tensor load_koat(const std::string& path);

} // namespace koala
