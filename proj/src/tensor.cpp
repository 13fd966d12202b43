#include "koala/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace koala {

namespace {
Precision g_precision = Precision::f64;
}

Precision precision_mode() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

Tensor::Tensor(std::vector<std::size_t> d) : dims(std::move(d)) {
    for (std::size_t e : dims) {
        if (e == 0) throw InputError("tensor: zero extent in shape");
    }
    v.assign(numel(), 0.0);
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> d) { return Tensor(std::move(d)); }

Tensor Tensor::full(std::vector<std::size_t> d, double value) {
    Tensor t(std::move(d));
    for (double& x : t.v) x = quantize(value);
    return t;
}

Tensor Tensor::randn(std::vector<std::size_t> d, Rng& rng, double scale) {
    Tensor t(std::move(d));
    for (double& x : t.v) x = quantize(rng.gaussian() * scale);
    return t;
}

Tensor Tensor::identity(std::size_t in, std::size_t out) {
    Tensor t({in, out});
    const std::size_t k = in < out ? in : out;
    for (std::size_t i = 0; i < k; ++i) t.at(i, i) = 1.0;
    return t;
}

void Tensor::quantize_inplace() {
    if (precision_mode() == Precision::f32) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    }
}

bool Tensor::all_finite() const {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

std::uint64_t checksum(const Tensor& t) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto eat = [&h](const unsigned char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ull;
        }
    };
    for (std::size_t d : t.dims) {
        std::uint64_t le = d;
        eat(reinterpret_cast<const unsigned char*>(&le), 8);
    }
    for (double x : t.v) {
        const float f = static_cast<float>(x);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        eat(reinterpret_cast<const unsigned char*>(&bits), 4);
    }
    return h;
}

std::string checksum_hex(const Tensor& t) {
    static const char* hex = "0123456789abcdef";
    std::uint64_t h = checksum(t);
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = hex[h & 0xf];
        h >>= 4;
    }
    return s;
}

void save_koat(const Tensor& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("koat: cannot open for write: " + path);
    f.write("KOAT", 4);
    auto put_u32 = [&f](std::uint32_t x) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
        f.write(reinterpret_cast<const char*>(b), 4);
    };
    auto put_u64 = [&f](std::uint64_t x) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
        f.write(reinterpret_cast<const char*>(b), 8);
    };
    put_u32(1u);
    put_u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.dims) put_u64(d);
    for (double x : t.v) {
        const float fv = static_cast<float>(x);
        std::uint32_t bits;
        std::memcpy(&bits, &fv, 4);
        put_u32(bits);
    }
    if (!f) throw InputError("koat: write failed: " + path);
}

Tensor load_koat(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("koat: cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "KOAT", 4) != 0) throw InputError("koat: bad magic in " + path);
    auto get_u32 = [&f, &path]() {
        unsigned char b[4];
        f.read(reinterpret_cast<char*>(b), 4);
        if (!f) throw InputError("koat: truncated file: " + path);
        std::uint32_t x = 0;
        for (int i = 3; i >= 0; --i) x = (x << 8) | b[i];
        return x;
    };
    auto get_u64 = [&f, &path]() {
        unsigned char b[8];
        f.read(reinterpret_cast<char*>(b), 8);
        if (!f) throw InputError("koat: truncated file: " + path);
        std::uint64_t x = 0;
        for (int i = 7; i >= 0; --i) x = (x << 8) | b[i];
        return x;
    };
    const std::uint32_t version = get_u32();
    if (version != 1u) throw InputError("koat: unsupported version in " + path);
    const std::uint32_t rank = get_u32();
    std::vector<std::size_t> dims(rank);
    for (std::uint32_t i = 0; i < rank; ++i) dims[i] = static_cast<std::size_t>(get_u64());
    Tensor t(dims);
    for (double& x : t.v) {
        const std::uint32_t bits = get_u32();
        float fv;
        std::memcpy(&fv, &bits, 4);
        x = static_cast<double>(fv);
    }
    return t;
}

} // namespace koala
