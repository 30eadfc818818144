#include "motiondiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace motiondiff {

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= static_cast<size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size()) throw std::invalid_argument("from_data: shape/data size mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_numel(shape) != numel()) {
        throw std::invalid_argument("reshape: element count mismatch (" + shape_str() + ")");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("+=: shape mismatch");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("-=: shape mismatch");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

double Tensor::min() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : data_) m = std::min(m, v);
    return m;
}

double Tensor::max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : data_) m = std::max(m, v);
    return m;
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
}

namespace {

uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

void Rng::reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& s : s_) s = splitmix64(x);
    has_cached_ = false;
    cached_ = 0.0;
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw std::invalid_argument("uniform_int: lo > hi");
    const uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
    // Multiply-shift bounded draw (Lemire), rejection-free and deterministic.
    const __uint128_t m = static_cast<__uint128_t>(next_u64()) * range;
    return lo + static_cast<int64_t>(static_cast<uint64_t>(m >> 64));
}

double Rng::normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
}

void Rng::fill_normal(Tensor& t) {
    for (size_t i = 0; i < t.numel(); ++i) t[i] = normal();
}

void Rng::fill_uniform(Tensor& t, double lo, double hi) {
    for (size_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << s_[0] << " " << s_[1] << " " << s_[2] << " " << s_[3] << " " << (has_cached_ ? 1 : 0);
    if (has_cached_) {
        os << " ";
        os.precision(17);
        // Exact round-trip via bit pattern.
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(cached_));
        std::memcpy(&bits, &cached_, sizeof(bits));
        os << bits;
    }
    return os.str();
}

Rng Rng::deserialize(const std::string& text) {
    Rng r;
    std::istringstream is(text);
    int cached_flag = 0;
    is >> r.s_[0] >> r.s_[1] >> r.s_[2] >> r.s_[3] >> cached_flag;
    if (!is) throw std::invalid_argument("Rng::deserialize: malformed state");
    r.has_cached_ = cached_flag != 0;
    if (r.has_cached_) {
        uint64_t bits = 0;
        is >> bits;
        if (!is) throw std::invalid_argument("Rng::deserialize: malformed cached value");
        std::memcpy(&r.cached_, &bits, sizeof(bits));
    }
    return r;
}

uint64_t derive_seed(uint64_t master, uint64_t stream) {
    uint64_t x = master ^ (0x9E3779B97F4A7C15ull * (stream + 0x100001ull));
    splitmix64(x);
    return splitmix64(x);
}

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace motiondiff
