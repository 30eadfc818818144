#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace motiondiff {

// Dense row-major tensor of doubles. Everything in the pipeline (images,
// latents, guidance maps, network activations) uses this one type.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double value);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double& at(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double at(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double& at(int i, int j, int k, int l) {
        return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double at(int i, int j, int k, int l) const {
        return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    // Same data, new shape; element count must match.
    Tensor reshaped(std::vector<int> shape) const;

    void fill(double v);
    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);

    double min() const;
    double max() const;
    double sum() const;
    double mean() const { return numel() ? sum() / static_cast<double>(numel()) : 0.0; }
    bool all_finite() const;

    std::string shape_str() const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

size_t shape_numel(const std::vector<int>& shape);

// xoshiro256++ with splitmix64 seeding. Self-contained so that seeded runs are
// bit-reproducible across compilers and standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed);

    uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Inclusive bounds.
    int64_t uniform_int(int64_t lo, int64_t hi);
    // Standard normal via Box-Muller.
    double normal();

    void fill_normal(Tensor& t);
    void fill_uniform(Tensor& t, double lo = 0.0, double hi = 1.0);

    std::string serialize() const;
    static Rng deserialize(const std::string& text);

private:
    uint64_t s_[4] = {1, 2, 3, 4};
    bool has_cached_ = false;
    double cached_ = 0.0;
};

// Stable stream derivation so sub-tasks (per-clip seeds, per-sample seeds, ...)
// get independent generators from one master seed.
uint64_t derive_seed(uint64_t master, uint64_t stream);

// FNV-1a over bytes; used for config hashes and content fingerprints.
uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull);
uint64_t fnv1a(const std::string& s);

}  // namespace motiondiff
