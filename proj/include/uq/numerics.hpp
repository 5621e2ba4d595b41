#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace uq {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix column(std::span<const double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    const std::vector<double>& storage() const { return data_; }

    std::vector<double> col(std::size_t c) const;

    // Rows at the given indices, in order.
    Matrix gather_rows(std::span<const std::size_t> indices) const;

    void fill(double v);
    bool all_finite() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix hconcat(const Matrix& left, const Matrix& right);
Matrix vconcat(const Matrix& top, const Matrix& bottom);

// Natural log of the gamma function for z > 0 (Lanczos, g = 7, 9 terms).
double ln_gamma(double z);

// Digamma function psi(z) = d/dz ln Gamma(z) for z > 0.
double digamma(double z);

// Regularized lower incomplete gamma P(s, x) = gamma(s, x) / Gamma(s).
// Series expansion below x < s + 1, Lentz continued fraction above.
double reg_lower_incomplete_gamma(double s, double x);

double std_normal_cdf(double z);

/// Seeded random stream.
///
/// Engine is std::mt19937_64. Sub-streams are derived with split(label):
/// the child seed is splitmix64(seed ^ fnv1a64(label)), so "data", "init" and
/// "dropout" streams of the same parent never share state and never depend on
/// how many draws the parent has already made.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }
    Rng split(std::string_view label) const;
    Rng split(std::string_view label, std::uint64_t index) const;

    std::uint64_t next_u64() { return engine_(); }
    double uniform();
    double uniform(double lo, double hi);
    double normal();
    double normal(double mean, double stddev);
    bool bernoulli(double p);
    std::vector<std::size_t> permutation(std::size_t n);

    std::mt19937_64& engine() { return engine_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

} // namespace uq
