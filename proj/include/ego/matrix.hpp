// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "ego/error.hpp"

namespace ego {

// Row-major dense matrix. Used for attention maps and scratch buffers.
template <typename T>
class DenseMatrix {
 public:
  using value_type = T;

  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require(data_.size() == rows_ * cols_, ErrorCode::kContractViolation,
                    "matrix payload size does not match shape");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<const T> values() const noexcept { return data_; }
  std::span<T> values() noexcept { return data_; }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using AttentionMatrix = DenseMatrix<float>;

// Token embeddings: one row per token (visual patch or text token), `dim` columns.
// Entries are always finite and dim is at least 1.
class TokenMatrix {
 public:
  TokenMatrix() : dim_(1) {}
  TokenMatrix(std::size_t rows, std::size_t dim) : rows_(rows), dim_(dim), data_(rows * dim, 0.0f) {
    detail::require(dim >= 1, ErrorCode::kInvalidArgument, "token dim must be >= 1");
  }
  TokenMatrix(std::size_t rows, std::size_t dim, std::vector<float> data)
      : rows_(rows), dim_(dim), data_(std::move(data)) {
    detail::require(dim >= 1, ErrorCode::kInvalidArgument, "token dim must be >= 1");
    detail::require(data_.size() == rows_ * dim_, ErrorCode::kContractViolation,
                    "token payload size does not match shape");
    detail::require(std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); }),
                    ErrorCode::kInvalidArgument, "token matrix contains non-finite values");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return rows_ == 0; }

  float operator()(std::size_t r, std::size_t c) const { return data_[r * dim_ + c]; }

  // Writes must keep values finite; set() checks.
  void set(std::size_t r, std::size_t c, float v) {
    detail::require(std::isfinite(v), ErrorCode::kInvalidArgument, "non-finite token value");
    data_[r * dim_ + c] = v;
  }

  std::span<const float> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }
  std::span<const float> values() const noexcept { return data_; }

  TokenMatrix gather(std::span<const std::size_t> indices) const {
    std::vector<float> out;
    out.reserve(indices.size() * dim_);
    for (std::size_t idx : indices) {
      detail::require(idx < rows_, ErrorCode::kContractViolation, "gather index out of range");
      auto r = row(idx);
      out.insert(out.end(), r.begin(), r.end());
    }
    return TokenMatrix(indices.size(), dim_, std::move(out));
  }

  void append(const TokenMatrix& other) {
    detail::require(other.dim_ == dim_, ErrorCode::kInvalidArgument, "token dim mismatch on append");
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
    rows_ += other.rows_;
  }

  friend bool operator==(const TokenMatrix&, const TokenMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 1;
  std::vector<float> data_;
};

}  // namespace ego
