#pragma once

#include <cstdint>
#include <optional>
#include <vector>

// Shared+residual expert compression. Experts in a layer cluster around
// their mean, so each expert ships as a Top-k sparsified residual against
// a shared expert in a value-index wire format. Decode fuses the scatter
// and the add: shared plus sparse residual in one pass.

namespace hybridep::sr {

struct Matrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::int64_t r, std::int64_t c) : rows(r), cols(c), data(static_cast<std::size_t>(r * c)) {}

  float& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols + c)]; }
  float at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * cols + c)];
  }
  std::int64_t size() const { return rows * cols; }
};

// w_up is H x M, w_down is M x H.
struct ExpertWeights {
  Matrix w_up;
  Matrix w_down;

  std::int64_t total_elements() const { return w_up.size() + w_down.size(); }
  std::int64_t dense_bytes() const { return total_elements() * 4; }
};

using SharedExpert = ExpertWeights;

struct ResidualEntry {
  std::uint64_t index = 0;  // flat over w_up then w_down
  double value = 0;         // already quantized to the wire width
};

struct CompressedResidual {
  std::int64_t hidden_h = 0;  // shape tag: w_up is h x m, w_down is m x h
  std::int64_t inner_m = 0;
  std::uint32_t index_width_bits = 32;
  std::uint32_t value_width_bits = 32;
  std::vector<ResidualEntry> entries;  // strictly increasing indices

  std::int64_t k() const { return static_cast<std::int64_t>(entries.size()); }
  std::int64_t wire_bytes() const;
  std::vector<std::uint8_t> serialize() const;
  static CompressedResidual deserialize(const std::vector<std::uint8_t>& bytes);
};

inline constexpr std::int64_t kWireHeaderBytes = 28;

struct CompressionConfig {
  std::optional<double> ratio_CR;   // target dense/compressed ratio
  std::optional<std::int64_t> k;    // explicit entry budget, wins over ratio
  std::uint32_t index_width_bits = 32;
  std::uint32_t value_width_bits = 32;  // 32 or 64
  bool per_matrix_budget = false;       // split k across the two matrices

  std::int64_t resolve_k(std::int64_t total_elements, std::int64_t element_width_bytes) const;
};

SharedExpert init_shared(const std::vector<ExpertWeights>& experts);
SharedExpert update_shared(const std::vector<ExpertWeights>& experts);

CompressedResidual sr_encode(const ExpertWeights& expert, const SharedExpert& shared,
                             const CompressionConfig& config);
ExpertWeights sr_decode(const CompressedResidual& compressed, const SharedExpert& shared);

struct ErrorNorms {
  double max_abs = 0;
  double frobenius = 0;
};
ErrorNorms reconstruction_error(const ExpertWeights& original, const ExpertWeights& decoded);

double compression_ratio(const CompressedResidual& compressed, std::int64_t dense_bytes);

// Per-matrix ratio of pooled residual std to pooled original std; below 1
// means the population is redundant. Undefined on zero-variance input.
struct ConcentrationStat {
  bool defined = false;
  double w_up = 0;
  double w_down = 0;
};
ConcentrationStat residual_concentration(const std::vector<ExpertWeights>& experts);

}  // namespace hybridep::sr
