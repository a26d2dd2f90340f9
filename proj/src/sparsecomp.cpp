#include "hybridep/sparsecomp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace hybridep::sr {

namespace {

void check_shapes(const ExpertWeights& a, const ExpertWeights& b) {
  if (a.w_up.rows != b.w_up.rows || a.w_up.cols != b.w_up.cols ||
      a.w_down.rows != b.w_down.rows || a.w_down.cols != b.w_down.cols) {
    throw std::invalid_argument("expert shapes do not match");
  }
}

void check_expert(const ExpertWeights& e) {
  if (e.w_up.rows <= 0 || e.w_up.cols <= 0) throw std::invalid_argument("empty expert matrix");
  if (e.w_down.rows != e.w_up.cols || e.w_down.cols != e.w_up.rows) {
    throw std::invalid_argument("w_down must be the transpose shape of w_up");
  }
}

double quantize_value(double v, std::uint32_t value_width_bits) {
  return value_width_bits == 32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::vector<std::uint8_t>& in, std::size_t& pos, int bytes) {
  if (pos + static_cast<std::size_t>(bytes) > in.size()) {
    throw std::runtime_error("compressed residual truncated");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return v;
}

// Residuals selected jointly over both flattened matrices; ties on equal
// magnitude go to the lower flat index so output is byte-stable.
void select_top_k(const std::vector<double>& residual, std::uint64_t base, std::int64_t k,
                  std::vector<std::uint64_t>& picked) {
  std::vector<std::uint64_t> idx(residual.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::uint64_t>(i);
  auto better = [&](std::uint64_t a, std::uint64_t b) {
    const double fa = std::fabs(residual[a]);
    const double fb = std::fabs(residual[b]);
    if (fa != fb) return fa > fb;
    return a < b;
  };
  const std::size_t kk = static_cast<std::size_t>(k);
  if (kk < idx.size()) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(), better);
    idx.resize(kk);
  }
  for (std::uint64_t i : idx) picked.push_back(base + i);
}

}  // namespace

std::int64_t CompressedResidual::wire_bytes() const {
  return kWireHeaderBytes +
         k() * static_cast<std::int64_t>((index_width_bits + value_width_bits) / 8);
}

std::vector<std::uint8_t> CompressedResidual::serialize() const {
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(wire_bytes()));
  out.push_back('S');
  out.push_back('R');
  out.push_back('C');
  out.push_back('1');
  put_le(out, static_cast<std::uint64_t>(hidden_h), 4);
  put_le(out, static_cast<std::uint64_t>(inner_m), 4);
  put_le(out, static_cast<std::uint64_t>(entries.size()), 8);
  put_le(out, index_width_bits, 4);
  put_le(out, value_width_bits, 4);
  for (const auto& e : entries) {
    put_le(out, e.index, static_cast<int>(index_width_bits / 8));
    if (value_width_bits == 32) {
      const float f = static_cast<float>(e.value);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_le(out, bits, 4);
    } else {
      std::uint64_t bits;
      std::memcpy(&bits, &e.value, 8);
      put_le(out, bits, 8);
    }
  }
  return out;
}

CompressedResidual CompressedResidual::deserialize(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  if (bytes.size() < 4 || bytes[0] != 'S' || bytes[1] != 'R' || bytes[2] != 'C' || bytes[3] != '1') {
    throw std::runtime_error("bad residual magic");
  }
  pos = 4;
  CompressedResidual c;
  c.hidden_h = static_cast<std::int64_t>(get_le(bytes, pos, 4));
  c.inner_m = static_cast<std::int64_t>(get_le(bytes, pos, 4));
  const std::uint64_t k = get_le(bytes, pos, 8);
  c.index_width_bits = static_cast<std::uint32_t>(get_le(bytes, pos, 4));
  c.value_width_bits = static_cast<std::uint32_t>(get_le(bytes, pos, 4));
  if ((c.index_width_bits != 32 && c.index_width_bits != 64) ||
      (c.value_width_bits != 32 && c.value_width_bits != 64)) {
    throw std::runtime_error("unsupported residual widths");
  }
  c.entries.reserve(k);
  for (std::uint64_t i = 0; i < k; ++i) {
    ResidualEntry e;
    e.index = get_le(bytes, pos, static_cast<int>(c.index_width_bits / 8));
    if (c.value_width_bits == 32) {
      const std::uint32_t bits = static_cast<std::uint32_t>(get_le(bytes, pos, 4));
      float f;
      std::memcpy(&f, &bits, 4);
      e.value = static_cast<double>(f);
    } else {
      const std::uint64_t bits = get_le(bytes, pos, 8);
      std::memcpy(&e.value, &bits, 8);
    }
    c.entries.push_back(e);
  }
  return c;
}

std::int64_t CompressionConfig::resolve_k(std::int64_t total_elements,
                                          std::int64_t element_width_bytes) const {
  if (k) {
    if (*k < 0) throw std::invalid_argument("k must be >= 0");
    return std::min(*k, total_elements);
  }
  if (!ratio_CR) throw std::invalid_argument("compression config needs a ratio or a k");
  if (*ratio_CR < 1.0) throw std::invalid_argument("compression ratio must be >= 1");
  const double entry_bytes = static_cast<double>(index_width_bits + value_width_bits) / 8.0;
  const double kd = std::floor(static_cast<double>(total_elements * element_width_bytes) /
                               (*ratio_CR * entry_bytes));
  return std::min<std::int64_t>(static_cast<std::int64_t>(kd), total_elements);
}

SharedExpert init_shared(const std::vector<ExpertWeights>& experts) {
  if (experts.empty()) throw std::invalid_argument("cannot average zero experts");
  check_expert(experts.front());
  for (const auto& e : experts) check_shapes(experts.front(), e);

  SharedExpert shared = experts.front();
  const std::int64_t up = shared.w_up.size();
  const std::int64_t total = shared.total_elements();
  std::vector<double> acc(static_cast<std::size_t>(total), 0.0);
  for (const auto& e : experts) {
    for (std::int64_t i = 0; i < up; ++i) acc[static_cast<std::size_t>(i)] += e.w_up.data[static_cast<std::size_t>(i)];
    for (std::int64_t i = up; i < total; ++i) acc[static_cast<std::size_t>(i)] += e.w_down.data[static_cast<std::size_t>(i - up)];
  }
  const double inv = 1.0 / static_cast<double>(experts.size());
  for (std::int64_t i = 0; i < up; ++i) {
    shared.w_up.data[static_cast<std::size_t>(i)] = static_cast<float>(acc[static_cast<std::size_t>(i)] * inv);
  }
  for (std::int64_t i = up; i < total; ++i) {
    shared.w_down.data[static_cast<std::size_t>(i - up)] = static_cast<float>(acc[static_cast<std::size_t>(i)] * inv);
  }
  return shared;
}

SharedExpert update_shared(const std::vector<ExpertWeights>& experts) {
  // Single-process stand-in for the asynchronous All-Reduce refresh.
  return init_shared(experts);
}

CompressedResidual sr_encode(const ExpertWeights& expert, const SharedExpert& shared,
                             const CompressionConfig& config) {
  check_expert(expert);
  check_shapes(expert, shared);
  if ((config.index_width_bits != 32 && config.index_width_bits != 64) ||
      (config.value_width_bits != 32 && config.value_width_bits != 64)) {
    throw std::invalid_argument("residual widths must be 32 or 64 bits");
  }

  const std::int64_t up = expert.w_up.size();
  const std::int64_t total = expert.total_elements();
  std::vector<double> residual(static_cast<std::size_t>(total));
  for (std::int64_t i = 0; i < up; ++i) {
    residual[static_cast<std::size_t>(i)] =
        static_cast<double>(expert.w_up.data[static_cast<std::size_t>(i)]) -
        static_cast<double>(shared.w_up.data[static_cast<std::size_t>(i)]);
  }
  for (std::int64_t i = up; i < total; ++i) {
    residual[static_cast<std::size_t>(i)] =
        static_cast<double>(expert.w_down.data[static_cast<std::size_t>(i - up)]) -
        static_cast<double>(shared.w_down.data[static_cast<std::size_t>(i - up)]);
  }

  const std::int64_t k = config.resolve_k(total, 4);
  std::vector<std::uint64_t> picked;
  picked.reserve(static_cast<std::size_t>(k));
  if (config.per_matrix_budget) {
    const std::int64_t k_up = std::min(up, k * up / total);
    const std::int64_t k_down = std::min(total - up, k - k_up);
    std::vector<double> part(residual.begin(), residual.begin() + static_cast<std::ptrdiff_t>(up));
    select_top_k(part, 0, k_up, picked);
    part.assign(residual.begin() + static_cast<std::ptrdiff_t>(up), residual.end());
    select_top_k(part, static_cast<std::uint64_t>(up), k_down, picked);
  } else {
    select_top_k(residual, 0, k, picked);
  }
  std::sort(picked.begin(), picked.end());

  CompressedResidual out;
  out.hidden_h = expert.w_up.rows;
  out.inner_m = expert.w_up.cols;
  out.index_width_bits = config.index_width_bits;
  out.value_width_bits = config.value_width_bits;
  out.entries.reserve(picked.size());
  for (std::uint64_t i : picked) {
    out.entries.push_back({i, quantize_value(residual[static_cast<std::size_t>(i)],
                                             config.value_width_bits)});
  }
  return out;
}

ExpertWeights sr_decode(const CompressedResidual& compressed, const SharedExpert& shared) {
  check_expert(shared);
  if (compressed.hidden_h != shared.w_up.rows || compressed.inner_m != shared.w_up.cols) {
    throw std::invalid_argument("residual shape tag does not match the shared expert");
  }
  ExpertWeights out = shared;
  const std::uint64_t up = static_cast<std::uint64_t>(shared.w_up.size());
  const std::uint64_t total = static_cast<std::uint64_t>(shared.total_elements());
  std::uint64_t prev_plus_one = 0;
  for (const auto& e : compressed.entries) {
    if (e.index >= total) throw std::runtime_error("corrupt residual: index out of bounds");
    if (e.index + 1 <= prev_plus_one) {
      throw std::runtime_error("corrupt residual: indices not strictly increasing");
    }
    prev_plus_one = e.index + 1;
    float* slot = e.index < up ? &out.w_up.data[static_cast<std::size_t>(e.index)]
                               : &out.w_down.data[static_cast<std::size_t>(e.index - up)];
    *slot = static_cast<float>(static_cast<double>(*slot) + e.value);
  }
  return out;
}

ErrorNorms reconstruction_error(const ExpertWeights& original, const ExpertWeights& decoded) {
  check_shapes(original, decoded);
  ErrorNorms n;
  double sq = 0;
  auto visit = [&](const Matrix& a, const Matrix& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
      n.max_abs = std::max(n.max_abs, std::fabs(d));
      sq += d * d;
    }
  };
  visit(original.w_up, decoded.w_up);
  visit(original.w_down, decoded.w_down);
  n.frobenius = std::sqrt(sq);
  return n;
}

double compression_ratio(const CompressedResidual& compressed, std::int64_t dense_bytes) {
  if (dense_bytes <= 0) throw std::invalid_argument("dense size must be positive");
  return static_cast<double>(dense_bytes) / static_cast<double>(compressed.wire_bytes());
}

ConcentrationStat residual_concentration(const std::vector<ExpertWeights>& experts) {
  if (experts.size() < 2) throw std::invalid_argument("concentration needs at least 2 experts");
  const SharedExpert shared = init_shared(experts);

  auto pooled_std = [&](bool use_up, bool residual) {
    double sum = 0, sum2 = 0;
    std::int64_t n = 0;
    for (const auto& e : experts) {
      const Matrix& m = use_up ? e.w_up : e.w_down;
      const Matrix& s = use_up ? shared.w_up : shared.w_down;
      for (std::size_t i = 0; i < m.data.size(); ++i) {
        const double v = residual ? static_cast<double>(m.data[i]) - static_cast<double>(s.data[i])
                                  : static_cast<double>(m.data[i]);
        sum += v;
        sum2 += v * v;
        ++n;
      }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
    return std::sqrt(var);
  };

  ConcentrationStat stat;
  const double up_orig = pooled_std(true, false);
  const double down_orig = pooled_std(false, false);
  if (up_orig == 0 || down_orig == 0) return stat;  // undefined
  stat.defined = true;
  stat.w_up = pooled_std(true, true) / up_orig;
  stat.w_down = pooled_std(false, true) / down_orig;
  return stat;
}

}  // namespace hybridep::sr
