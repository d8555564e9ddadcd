// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ego/attention.hpp"
#include "ego/error.hpp"
#include "ego/matrix.hpp"

namespace ego {

// Percentage of the image area covered by the main subject, in [0, 100].
struct SizeEstimate {
  double alpha = 0.0;

  static SizeEstimate clamped(double value) {
    if (!std::isfinite(value)) return {0.0};
    return {std::clamp(value, 0.0, 100.0)};
  }
};

// Reads the first number in a size-estimation reply. Out-of-range values are
// clamped; a reply without a number reads as 0.
inline SizeEstimate parse_size_reply(std::string_view reply) {
  for (std::size_t i = 0; i < reply.size(); ++i) {
    const char c = reply[i];
    const bool digit = c >= '0' && c <= '9';
    const bool lead_dot = c == '.' && i + 1 < reply.size() && reply[i + 1] >= '0' && reply[i + 1] <= '9';
    if (!digit && !lead_dot) continue;
    std::size_t start = i;
    if (start > 0 && reply[start - 1] == '-') --start;
    std::size_t end = i;
    bool seen_dot = false;
    while (end < reply.size()) {
      const char d = reply[end];
      if (d >= '0' && d <= '9') {
        ++end;
      } else if (d == '.' && !seen_dot && end + 1 < reply.size() && reply[end + 1] >= '0' && reply[end + 1] <= '9') {
        seen_dot = true;
        ++end;
      } else {
        break;
      }
    }
    return SizeEstimate::clamped(std::stod(std::string(reply.substr(start, end - start))));
  }
  return {0.0};
}

// Per-view token cap K, either absolute or as a percentage of N_r.
struct MemoryBudget {
  std::size_t k_max = 50;
  std::optional<double> fraction_percent;

  static MemoryBudget absolute(std::size_t k) { return {k, std::nullopt}; }
  static MemoryBudget fraction(double percent) { return {1, percent}; }

  // K for an image with n_r visual tokens; never below 1.
  std::size_t cap(std::size_t n_r) const {
    if (fraction_percent) {
      const auto k = static_cast<std::size_t>(std::floor(*fraction_percent * static_cast<double>(n_r) / 100.0));
      return std::max<std::size_t>(1, k);
    }
    detail::require(k_max >= 1, ErrorCode::kInvalidArgument, "k_max must be >= 1");
    return k_max;
  }
};

// K_c = min(K, floor(alpha * N_r / 100)). A zero result means the subject
// size is unknown; the view then keeps min(K, N_r) tokens.
inline std::size_t dynamic_k(SizeEstimate alpha, std::size_t n_r, const MemoryBudget& budget) {
  detail::require(n_r >= 1, ErrorCode::kInvalidArgument, "n_r must be >= 1");
  const std::size_t cap = budget.cap(n_r);
  const auto by_area =
      static_cast<std::size_t>(std::floor(std::clamp(alpha.alpha, 0.0, 100.0) * static_cast<double>(n_r) / 100.0));
  const std::size_t k = std::min(cap, by_area);
  return k > 0 ? k : std::min(cap, n_r);
}

// Comma/newline separated keyword phrases of a keyword-generation reply.
inline std::vector<std::string> split_keywords(std::string_view reply) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    const auto b = current.find_first_not_of(" \t\r.;:\"'");
    const auto e = current.find_last_not_of(" \t\r.;:\"'");
    if (b != std::string::npos) out.push_back(current.substr(b, e - b + 1));
    current.clear();
  };
  for (char c : reply) {
    if (c == ',' || c == '\n') {
      flush();
    } else {
      current.push_back(c);
    }
  }
  flush();
  return out;
}

// Where one view's rows came from.
struct ViewProvenance {
  std::string view_id;
  std::size_t k_c = 0;
  double alpha = 0.0;
  std::vector<std::size_t> indices;
  std::vector<std::string> keywords;

  friend bool operator==(const ViewProvenance&, const ViewProvenance&) = default;
};

struct ConceptMemory {
  std::string name;
  TokenMatrix tokens;
  std::vector<ViewProvenance> views;
  std::uint64_t backend_fingerprint = 0;

  std::size_t dim() const noexcept { return tokens.dim(); }

  friend bool operator==(const ConceptMemory&, const ConceptMemory&) = default;
};

// Input for one view of build_concept_memory.
struct ViewSelection {
  std::string view_id;
  SelectionResult selection;
  SizeEstimate alpha;
  std::vector<std::string> keywords;
};

// Stacks each view's selected rows, in input order.
inline ConceptMemory build_concept_memory(std::string name, std::span<const ViewSelection> views,
                                          std::uint64_t backend_fingerprint) {
  detail::require(!name.empty(), ErrorCode::kInvalidArgument, "concept name must not be empty");
  detail::require(!views.empty(), ErrorCode::kInvalidArgument, "a concept needs at least one view");
  const std::size_t dim = views.front().selection.tokens.dim();
  ConceptMemory mem;
  mem.name = std::move(name);
  mem.backend_fingerprint = backend_fingerprint;
  mem.tokens = TokenMatrix(0, dim);
  for (const auto& v : views) {
    detail::require(v.selection.tokens.dim() == dim, ErrorCode::kInvalidArgument,
                    "views have different embedding dimensions");
    detail::require(std::is_sorted(v.selection.indices.begin(), v.selection.indices.end()) &&
                        std::adjacent_find(v.selection.indices.begin(), v.selection.indices.end()) ==
                            v.selection.indices.end(),
                    ErrorCode::kContractViolation, "kept indices must be strictly ascending");
    detail::require(v.selection.indices.size() == v.selection.tokens.rows(), ErrorCode::kContractViolation,
                    "selection index count does not match its rows");
    mem.tokens.append(v.selection.tokens);
    mem.views.push_back({v.view_id, v.selection.indices.size(), v.alpha.alpha, v.selection.indices, v.keywords});
  }
  return mem;
}

inline constexpr std::uint32_t kLibraryFormatMajor = 1;
inline constexpr std::uint32_t kLibraryFormatMinor = 0;
inline constexpr std::uint32_t kLibraryFormatVersion = (kLibraryFormatMajor << 16) | kLibraryFormatMinor;

// Ordered set of concept memories with unique names, one shared embedding
// space. A const library is safe to read from many threads; mutation needs
// exclusive access.
class ConceptLibrary {
 public:
  const std::vector<ConceptMemory>& concepts() const noexcept { return concepts_; }
  std::size_t size() const noexcept { return concepts_.size(); }
  bool empty() const noexcept { return concepts_.empty(); }
  std::uint32_t format_version() const noexcept { return format_version_; }
  void set_format_version(std::uint32_t v) { format_version_ = v; }

  const ConceptMemory* find(std::string_view name) const {
    for (const auto& c : concepts_) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }

  // Throws kConflict on a duplicate name and kBackendMismatch when the
  // memory lives in another embedding space.
  void add(ConceptMemory memory) {
    detail::require(!memory.name.empty(), ErrorCode::kInvalidArgument, "concept name must not be empty");
    if (find(memory.name) != nullptr) throw Error(ErrorCode::kConflict, "concept '" + memory.name + "' already exists");
    check_compatible(memory.backend_fingerprint, memory.dim());
    concepts_.push_back(std::move(memory));
  }

  bool remove(std::string_view name) {
    auto it = std::find_if(concepts_.begin(), concepts_.end(), [&](const auto& c) { return c.name == name; });
    if (it == concepts_.end()) return false;
    concepts_.erase(it);
    return true;
  }

  void check_compatible(std::uint64_t fingerprint, std::size_t dim) const {
    if (concepts_.empty()) return;
    if (concepts_.front().backend_fingerprint != fingerprint) {
      throw Error(ErrorCode::kBackendMismatch, "library was built with a different backend");
    }
    if (concepts_.front().dim() != dim) throw Error(ErrorCode::kBackendMismatch, "library embedding dim differs");
  }

  friend bool operator==(const ConceptLibrary&, const ConceptLibrary&) = default;

 private:
  std::vector<ConceptMemory> concepts_;
  std::uint32_t format_version_ = kLibraryFormatVersion;
};

// Mean of the rows, in double.
inline std::vector<double> mean_pool(const TokenMatrix& tokens) {
  std::vector<double> out(tokens.dim(), 0.0);
  for (std::size_t r = 0; r < tokens.rows(); ++r) {
    auto row = tokens.row(r);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += row[d];
  }
  if (tokens.rows() > 0) {
    for (auto& v : out) v /= static_cast<double>(tokens.rows());
  }
  return out;
}

// Cosine similarity; -1 when either vector has zero norm.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return -1.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct ScoredConcept {
  std::size_t index = 0;  // position in the library
  std::string name;
  double similarity = 0.0;
};

// Ranks concepts by cosine similarity between the mean-pooled query and each
// mean-pooled memory; keeps the top m (ties: lexicographically smaller name).
inline std::vector<ScoredConcept> filter_concepts_by_similarity(const ConceptLibrary& library,
                                                                const TokenMatrix& query, std::size_t m) {
  detail::require(m >= 1, ErrorCode::kInvalidArgument, "m must be >= 1");
  detail::require(!query.empty(), ErrorCode::kInvalidArgument, "query must not be empty");
  const auto q = mean_pool(query);
  std::vector<ScoredConcept> scored;
  for (std::size_t i = 0; i < library.size(); ++i) {
    const auto& c = library.concepts()[i];
    detail::require(c.dim() == query.dim(), ErrorCode::kBackendMismatch, "query dim differs from library");
    const auto pooled = mean_pool(c.tokens);
    scored.push_back({i, c.name, cosine_similarity(q, pooled)});
  }
  std::sort(scored.begin(), scored.end(), [](const ScoredConcept& a, const ScoredConcept& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.name < b.name;
  });
  if (scored.size() > m) scored.resize(m);
  return scored;
}

}  // namespace ego
