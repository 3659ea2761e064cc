#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace otmel {

// Every failure raised by the library carries one of these kinds. The CLI
// maps kinds onto process exit codes (see exit_code()).
enum class ErrorKind {
  parse,
  dimension,
  non_finite,
  invalid_marginals,
  zero_norm,
  bad_magic,
  truncated,
  version,
  io,
  unresolved_id,
  dimension_drift,
  duplicate_id,
  missing_gold,
  empty_input,
  size_guard,
  config,
};

std::string_view to_string(ErrorKind kind);

// 2 parse, 3 dimension, 4 config/guard, 5 data resolution.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Dense row-major matrix of doubles. Value type; every algorithm in the
// library takes these by const reference and returns fresh ones.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  Matrix transposed() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Per-token or per-patch embeddings. Row 0 is the summary ([CLS]) row.
using FeatureMatrix = Matrix;

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// y = A x
std::vector<double> gemv(const Matrix& a, std::span<const double> x);
// y = A^T x
std::vector<double> gemv_t(const Matrix& a, std::span<const double> x);

bool all_finite(const Matrix& m);

// The eight places a correlation assignment is computed. The first four
// are cross-modal interactions inside one record; the last four match a
// mention against an entity within one modality.
enum class Site : std::uint8_t {
  mention_v2t,
  mention_t2v,
  entity_v2t,
  entity_t2v,
  m2e_text,
  m2e_visual,
  e2m_text,
  e2m_visual,
};

inline constexpr std::size_t kSiteCount = 8;
inline constexpr std::array<Site, kSiteCount> kAllSites = {
    Site::mention_v2t, Site::mention_t2v, Site::entity_v2t, Site::entity_t2v,
    Site::m2e_text,    Site::m2e_visual,  Site::e2m_text,   Site::e2m_visual};

std::string_view site_name(Site site);
Site parse_site(std::string_view name);

struct ProjectionSet {
  Matrix w_q;
  Matrix w_k;
  Matrix w_h;
  Site site = Site::mention_v2t;

  std::size_t dim() const noexcept { return w_q.rows(); }
  // Throws Error(dimension | non_finite) when the three maps are not
  // square d x d with identical d, or hold non-finite values.
  void check() const;
};

// One ProjectionSet per Site.
class ProjectionTable {
 public:
  ProjectionTable() = default;
  explicit ProjectionTable(std::array<ProjectionSet, kSiteCount> sets);

  static ProjectionTable identity(std::size_t d);
  // Random orthogonal maps (QR of a Gaussian matrix), deterministic in seed.
  static ProjectionTable random_orthogonal(std::size_t d, std::uint64_t seed);

  const ProjectionSet& at(Site site) const { return sets_[static_cast<std::size_t>(site)]; }
  ProjectionSet& at(Site site) { return sets_[static_cast<std::size_t>(site)]; }
  std::size_t dim() const noexcept { return sets_[0].dim(); }

  bool operator==(const ProjectionTable& other) const;

 private:
  std::array<ProjectionSet, kSiteCount> sets_;
};

struct MentionRecord {
  std::string id;
  FeatureMatrix text;
  FeatureMatrix visual;
  std::optional<std::string> gold_entity;
};

struct EntityRecord {
  std::string id;
  FeatureMatrix text;
  FeatureMatrix visual;
};

enum class FindingKind { empty_matrix, dimension_mismatch, non_finite };

struct Finding {
  FindingKind kind;
  std::string message;
};

std::vector<Finding> validate_record(const MentionRecord& r);
std::vector<Finding> validate_record(const EntityRecord& r);

// Scores of one mention-entity pair. `components` flags which of s_f/s_t/s_v
// entered s_o; all three unless an ablation removed some.
struct MatchScores {
  static constexpr unsigned kFused = 1u;
  static constexpr unsigned kText = 2u;
  static constexpr unsigned kVisual = 4u;
  static constexpr unsigned kAll = kFused | kText | kVisual;

  double s_f = 0.0;
  double s_t = 0.0;
  double s_v = 0.0;
  double s_o = 0.0;
  unsigned components = kAll;

  // Mean of the active components.
  double recompute_overall() const;
  bool consistent(double tol = 1e-9) const;
};

}  // namespace otmel
