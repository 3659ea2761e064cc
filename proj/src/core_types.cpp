#include "otmel/core_types.hpp"

#include <cmath>
#include <sstream>

#include "otmel/kernels.hpp"
#include "otmel/rng.hpp"

namespace otmel {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::invalid_marginals: return "invalid_marginals";
    case ErrorKind::zero_norm: return "zero_norm";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::version: return "version";
    case ErrorKind::io: return "io";
    case ErrorKind::unresolved_id: return "unresolved_id";
    case ErrorKind::dimension_drift: return "dimension_drift";
    case ErrorKind::duplicate_id: return "duplicate_id";
    case ErrorKind::missing_gold: return "missing_gold";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::size_guard: return "size_guard";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse:
    case ErrorKind::non_finite:
    case ErrorKind::bad_magic:
    case ErrorKind::truncated:
    case ErrorKind::version:
      return 2;
    case ErrorKind::dimension:
    case ErrorKind::dimension_drift:
    case ErrorKind::zero_norm:
      return 3;
    case ErrorKind::invalid_marginals:
    case ErrorKind::size_guard:
    case ErrorKind::config:
      return 4;
    case ErrorKind::io:
    case ErrorKind::unresolved_id:
    case ErrorKind::duplicate_id:
    case ErrorKind::missing_gold:
    case ErrorKind::empty_input:
      return 5;
  }
  return 1;
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw Error(ErrorKind::dimension, "matrix payload does not match its shape");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols())
      throw Error(ErrorKind::dimension, "ragged rows in matrix literal");
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream os;
    os << "matmul: " << a.rows() << "x" << a.cols() << " * " << b.rows() << "x" << b.cols();
    throw Error(ErrorKind::dimension, os.str());
  }
  const auto& k = kernels::active();
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double aip = a(i, p);
      if (aip != 0.0) k.axpy(aip, b.row(p).data(), out.data(), out.size());
    }
  }
  return c;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    std::ostringstream os;
    os << "matmul_bt: " << a.rows() << "x" << a.cols() << " * (" << b.rows() << "x" << b.cols()
       << ")^T";
    throw Error(ErrorKind::dimension, os.str());
  }
  const auto& k = kernels::active();
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      c(i, j) = k.dot(a.row(i).data(), b.row(j).data(), a.cols());
  return c;
}

std::vector<double> gemv(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw Error(ErrorKind::dimension, "gemv: length mismatch");
  const auto& k = kernels::active();
  std::vector<double> y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = k.dot(a.row(i).data(), x.data(), x.size());
  return y;
}

std::vector<double> gemv_t(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw Error(ErrorKind::dimension, "gemv_t: length mismatch");
  const auto& k = kernels::active();
  std::vector<double> y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) k.axpy(x[i], a.row(i).data(), y.data(), y.size());
  return y;
}

bool all_finite(const Matrix& m) {
  for (double v : m.values())
    if (!std::isfinite(v)) return false;
  return true;
}

std::string_view site_name(Site site) {
  switch (site) {
    case Site::mention_v2t: return "mention_v2t";
    case Site::mention_t2v: return "mention_t2v";
    case Site::entity_v2t: return "entity_v2t";
    case Site::entity_t2v: return "entity_t2v";
    case Site::m2e_text: return "m2e_text";
    case Site::m2e_visual: return "m2e_visual";
    case Site::e2m_text: return "e2m_text";
    case Site::e2m_visual: return "e2m_visual";
  }
  return "unknown";
}

Site parse_site(std::string_view name) {
  for (Site s : kAllSites)
    if (site_name(s) == name) return s;
  throw Error(ErrorKind::parse, "unknown assignment site '" + std::string(name) + "'");
}

void ProjectionSet::check() const {
  const std::size_t d = w_q.rows();
  for (const Matrix* m : {&w_q, &w_k, &w_h}) {
    if (m->rows() != d || m->cols() != d || d == 0)
      throw Error(ErrorKind::dimension, "projections for site " + std::string(site_name(site)) +
                                            " are not square with a shared dimension");
    if (!all_finite(*m))
      throw Error(ErrorKind::non_finite,
                  "projections for site " + std::string(site_name(site)) + " hold non-finite values");
  }
}

ProjectionTable::ProjectionTable(std::array<ProjectionSet, kSiteCount> sets)
    : sets_(std::move(sets)) {
  const std::size_t d = sets_[0].dim();
  for (std::size_t i = 0; i < kSiteCount; ++i) {
    sets_[i].site = kAllSites[i];
    sets_[i].check();
    if (sets_[i].dim() != d)
      throw Error(ErrorKind::dimension, "projection table mixes dimensions");
  }
}

ProjectionTable ProjectionTable::identity(std::size_t d) {
  std::array<ProjectionSet, kSiteCount> sets;
  for (std::size_t i = 0; i < kSiteCount; ++i)
    sets[i] = ProjectionSet{Matrix::identity(d), Matrix::identity(d), Matrix::identity(d),
                            kAllSites[i]};
  return ProjectionTable(std::move(sets));
}

namespace {

// Modified Gram-Schmidt on the rows of a Gaussian matrix.
Matrix random_orthogonal_matrix(std::size_t d, Rng& rng) {
  Matrix m(d, d);
  for (double& v : m.values()) v = rng.normal();
  for (std::size_t i = 0; i < d; ++i) {
    auto ri = m.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      auto rj = m.row(j);
      const double p = kernels::dot(ri, rj);
      kernels::axpy(-p, rj, ri);
    }
    const double n = std::sqrt(kernels::dot(ri, ri));
    for (double& v : ri) v /= n;
  }
  return m;
}

}  // namespace

ProjectionTable ProjectionTable::random_orthogonal(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::array<ProjectionSet, kSiteCount> sets;
  for (std::size_t i = 0; i < kSiteCount; ++i) {
    sets[i].site = kAllSites[i];
    sets[i].w_q = random_orthogonal_matrix(d, rng);
    sets[i].w_k = random_orthogonal_matrix(d, rng);
    sets[i].w_h = random_orthogonal_matrix(d, rng);
  }
  return ProjectionTable(std::move(sets));
}

bool ProjectionTable::operator==(const ProjectionTable& other) const {
  for (std::size_t i = 0; i < kSiteCount; ++i) {
    const auto& a = sets_[i];
    const auto& b = other.sets_[i];
    if (!(a.w_q == b.w_q && a.w_k == b.w_k && a.w_h == b.w_h)) return false;
  }
  return true;
}

namespace {

void check_matrix(const Matrix& m, std::string_view label, std::vector<Finding>& out) {
  if (m.rows() == 0 || m.cols() == 0) {
    out.push_back({FindingKind::empty_matrix, std::string(label) + " matrix is empty"});
    return;
  }
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (!std::isfinite(m(i, j))) {
        std::ostringstream os;
        os << label << " matrix has a non-finite value at (" << i << "," << j << ")";
        out.push_back({FindingKind::non_finite, os.str()});
      }
}

std::vector<Finding> validate_pair(const std::string& id, const Matrix& text, const Matrix& visual) {
  std::vector<Finding> out;
  check_matrix(text, "text", out);
  check_matrix(visual, "visual", out);
  if (!text.empty() && !visual.empty() && text.cols() != visual.cols()) {
    std::ostringstream os;
    os << "record '" << id << "': text d=" << text.cols() << " but visual d=" << visual.cols();
    out.push_back({FindingKind::dimension_mismatch, os.str()});
  }
  return out;
}

}  // namespace

std::vector<Finding> validate_record(const MentionRecord& r) {
  return validate_pair(r.id, r.text, r.visual);
}

std::vector<Finding> validate_record(const EntityRecord& r) {
  return validate_pair(r.id, r.text, r.visual);
}

double MatchScores::recompute_overall() const {
  double total = 0.0;
  int count = 0;
  if (components & kFused) total += s_f, ++count;
  if (components & kText) total += s_t, ++count;
  if (components & kVisual) total += s_v, ++count;
  return count == 0 ? 0.0 : total / count;
}

bool MatchScores::consistent(double tol) const {
  return std::fabs(recompute_overall() - s_o) <= tol;
}

}  // namespace otmel
