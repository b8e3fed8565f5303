#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace aem {

using Matrix = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;
using MatrixF = Eigen::MatrixXf;

enum class ErrKind {
  config,      // bad configuration / usage
  io,          // filesystem, checksum, malformed artifacts
  validation,  // schema/taxonomy violations in data
  shape,       // tensor shape mismatch
  occ,         // one-class-classification contract violated
  nan_abort,   // training diverged
  mismatch,    // checkpoint/dataset incompatibility
  numeric,     // other numeric contract violations
};

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrKind kind() const { return kind_; }

 private:
  ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& msg) { throw Error(kind, msg); }

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace aem
