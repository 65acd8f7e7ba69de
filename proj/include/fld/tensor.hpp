#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fld {

// Dense row-major matrix of doubles. This is the only numeric container the
// model and optimizer work with; vectors are 1xN or Nx1 tensors. Values held
// by a Tensor are always finite — missing data (NaN) lives in the dataset
// layer and is converted to masks before any tensor math happens.
//
// `node` is the identity of this value on an autodiff tape (-1 when the
// value is not being recorded). It is assigned by Tape and packs the tape's
// epoch with the node index, so using a tensor after its tape was cleared is
// detected instead of silently producing garbage gradients.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  std::int64_t node = -1;

  Tensor() = default;
  Tensor(int r, int c);                               // zero-filled
  Tensor(int r, int c, std::vector<double> values);   // row-major

  static Tensor scalar(double v);
  static Tensor full(int r, int c, double v);
  static Tensor row(std::vector<double> values);
  static Tensor column(std::vector<double> values);

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  const double& at(int i, int j) const {
    return data[static_cast<std::size_t>(i) * cols + j];
  }

  int size() const { return rows * cols; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }

  // Value of a 1x1 tensor; throws ShapeError otherwise.
  double value() const;
};

std::string shape_str(int rows, int cols);
std::string shape_str(const Tensor& t);

// Throws NumericError naming `where` if any entry is NaN or infinite.
void check_finite(const Tensor& t, const char* where);

bool all_close(const Tensor& a, const Tensor& b, double atol);

}  // namespace fld
