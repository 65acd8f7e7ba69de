#include "fld/tensor.hpp"

#include <cmath>

#include "fld/errors.hpp"

namespace fld {

namespace {
void require_positive(int r, int c) {
  if (r <= 0 || c <= 0) {
    throw ShapeError("tensor dimensions must be positive, got " + shape_str(r, c));
  }
}
}  // namespace

Tensor::Tensor(int r, int c) : rows(r), cols(c) {
  require_positive(r, c);
  data.assign(static_cast<std::size_t>(r) * c, 0.0);
}

Tensor::Tensor(int r, int c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  require_positive(r, c);
  if (data.size() != static_cast<std::size_t>(r) * c) {
    throw ShapeError("tensor " + shape_str(r, c) + " needs " +
                     std::to_string(static_cast<std::size_t>(r) * c) +
                     " values, got " + std::to_string(data.size()));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(1, 1, {v}); }

Tensor Tensor::full(int r, int c, double v) {
  Tensor t(r, c);
  t.data.assign(t.data.size(), v);
  return t;
}

Tensor Tensor::row(std::vector<double> values) {
  int n = static_cast<int>(values.size());
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::column(std::vector<double> values) {
  int n = static_cast<int>(values.size());
  return Tensor(n, 1, std::move(values));
}

double Tensor::value() const {
  if (!is_scalar()) {
    throw ShapeError("value() requires a 1x1 tensor, got " + shape_str(*this));
  }
  return data[0];
}

std::string shape_str(int rows, int cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

std::string shape_str(const Tensor& t) { return shape_str(t.rows, t.cols); }

void check_finite(const Tensor& t, const char* where) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(where) + ": non-finite value in " +
                         shape_str(t) + " tensor");
    }
  }
}

bool all_close(const Tensor& a, const Tensor& b, double atol) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (std::fabs(a.data[i] - b.data[i]) > atol) return false;
  }
  return true;
}

}  // namespace fld
