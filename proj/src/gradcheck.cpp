#include "ftz/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ftz {

double gradcheck(const std::function<Tensor()>& forward, Tensor x, double h) {
  if (precision() != Precision::f64) {
    throw ConfigurationError("gradcheck requires 64-bit mode (set_precision(Precision::f64))");
  }
  if (!(h > 0.0)) throw ConfigurationError("gradcheck: step h must be positive");

  Tape& tape = Tape::active();
  tape.reset();
  const bool was_rg = x.requires_grad();
  x.set_requires_grad(true);
  x.drop_grad();
  Tensor loss = forward();
  if (loss.numel() != 1) {
    throw DimensionError("gradcheck: forward must produce a scalar, got " + shape_str(loss.shape()));
  }
  backward(loss);
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) analytic = x.grad_vec();
  x.drop_grad();
  x.set_requires_grad(was_rg);
  tape.reset();

  double max_rel = 0.0;
  {
    GradPause pause;
    for (size_t i = 0; i < x.numel(); ++i) {
      const double original = x.data()[i];
      x.data()[i] = original + h;
      const double plus = forward().value();
      x.data()[i] = original - h;
      const double minus = forward().value();
      x.data()[i] = original;
      const double numeric = (plus - minus) / (2.0 * h);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
      max_rel = std::max(max_rel, std::abs(numeric - analytic[i]) / denom);
    }
  }
  return max_rel;
}

}  // namespace ftz
