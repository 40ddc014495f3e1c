#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lcbnet/numerics.hpp"
#include "lcbnet/rng.hpp"

namespace lcbnet::testing {

inline num::DiffArray random_array(Rng& rng, num::Shape shape,
                                   bool requires_grad = true,
                                   double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(num::shape_size(shape));
  for (double& x : v) x = uniform(rng, lo, hi);
  return num::DiffArray(std::move(shape), std::move(v), requires_grad);
}

// Max relative error between backward() and central differences of
// sum(weights * op(inputs)) over every input entry.
inline double primitive_grad_error(
    const std::function<num::DiffArray(const std::vector<num::DiffArray>&)>& op,
    std::vector<num::DiffArray> inputs, Rng& rng, double h = 1e-5) {
  num::DiffArray probe;
  {
    num::NoGradGuard g;
    num::DiffArray out = op(inputs);
    probe = random_array(rng, out.shape(), false);
  }
  std::vector<num::Parameter> params;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    params.push_back({"in" + std::to_string(i), inputs[i]});
  auto loss = [&] { return num::sum(num::mul(op(inputs), probe)); };
  return num::grad_check(loss, params, h, 1.0).max_rel_error();
}

}  // namespace lcbnet::testing
