#pragma once

// Central finite-difference check of every model parameter against the
// analytical gradient of the batch loss.

#include <algorithm>
#include <cmath>
#include <string>

#include "bttrain/model.hpp"

namespace bttrain {

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[<index>]"
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor)
inline double grad_rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradcheckResult gradcheck_model(TransformerModel<double>& model, const Batch& batch, double h) {
  model.zero_grad();
  model.forward_backward(batch, true);
  GradcheckResult res;
  model.visit_params([&](const std::string& name, Tensor<double>& v, Tensor<double>& g) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double lp = model.forward_backward(batch, false).loss;
      v[i] = keep - h;
      const double lm = model.forward_backward(batch, false).loss;
      v[i] = keep;
      const double err = grad_rel_error(g[i], (lp - lm) / (2 * h));
      if (err > res.max_rel_error || res.checked == 0) {
        res.max_rel_error = err;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
      ++res.checked;
    }
  });
  return res;
}

}  // namespace bttrain
