#pragma once

#include <vector>

#include "ciac/gesture_model.hpp"

namespace ciac::test {

// Straight-line loop implementation of the classifier forward pass, sharing no
// code with the library. Returns logits.
std::vector<double> reference_logits(const ModelParams<double>& p, const Eigen::MatrixXd& window);

}  // namespace ciac::test
