#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace lcnet {

using BoolArray =
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Observation matrix for one lane-change event: T samples by 2*M coordinate
// columns in the order (x_s, y_s, x_f, y_f, x_r, y_r, x_ft, y_ft, x_rt, y_rt).
// sentinel_mask is T x M; a true cell marks a sentinel-filled (absent)
// vehicle at that timestamp. The mask may be empty for data that carries no
// role structure (plain multivariate sequences).
struct ObservationSequence {
  std::string event_id;
  Eigen::MatrixXd samples;
  BoolArray sentinel_mask;

  Eigen::Index length() const { return samples.rows(); }
  Eigen::Index dim() const { return samples.cols(); }
};

// Decoded hidden-state path for one event. States are zero-based internally;
// file formats use one-based labels.
struct StateSequence {
  std::string event_id;
  std::vector<int> states;
};

}  // namespace lcnet
