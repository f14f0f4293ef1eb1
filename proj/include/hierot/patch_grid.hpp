#pragma once

#include "hierot/measures.hpp"

namespace hierot {

/// K x C matrix of local feature vectors, one row per spatial position.
class PatchGrid {
 public:
  PatchGrid() = default;
  explicit PatchGrid(Matrix patches);

  const Matrix& patches() const { return patches_; }
  Eigen::Index patch_count() const { return patches_.rows(); }
  Eigen::Index channels() const { return patches_.cols(); }

  /// Global average pooling over the K positions.
  Vector pooled() const { return patches_.colwise().mean().transpose(); }

 private:
  Matrix patches_;
};

inline PatchGrid::PatchGrid(Matrix patches) : patches_(std::move(patches)) {
  if (patches_.rows() < 1 || patches_.cols() < 1)
    throw InvariantError("patch grid needs at least one patch and one channel");
  if (!patches_.allFinite()) throw InvariantError("patch grid entries must be finite");
}

}  // namespace hierot
