#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mvitime/rng.hpp"

namespace mvitime::augment {

struct AugmentConfig {
  int n_segments_min = 2;
  int n_segments_max = 8;
  std::uint64_t seed = 0;
};

class InvalidSegmentCount : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ViewPair {
  long anchor_index = 0;
  std::vector<double> view_a;  // cropped
  std::vector<double> view_b;  // permuted
};

// n-1 distinct cut indices in (0, L), sorted; they induce n non-empty
// contiguous segments covering [0, L).
std::vector<std::size_t> split_points(std::size_t length, int n_segments, Rng& rng);

// Linear-interpolation resample of `segment` to `length` samples.
std::vector<double> resize_linear(const std::vector<double>& segment, std::size_t length);

// Deterministic core of permute: reassemble the segments induced by
// `cuts` in the given order.
std::vector<double> reassemble(const std::vector<double>& samples,
                               const std::vector<std::size_t>& cuts,
                               const std::vector<std::size_t>& order);

// Cropping: split into a random number of segments, pick one, stretch it
// back to the original length.
std::vector<double> crop_resize(const std::vector<double>& samples, const AugmentConfig& cfg,
                                Rng& rng);

// Permutation: split into a random number of segments and concatenate
// them in a uniformly random order. Preserves the sample multiset.
std::vector<double> permute(const std::vector<double>& samples, const AugmentConfig& cfg, Rng& rng);

// The two contrastive views of one epoch: view_a = crop, view_b = permute,
// independent randomness per view.
ViewPair make_views(const std::vector<double>& samples, long anchor_index,
                    const AugmentConfig& cfg, Rng& rng);

}  // namespace mvitime::augment
