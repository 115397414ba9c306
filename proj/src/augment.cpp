#include "mvitime/augment.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace mvitime::augment {

namespace {

int draw_segment_count(std::size_t length, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.n_segments_min < 2 || cfg.n_segments_min > cfg.n_segments_max) {
    throw InvalidSegmentCount("require 2 <= n_min <= n_max");
  }
  if (static_cast<std::size_t>(cfg.n_segments_max) > length) {
    throw InvalidSegmentCount("n_max exceeds signal length");
  }
  const auto span = static_cast<std::uint64_t>(cfg.n_segments_max - cfg.n_segments_min + 1);
  return cfg.n_segments_min + static_cast<int>(rng.uniform(span));
}

}  // namespace

std::vector<std::size_t> split_points(std::size_t length, int n_segments, Rng& rng) {
  if (n_segments < 2 || static_cast<std::size_t>(n_segments) > length) {
    throw InvalidSegmentCount("need 2 <= n <= L");
  }
  // Floyd's algorithm: k = n-1 distinct values from {1 .. L-1}.
  const std::size_t k = static_cast<std::size_t>(n_segments) - 1;
  const std::size_t pool = length - 1;
  std::set<std::size_t> cuts;
  for (std::size_t j = pool - k + 1; j <= pool; ++j) {
    const std::size_t t = 1 + rng.uniform(j);
    if (!cuts.insert(t).second) cuts.insert(j);
  }
  return std::vector<std::size_t>(cuts.begin(), cuts.end());
}

std::vector<double> resize_linear(const std::vector<double>& segment, std::size_t length) {
  const std::size_t m = segment.size();
  std::vector<double> out(length);
  if (m == 1) {
    std::fill(out.begin(), out.end(), segment[0]);
    return out;
  }
  for (std::size_t i = 0; i < length; ++i) {
    const double pos = (length == 1) ? 0.0
                                     : static_cast<double>(i) * static_cast<double>(m - 1) /
                                           static_cast<double>(length - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, m - 1);
    const double frac = pos - static_cast<double>(lo);
    out[i] = segment[lo] + frac * (segment[hi] - segment[lo]);
  }
  return out;
}

std::vector<double> reassemble(const std::vector<double>& samples,
                               const std::vector<std::size_t>& cuts,
                               const std::vector<std::size_t>& order) {
  std::vector<std::size_t> bounds;
  bounds.push_back(0);
  bounds.insert(bounds.end(), cuts.begin(), cuts.end());
  bounds.push_back(samples.size());

  std::vector<double> out;
  out.reserve(samples.size());
  for (std::size_t seg : order) {
    out.insert(out.end(), samples.begin() + static_cast<long>(bounds[seg]),
               samples.begin() + static_cast<long>(bounds[seg + 1]));
  }
  return out;
}

std::vector<double> crop_resize(const std::vector<double>& samples, const AugmentConfig& cfg,
                                Rng& rng) {
  const int n = draw_segment_count(samples.size(), cfg, rng);
  const auto cuts = split_points(samples.size(), n, rng);
  const auto pick = static_cast<std::size_t>(rng.uniform(static_cast<std::uint64_t>(n)));
  const std::size_t begin = pick == 0 ? 0 : cuts[pick - 1];
  const std::size_t end = pick == cuts.size() ? samples.size() : cuts[pick];
  std::vector<double> segment(samples.begin() + static_cast<long>(begin),
                              samples.begin() + static_cast<long>(end));
  return resize_linear(segment, samples.size());
}

std::vector<double> permute(const std::vector<double>& samples, const AugmentConfig& cfg,
                            Rng& rng) {
  const int n = draw_segment_count(samples.size(), cfg, rng);
  const auto cuts = split_points(samples.size(), n, rng);
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  return reassemble(samples, cuts, order);
}

ViewPair make_views(const std::vector<double>& samples, long anchor_index,
                    const AugmentConfig& cfg, Rng& rng) {
  ViewPair vp;
  vp.anchor_index = anchor_index;
  Rng rng_a = rng.substream("crop", static_cast<std::uint64_t>(anchor_index));
  Rng rng_b = rng.substream("permute", static_cast<std::uint64_t>(anchor_index));
  vp.view_a = crop_resize(samples, cfg, rng_a);
  vp.view_b = permute(samples, cfg, rng_b);
  return vp;
}

}  // namespace mvitime::augment
