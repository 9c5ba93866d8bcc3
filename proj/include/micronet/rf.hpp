#ifndef MICRONET_RF_HPP
#define MICRONET_RF_HPP

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "micronet/errors.hpp"
#include "micronet/graph.hpp"

namespace micronet {

// One stage of a 1-D cascade: a 3x3 stride-1 SAME convolution with an atrous
// rate, or a 2x stride-2 pooling. The analysis is 1-D; 3x3 kernels factor per
// axis, so the 2-D influence set is the Cartesian product.
struct RfLayer {
  enum class Kind { Conv, Pool } kind = Kind::Conv;
  int rate = 1;

  static RfLayer conv(int rate) {
    if (rate < 1) throw ParamError("atrous rate must be >= 1");
    return {Kind::Conv, rate};
  }
  static RfLayer pool() { return {Kind::Pool, 1}; }
};

// Ordered bottom-up list of layers.
using RateSchedule = std::vector<RfLayer>;

inline RateSchedule schedule_from_rates(const std::vector<int>& rates) {
  RateSchedule s;
  for (int r : rates) s.push_back(RfLayer::conv(r));
  return s;
}

// Input coordinates whose perturbation can change a designated output neuron.
struct InfluenceSet {
  std::vector<int64_t> positions;  // sorted input coordinates

  int64_t extent() const {
    return positions.empty() ? 0 : positions.back() - positions.front() + 1;
  }

  // True iff some position strictly between min and max is missing.
  bool has_holes() const {
    return !positions.empty() && static_cast<int64_t>(positions.size()) < extent();
  }
};

inline int64_t rf_domain_hint(const RateSchedule& schedule) {
  int64_t span = 1;
  int64_t stride = 1;
  for (const auto& l : schedule) {
    if (l.kind == RfLayer::Kind::Pool) {
      span += stride;
      stride *= 2;
    } else {
      span += 2 * stride * l.rate;
    }
  }
  return 4 * span + 8;
}

// Exact influence set of the output neuron at `output_index` (top-layer
// coordinates), computed by brute-force forward propagation of every basis
// impulse through all-ones kernels, not by formula.
inline InfluenceSet influence_set(const RateSchedule& schedule, int64_t output_index,
                                  int64_t domain = 0) {
  if (domain <= 0) domain = rf_domain_hint(schedule);
  const int64_t hint = rf_domain_hint(schedule);
  if (domain < hint) {
    throw AnalysisError("domain " + std::to_string(domain) +
                        " too small for this schedule; use at least " + std::to_string(hint));
  }

  auto propagate = [&](std::vector<char> x) {
    for (const auto& layer : schedule) {
      if (layer.kind == RfLayer::Kind::Conv) {
        const int64_t n = static_cast<int64_t>(x.size());
        std::vector<char> y(n, 0);
        const int64_t r = layer.rate;
        for (int64_t i = 0; i < n; ++i) {
          bool hit = x[i] != 0;
          if (!hit && i - r >= 0) hit = x[i - r] != 0;
          if (!hit && i + r < n) hit = x[i + r] != 0;
          y[i] = hit ? 1 : 0;
        }
        x = std::move(y);
      } else {
        const int64_t n = static_cast<int64_t>(x.size()) / 2;
        std::vector<char> y(n, 0);
        for (int64_t i = 0; i < n; ++i) y[i] = (x[2 * i] || x[2 * i + 1]) ? 1 : 0;
        x = std::move(y);
      }
    }
    return x;
  };

  // Top-layer size after pooling.
  int64_t top_size = domain;
  for (const auto& l : schedule) {
    if (l.kind == RfLayer::Kind::Pool) top_size /= 2;
  }
  const int64_t center_in = domain / 2;
  int64_t top_center = top_size / 2;
  const int64_t target = top_center + output_index;
  if (target < 0 || target >= top_size) {
    throw AnalysisError("output index outside the top-layer domain; enlarge the domain");
  }

  InfluenceSet set;
  for (int64_t i = 0; i < domain; ++i) {
    std::vector<char> x(static_cast<size_t>(domain), 0);
    x[i] = 1;
    auto top = propagate(std::move(x));
    if (top[target]) set.positions.push_back(i - center_in);
  }
  if (!set.positions.empty() &&
      (set.positions.front() == -center_in || set.positions.back() == domain - 1 - center_in)) {
    throw AnalysisError("influence set clipped by the domain border; use a domain of at least " +
                        std::to_string(2 * domain));
  }
  return set;
}

// True iff the central neuron's influence set has interior holes (the
// pore-like pattern produced by cascades whose rates share a common divisor).
inline bool has_gridding(const RateSchedule& schedule) {
  return influence_set(schedule, 0).has_holes();
}

inline bool has_gridding(const std::vector<int>& rates) {
  return has_gridding(schedule_from_rates(rates));
}

// Number of input positions shared by the influence sets of two output
// neurons at distance 1 (exact reachable-pixel overlap).
inline int64_t adjacent_overlap(const RateSchedule& schedule) {
  auto a = influence_set(schedule, 0);
  auto b = influence_set(schedule, 1);
  std::vector<int64_t> shared;
  std::set_intersection(a.positions.begin(), a.positions.end(), b.positions.begin(),
                        b.positions.end(), std::back_inserter(shared));
  return static_cast<int64_t>(shared.size());
}

inline int64_t adjacent_overlap(const std::vector<int>& rates) {
  return adjacent_overlap(schedule_from_rates(rates));
}

// Count of integer positions in the intersection of the two bounding
// intervals; reported alongside the exact overlap because gridded cascades
// can have overlapping intervals with zero shared reachable pixels.
inline int64_t adjacent_interval_overlap(const RateSchedule& schedule) {
  auto a = influence_set(schedule, 0);
  auto b = influence_set(schedule, 1);
  if (a.positions.empty() || b.positions.empty()) return 0;
  const int64_t lo = std::max(a.positions.front(), b.positions.front());
  const int64_t hi = std::min(a.positions.back(), b.positions.back());
  return hi >= lo ? hi - lo + 1 : 0;
}

struct RfReportRow {
  int sequence = 0;             // 1-based encoder sequence index
  std::vector<int> rates;       // the sequence's atrous rates
  int64_t extent = 0;           // input-pixel extent of a top neuron's set
  bool dense = false;           // no interior holes at input resolution
  int64_t adjacent_overlap = 0; // shared input pixels of adjacent top neurons
  int64_t interval_overlap = 0;
};

// Per-encoder-sequence influence analysis for an architecture. Each row is
// cumulative: the schedule runs from the network input through the end of
// that sequence, with the pooling layers in between (pooling is handled by
// exact subsampled propagation, so density claims stay honest).
inline std::vector<RfReportRow> rf_report(const ArchitectureSpec& spec) {
  spec.validate();
  std::vector<RfReportRow> rows;
  RateSchedule cumulative;
  for (size_t seq = 0; seq < spec.encoder_rates.size(); ++seq) {
    if (seq > 0) cumulative.push_back(RfLayer::pool());
    for (int r : spec.encoder_rates[seq]) cumulative.push_back(RfLayer::conv(r));
    RfReportRow row;
    row.sequence = static_cast<int>(seq) + 1;
    row.rates = spec.encoder_rates[seq];
    auto set = influence_set(cumulative, 0);
    row.extent = set.extent();
    row.dense = !set.has_holes();
    row.adjacent_overlap = adjacent_overlap(cumulative);
    row.interval_overlap = adjacent_interval_overlap(cumulative);
    rows.push_back(row);
  }
  return rows;
}

inline std::string rf_report_csv(const std::vector<RfReportRow>& rows) {
  std::ostringstream os;
  os << "sequence,rates,extent,dense,adjacent_overlap\n";
  for (const auto& r : rows) {
    os << r.sequence << ",";
    for (size_t i = 0; i < r.rates.size(); ++i) {
      if (i) os << " ";
      os << r.rates[i];
    }
    os << "," << r.extent << "," << (r.dense ? "true" : "false") << "," << r.adjacent_overlap
       << "\n";
  }
  return os.str();
}

}  // namespace micronet

#endif
