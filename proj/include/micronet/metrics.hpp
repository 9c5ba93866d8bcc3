#ifndef MICRONET_METRICS_HPP
#define MICRONET_METRICS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "micronet/errors.hpp"

namespace micronet {

// n_c x n_c pixel counts; counts(j, i) = pixels of true category j predicted
// as category i. Merging shards is entrywise addition.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int n_categories)
      : nc_(n_categories), counts_(static_cast<size_t>(n_categories) * n_categories, 0) {
    if (n_categories < 1) throw ParamError("need at least one category");
  }

  int categories() const { return nc_; }

  uint64_t& at(int truth, int predicted) { return counts_[truth * nc_ + predicted]; }
  uint64_t at(int truth, int predicted) const { return counts_[truth * nc_ + predicted]; }

  uint64_t total() const {
    uint64_t t = 0;
    for (uint64_t v : counts_) t += v;
    return t;
  }

  uint64_t true_total(int category) const {
    uint64_t t = 0;
    for (int i = 0; i < nc_; ++i) t += at(category, i);
    return t;
  }

  uint64_t predicted_total(int category) const {
    uint64_t t = 0;
    for (int j = 0; j < nc_; ++j) t += at(j, category);
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.nc_ != nc_) throw ShapeError("confusion matrix category count mismatch");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  // Per-pixel label accumulation; labels must lie in [0, n_c).
  template <typename LabelVec>
  void accumulate(const LabelVec& predicted, const LabelVec& truth) {
    if (predicted.size() != truth.size()) {
      throw ShapeError("accumulate: predicted and truth pixel counts differ");
    }
    for (size_t i = 0; i < truth.size(); ++i) {
      int t = static_cast<int>(truth[i]);
      int p = static_cast<int>(predicted[i]);
      if (t < 0 || t >= nc_ || p < 0 || p >= nc_) {
        throw ValidationError("label out of range [0," + std::to_string(nc_) + ") at pixel " +
                              std::to_string(i));
      }
      ++at(t, p);
    }
  }

 private:
  int nc_;
  std::vector<uint64_t> counts_;
};

// IOU of one category; denominator is truth + predicted - intersection.
inline double class_iou(const ConfusionMatrix& cm, int category) {
  const uint64_t inter = cm.at(category, category);
  const uint64_t denom = cm.true_total(category) + cm.predicted_total(category) - inter;
  if (denom == 0) return -1.0;  // category absent from both truth and prediction
  return static_cast<double>(inter) / static_cast<double>(denom);
}

// Mean IOU over categories. Categories absent from both truth and prediction
// are excluded from the mean.
inline double miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ValidationError("miou undefined on an empty confusion matrix");
  double sum = 0;
  int counted = 0;
  for (int c = 0; c < cm.categories(); ++c) {
    double iou = class_iou(cm, c);
    if (iou >= 0) {
      sum += iou;
      ++counted;
    }
  }
  return sum / counted;
}

// Overall pixel accuracy: trace over total.
inline double acc(const ConfusionMatrix& cm) {
  const uint64_t total = cm.total();
  if (total == 0) throw ValidationError("acc undefined on an empty confusion matrix");
  uint64_t trace = 0;
  for (int c = 0; c < cm.categories(); ++c) trace += cm.at(c, c);
  return static_cast<double>(trace) / static_cast<double>(total);
}

}  // namespace micronet

#endif
