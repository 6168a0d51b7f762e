#ifndef XPLAIN_CORE_DISTANCE_H_
#define XPLAIN_CORE_DISTANCE_H_

#include <string_view>
#include <vector>

#include "xplain/core/schema.h"

namespace xplain {

enum class DistanceKind {
  kGower,         // weighted mean of per-feature dissimilarities, in [0, 1]
  kNormalizedL1,  // weighted sum of per-feature dissimilarities
  kNormalizedL2,  // sqrt of weighted sum of squared dissimilarities
};

DistanceKind DistanceKindFromString(std::string_view name);
std::string_view ToString(DistanceKind kind);

// Numeric: |a - b| / domain width (0 for a zero-width domain); categorical:
// 0 if equal, else 1. Always in [0, 1] for in-domain values.
double FeatureDissimilarity(const Feature& feature, double a, double b);

struct DistanceMetric {
  DistanceKind kind = DistanceKind::kGower;
  // Per-feature weights; empty means all 1.
  std::vector<double> weights;

  double Weight(int feature) const {
    return weights.empty() ? 1.0 : weights[feature];
  }
  // Throws InvalidArgument if weights are negative, non-finite, all zero or
  // the wrong length.
  void Validate(const FeatureSchema& schema) const;

  // Throws InvalidArgument on schema mismatch.
  double operator()(const FeatureSchema& schema, const Instance& a,
                    const Instance& b) const;
};

}  // namespace xplain

#endif  // XPLAIN_CORE_DISTANCE_H_
