#include "xplain/core/distance.h"

#include <cmath>

#include "xplain/core/error.h"

namespace xplain {

DistanceKind DistanceKindFromString(std::string_view name) {
  if (name == "gower") return DistanceKind::kGower;
  if (name == "normalized-l1") return DistanceKind::kNormalizedL1;
  if (name == "normalized-l2") return DistanceKind::kNormalizedL2;
  throw InvalidArgument("unknown distance '" + std::string(name) + "'");
}

std::string_view ToString(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::kGower:
      return "gower";
    case DistanceKind::kNormalizedL1:
      return "normalized-l1";
    case DistanceKind::kNormalizedL2:
      return "normalized-l2";
  }
  return "gower";
}

double FeatureDissimilarity(const Feature& feature, double a, double b) {
  if (!feature.numeric()) return a == b ? 0.0 : 1.0;
  const double width = feature.Width();
  if (width <= 0.0) return a == b ? 0.0 : 1.0;
  return std::min(1.0, std::abs(a - b) / width);
}

void DistanceMetric::Validate(const FeatureSchema& schema) const {
  if (weights.empty()) return;
  if (static_cast<int>(weights.size()) != schema.num_features()) {
    throw InvalidArgument("distance weights do not match feature count");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw InvalidArgument("distance weights must be finite and >= 0");
    }
    total += w;
  }
  if (total <= 0.0) throw InvalidArgument("distance weights are all zero");
}

double DistanceMetric::operator()(const FeatureSchema& schema,
                                  const Instance& a, const Instance& b) const {
  const int n = schema.num_features();
  if (static_cast<int>(a.size()) != n || static_cast<int>(b.size()) != n) {
    throw InvalidArgument("schema mismatch in distance");
  }
  double sum = 0.0;
  double weight_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = Weight(i);
    const double d = FeatureDissimilarity(schema.feature(i), a[i], b[i]);
    sum += w * (kind == DistanceKind::kNormalizedL2 ? d * d : d);
    weight_sum += w;
  }
  switch (kind) {
    case DistanceKind::kGower:
      return weight_sum > 0.0 ? sum / weight_sum : 0.0;
    case DistanceKind::kNormalizedL1:
      return sum;
    case DistanceKind::kNormalizedL2:
      return std::sqrt(sum);
  }
  return sum;
}

}  // namespace xplain
