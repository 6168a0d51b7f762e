#ifndef XPLAIN_ATTRIBUTION_ATTRIBUTION_H_
#define XPLAIN_ATTRIBUTION_ATTRIBUTION_H_

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "xplain/core/dataset.h"
#include "xplain/core/model.h"

namespace xplain::attribution {

enum class ExplainerKind { kAblation, kOcclusion, kShapleySampling, kPermutation };

// Accepts "ablation", "occlusion", "shapley", "permutation" and the long
// forms "feature-ablation", "shapley-sampling", "feature-permutation".
ExplainerKind ExplainerKindFromString(std::string_view name);
std::string_view ToString(ExplainerKind kind);

struct Explainer {
  ExplainerKind kind = ExplainerKind::kAblation;
  // Value used for "absent" features. Set by BindBackground or fixed by hand.
  std::optional<Instance> baseline;
  // Rows drawn from for the permutation explainer.
  std::vector<Instance> background;

  int group_size = 2;          // occlusion window
  int shapley_samples = 200;   // Monte-Carlo permutations
  bool shapley_exact = false;  // enumerate all m! orders instead
  int permutation_repeats = 1;  // one random replacement per feature
  int background_size = 100;

  void Validate() const;

  // {kind, group_size, shapley_samples, shapley_exact, permutation_repeats,
  //  background_size, baseline?}
  nlohmann::json ToJson(const FeatureSchema& schema) const;
  static Explainer FromJson(const FeatureSchema& schema, const nlohmann::json& j);
};

inline constexpr int kMaxExactShapleyFeatures = 8;

// Baseline = per-feature mean (numeric) or mode (categorical, lowest index on
// ties). Background = up to background_size rows drawn without replacement.
Explainer BindBackground(Explainer explainer, const LabeledDataset& data,
                         std::uint64_t seed = 42);

struct AttributionMap {
  std::vector<double> values;
  Instance instance;
  int target = 0;
  std::string explainer;
  std::uint64_t seed = 0;
};

// Attributions of P(target | x). `target` defaults to the predicted class.
// Throws InvalidArgument for a bad target or instance, FailedPrecondition
// ("baseline unavailable") when the explainer needs data it was not given.
AttributionMap Explain(const Explainer& explainer, const Model& model,
                       const Instance& x, std::optional<int> target = std::nullopt,
                       std::uint64_t seed = 42);

// {explainer, instance, target, seed, values:[{feature, score}]}
nlohmann::json ToJson(const FeatureSchema& schema, const AttributionMap& map);
AttributionMap AttributionMapFromJson(const FeatureSchema& schema,
                                      const nlohmann::json& j);

// One row per map: explainer, target, then one score column per feature.
void WriteCsv(std::ostream& out, const FeatureSchema& schema,
              const std::vector<AttributionMap>& maps);

}  // namespace xplain::attribution

#endif  // XPLAIN_ATTRIBUTION_ATTRIBUTION_H_
