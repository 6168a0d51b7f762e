#ifndef XPLAIN_EDGE_CASE_RISK_H_
#define XPLAIN_EDGE_CASE_RISK_H_

#include <string_view>
#include <vector>

#include "json.hpp"
#include "xplain/core/schema.h"

namespace xplain::edge_case {

enum class PredicateOp { kEq, kLt, kGt, kIn };

// A test on one feature. `in` uses `values`; the other ops use `value`.
// Categorical operands are category indices.
struct FeaturePredicate {
  int feature = 0;
  PredicateOp op = PredicateOp::kEq;
  double value = 0.0;
  std::vector<double> values;

  bool Holds(const Instance& x) const;

  // {feature, op: "==" | "<" | ">" | "in", value}
  nlohmann::json ToJson(const FeatureSchema& schema) const;
  static FeaturePredicate FromJson(const FeatureSchema& schema,
                                   const nlohmann::json& j);
};

// Consequence of mispredicting an instance.
class RiskFunction {
 public:
  enum class Kind { kClassTable, kFeatureRule };
  struct Rule {
    FeaturePredicate predicate;
    double risk = 0.0;
  };

  // Risk keyed by the ground-truth class; one value per class.
  static RiskFunction ClassTable(std::vector<double> risks);
  // Max risk over matching rules; 0 when none matches.
  static RiskFunction FeatureRules(std::vector<Rule> rules);

  Kind kind() const { return kind_; }
  const std::vector<double>& class_risks() const { return class_risks_; }
  const std::vector<Rule>& rules() const { return rules_; }

  double operator()(const Instance& x, int truth) const;
  double MaxRisk() const;

  // {kind:"class-table", risks:{"class": value}} or
  // {kind:"feature-rule", rules:[{feature, op, value, risk}]}
  nlohmann::json ToJson(const FeatureSchema& schema) const;
  static RiskFunction FromJson(const FeatureSchema& schema,
                               const nlohmann::json& j);

 private:
  Kind kind_ = Kind::kClassTable;
  std::vector<double> class_risks_;
  std::vector<Rule> rules_;
};

}  // namespace xplain::edge_case

#endif  // XPLAIN_EDGE_CASE_RISK_H_
