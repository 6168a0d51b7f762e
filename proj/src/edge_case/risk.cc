#include "xplain/edge_case/risk.h"

#include <algorithm>
#include <cmath>

#include "xplain/core/error.h"

namespace xplain::edge_case {

using nlohmann::json;

namespace {

void CheckRisk(double risk) {
  if (!std::isfinite(risk) || risk < 0.0) {
    throw InvalidArgument("risk values must be finite and >= 0");
  }
}

std::string_view OpName(PredicateOp op) {
  switch (op) {
    case PredicateOp::kEq:
      return "==";
    case PredicateOp::kLt:
      return "<";
    case PredicateOp::kGt:
      return ">";
    case PredicateOp::kIn:
      return "in";
  }
  return "==";
}

double OperandFromJson(const Feature& f, const json& v) {
  if (!f.numeric() && v.is_string()) {
    if (auto c = f.FindCategory(v.get<std::string>())) return *c;
    throw InvalidArgument("unknown category '" + v.get<std::string>() + "'");
  }
  if (!v.is_number()) throw InvalidArgument("predicate value must be a number");
  return v.get<double>();
}

json OperandToJson(const Feature& f, double v) {
  if (f.numeric()) return v;
  return f.categories.at(static_cast<std::size_t>(v));
}

}  // namespace

bool FeaturePredicate::Holds(const Instance& x) const {
  const double v = x.at(feature);
  switch (op) {
    case PredicateOp::kEq:
      return v == value;
    case PredicateOp::kLt:
      return v < value;
    case PredicateOp::kGt:
      return v > value;
    case PredicateOp::kIn:
      return std::find(values.begin(), values.end(), v) != values.end();
  }
  return false;
}

json FeaturePredicate::ToJson(const FeatureSchema& schema) const {
  const Feature& f = schema.feature(feature);
  json j = {{"feature", f.name}, {"op", OpName(op)}};
  if (op == PredicateOp::kIn) {
    json list = json::array();
    for (double v : values) list.push_back(OperandToJson(f, v));
    j["value"] = list;
  } else {
    j["value"] = OperandToJson(f, value);
  }
  return j;
}

FeaturePredicate FeaturePredicate::FromJson(const FeatureSchema& schema,
                                            const json& j) {
  try {
    FeaturePredicate p;
    p.feature = schema.FeatureIndex(j.at("feature").get<std::string>());
    const Feature& f = schema.feature(p.feature);
    const std::string op = j.at("op").get<std::string>();
    if (op == "==") {
      p.op = PredicateOp::kEq;
    } else if (op == "<") {
      p.op = PredicateOp::kLt;
    } else if (op == ">") {
      p.op = PredicateOp::kGt;
    } else if (op == "in") {
      p.op = PredicateOp::kIn;
    } else {
      throw InvalidArgument("unknown predicate op '" + op + "'");
    }
    const json& value = j.at("value");
    if (p.op == PredicateOp::kIn) {
      if (!value.is_array()) throw InvalidArgument("'in' expects a list");
      for (const json& v : value) p.values.push_back(OperandFromJson(f, v));
    } else {
      p.value = OperandFromJson(f, value);
    }
    return p;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed predicate: ") + e.what());
  }
}

RiskFunction RiskFunction::ClassTable(std::vector<double> risks) {
  for (double r : risks) CheckRisk(r);
  RiskFunction f;
  f.kind_ = Kind::kClassTable;
  f.class_risks_ = std::move(risks);
  return f;
}

RiskFunction RiskFunction::FeatureRules(std::vector<Rule> rules) {
  for (const Rule& r : rules) CheckRisk(r.risk);
  RiskFunction f;
  f.kind_ = Kind::kFeatureRule;
  f.rules_ = std::move(rules);
  return f;
}

double RiskFunction::operator()(const Instance& x, int truth) const {
  if (kind_ == Kind::kClassTable) {
    if (truth < 0 || truth >= static_cast<int>(class_risks_.size())) return 0.0;
    return class_risks_[truth];
  }
  double risk = 0.0;
  for (const Rule& r : rules_) {
    if (r.predicate.Holds(x)) risk = std::max(risk, r.risk);
  }
  return risk;
}

double RiskFunction::MaxRisk() const {
  double m = 0.0;
  for (double r : class_risks_) m = std::max(m, r);
  for (const Rule& r : rules_) m = std::max(m, r.risk);
  return m;
}

json RiskFunction::ToJson(const FeatureSchema& schema) const {
  if (kind_ == Kind::kClassTable) {
    json risks = json::object();
    for (std::size_t c = 0; c < class_risks_.size(); ++c) {
      risks[schema.ClassName(static_cast<int>(c))] = class_risks_[c];
    }
    return {{"kind", "class-table"}, {"risks", risks}};
  }
  json rules = json::array();
  for (const Rule& r : rules_) {
    json jr = r.predicate.ToJson(schema);
    jr["risk"] = r.risk;
    rules.push_back(std::move(jr));
  }
  return {{"kind", "feature-rule"}, {"rules", rules}};
}

RiskFunction RiskFunction::FromJson(const FeatureSchema& schema,
                                    const json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "class-table") {
      std::vector<double> risks(schema.num_classes(), 0.0);
      for (const auto& [name, value] : j.at("risks").items()) {
        risks[schema.ClassIndex(name)] = value.get<double>();
      }
      return ClassTable(std::move(risks));
    }
    if (kind == "feature-rule") {
      std::vector<Rule> rules;
      for (const json& jr : j.at("rules")) {
        rules.push_back(
            {FeaturePredicate::FromJson(schema, jr), jr.at("risk").get<double>()});
      }
      return FeatureRules(std::move(rules));
    }
    throw InvalidArgument("unknown risk kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed risk function: ") + e.what());
  }
}

}  // namespace xplain::edge_case
