#ifndef XPLAIN_CORE_DATASET_H_
#define XPLAIN_CORE_DATASET_H_

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "xplain/core/schema.h"

namespace xplain {

// Instances with ground-truth labels and, optionally, one human relevance
// mask (a feature set) per instance.
struct LabeledDataset {
  FeatureSchema schema;
  std::vector<Instance> instances;
  std::vector<int> labels;
  std::optional<std::vector<FeatureSet>> masks;

  std::size_t size() const { return instances.size(); }
  bool empty() const { return instances.empty(); }

  // Throws InvalidArgument on length mismatch, out-of-domain values or labels
  // outside the class list.
  void Validate() const;

  // Dataset restricted to the given rows, in the given order.
  LabeledDataset Subset(const std::vector<std::size_t>& rows) const;
};

// Parses a CSV with a header row against a JSON schema. Errors carry the
// 1-based data row number ("... at row 2"); header problems report row 0.
LabeledDataset LoadDataset(std::istream& csv, std::istream& schema_json);
LabeledDataset LoadDatasetFiles(const std::filesystem::path& csv,
                                const std::filesystem::path& schema_json);

// Writes features in schema order, then the target, then the mask column when
// the schema names one.
void WriteCsv(const LabeledDataset& data, std::ostream& out);

// Splits a single CSV record. Handles double-quoted fields.
std::vector<std::string> SplitCsvRecord(const std::string& line);
// Quotes a field when it contains a comma, quote or newline.
std::string CsvEscape(const std::string& field);

}  // namespace xplain

#endif  // XPLAIN_CORE_DATASET_H_
