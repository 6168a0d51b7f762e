#include "xplain/core/dataset.h"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "xplain/core/error.h"

namespace xplain {

using nlohmann::json;

void LabeledDataset::Validate() const {
  if (labels.size() != instances.size()) {
    throw InvalidArgument("instances and labels differ in length");
  }
  if (masks && masks->size() != instances.size()) {
    throw InvalidArgument("instances and masks differ in length");
  }
  for (std::size_t r = 0; r < instances.size(); ++r) {
    schema.CheckInstance(instances[r]);
    if (labels[r] < 0 || labels[r] >= schema.num_classes()) {
      throw InvalidArgument("label out of range at row " +
                            std::to_string(r + 1));
    }
    if (masks) {
      for (int f : (*masks)[r]) {
        if (f < 0 || f >= schema.num_features()) {
          throw InvalidArgument("mask feature out of range at row " +
                                std::to_string(r + 1));
        }
      }
    }
  }
}

LabeledDataset LabeledDataset::Subset(
    const std::vector<std::size_t>& rows) const {
  LabeledDataset out;
  out.schema = schema;
  if (masks) out.masks.emplace();
  for (std::size_t r : rows) {
    out.instances.push_back(instances.at(r));
    out.labels.push_back(labels.at(r));
    if (masks) out.masks->push_back((*masks)[r]);
  }
  return out;
}

std::vector<std::string> SplitCsvRecord(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

std::string CsvEscape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

namespace {

std::string Trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

std::string AtRow(const std::string& message, std::size_t row) {
  return message + " at row " + std::to_string(row);
}

}  // namespace

LabeledDataset LoadDataset(std::istream& csv, std::istream& schema_json) {
  LabeledDataset data;
  try {
    data.schema = FeatureSchema::FromJson(json::parse(schema_json));
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed schema: ") + e.what());
  }
  const FeatureSchema& schema = data.schema;

  std::string line;
  if (!std::getline(csv, line)) throw InvalidArgument("missing CSV header");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
    line.erase(0, 3);
  }
  const std::vector<std::string> header = SplitCsvRecord(line);

  // Column position -> feature index; -1 target, -2 mask.
  std::vector<int> role(header.size());
  std::vector<int> seen(schema.num_features(), 0);
  bool has_target = false;
  bool has_mask = false;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = Trim(header[c]);
    if (name == schema.target().name) {
      role[c] = -1;
      has_target = true;
    } else if (schema.mask_column() && name == *schema.mask_column()) {
      role[c] = -2;
      has_mask = true;
    } else if (auto f = schema.FindFeature(name)) {
      if (seen[*f]++) throw InvalidArgument(AtRow("duplicate column '" + name + "'", 0));
      role[c] = *f;
    } else {
      throw InvalidArgument(AtRow("unknown feature '" + name + "'", 0));
    }
  }
  for (int f = 0; f < schema.num_features(); ++f) {
    if (!seen[f]) {
      throw InvalidArgument(
          AtRow("missing column '" + schema.feature(f).name + "'", 0));
    }
  }
  if (!has_target) throw InvalidArgument(AtRow("missing target column", 0));
  if (has_mask) data.masks.emplace();

  std::size_t row = 0;
  while (std::getline(csv, line)) {
    if (Trim(line).empty() || line == "\r") continue;
    ++row;
    const std::vector<std::string> fields = SplitCsvRecord(line);
    if (fields.size() != header.size()) {
      throw InvalidArgument(AtRow("row length mismatch", row));
    }
    Instance x(schema.num_features());
    int label = 0;
    FeatureSet mask;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const std::string cell = Trim(fields[c]);
      try {
        if (role[c] == -1) {
          label = schema.ClassIndex(cell);
        } else if (role[c] == -2) {
          std::stringstream parts(cell);
          std::string name;
          while (std::getline(parts, name, ';')) {
            name = Trim(name);
            if (!name.empty()) mask.insert(schema.FeatureIndex(name));
          }
        } else {
          x[role[c]] = schema.ParseValue(role[c], cell);
          if (!schema.feature(role[c]).InDomain(x[role[c]])) {
            throw InvalidArgument("value out of domain");
          }
        }
      } catch (const Error& e) {
        throw InvalidArgument(AtRow(e.what(), row));
      }
    }
    data.instances.push_back(std::move(x));
    data.labels.push_back(label);
    if (has_mask) data.masks->push_back(std::move(mask));
  }
  return data;
}

LabeledDataset LoadDatasetFiles(const std::filesystem::path& csv,
                                const std::filesystem::path& schema_json) {
  std::ifstream csv_in(csv);
  if (!csv_in) throw InvalidArgument("cannot read " + csv.string());
  std::ifstream schema_in(schema_json);
  if (!schema_in) throw InvalidArgument("cannot read " + schema_json.string());
  return LoadDataset(csv_in, schema_in);
}

void WriteCsv(const LabeledDataset& data, std::ostream& out) {
  const FeatureSchema& schema = data.schema;
  for (const Feature& f : schema.features()) out << CsvEscape(f.name) << ',';
  out << CsvEscape(schema.target().name);
  const bool with_mask = schema.mask_column() && data.masks;
  if (with_mask) out << ',' << CsvEscape(*schema.mask_column());
  out << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (int f = 0; f < schema.num_features(); ++f) {
      out << CsvEscape(schema.FormatValue(f, data.instances[r][f])) << ',';
    }
    out << CsvEscape(schema.ClassName(data.labels[r]));
    if (with_mask) {
      std::string joined;
      for (int f : (*data.masks)[r]) {
        if (!joined.empty()) joined.push_back(';');
        joined += schema.feature(f).name;
      }
      out << ',' << CsvEscape(joined);
    }
    out << '\n';
  }
}

}  // namespace xplain
