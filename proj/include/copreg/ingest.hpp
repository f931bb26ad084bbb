#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "copreg/model.hpp"

namespace copreg {

/// Rows with a value outside [min, max] in `column` are removed.
struct ColumnRange {
  std::string column;
  std::optional<double> min;
  std::optional<double> max;
};

struct CsvSchema {
  std::string response1 = "y1";
  std::string response2 = "y2";
  std::vector<std::string> covariates;
  /// Applied to the raw responses on load.
  Standardization standardization1;
  Standardization standardization2;
  std::vector<ColumnRange> ranges;
  /// Field values treated as missing.
  std::vector<std::string> missing_tokens{"", "NA", "NaN", "nan", "."};

  void validate() const;
};

struct IngestResult {
  Dataset data;
  std::size_t rows_read = 0;
  std::size_t removed_missing = 0;
  std::size_t removed_range = 0;
};

/// Reads a comma-separated file with a header row. Columns not named in the
/// schema are ignored. Throws StructuralError listing missing columns or
/// naming the first unparsable field.
IngestResult ingest_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Raw responses and covariates with a header row.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data, const std::string& response1 = "y1",
                       const std::string& response2 = "y2");

nlohmann::json to_json(const CsvSchema& schema);
CsvSchema csv_schema_from_json(const nlohmann::json& j);

}  // namespace copreg
