#include "copreg/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string_view>

#include "copreg/error.hpp"
#include "copreg/inference.hpp"

namespace copreg {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Comma-separated fields; double quotes group commas and "" escapes a quote.
std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw StructuralError("unterminated quoted field");
  fields.emplace_back(trim(cur));
  return fields;
}

std::vector<std::string> relevant_columns(const CsvSchema& schema) {
  std::vector<std::string> cols{schema.response1, schema.response2};
  cols.insert(cols.end(), schema.covariates.begin(), schema.covariates.end());
  return cols;
}

}  // namespace

void CsvSchema::validate() const {
  if (response1.empty() || response2.empty()) throw StructuralError("schema: response columns must be named");
  const auto cols = relevant_columns(*this);
  std::set<std::string> seen;
  for (const auto& c : cols) {
    if (c.empty()) throw StructuralError("schema: empty column name");
    if (!seen.insert(c).second) throw StructuralError("schema: column '" + c + "' listed twice");
  }
  for (const auto& r : ranges) {
    if (!seen.count(r.column)) throw StructuralError("schema: range on unused column '" + r.column + "'");
    if (r.min && r.max && *r.min > *r.max) throw StructuralError("schema: empty range on '" + r.column + "'");
  }
  standardization1.validate();
  standardization2.validate();
}

IngestResult ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  schema.validate();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StructuralError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw StructuralError(path.string() + ": empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);

  const auto cols = relevant_columns(schema);
  std::vector<std::string> missing;
  std::vector<std::size_t> index;
  for (const auto& c : cols) {
    const auto it = position.find(c);
    if (it == position.end())
      missing.push_back(c);
    else
      index.push_back(it->second);
  }
  if (!missing.empty()) {
    std::string msg = path.string() + ": columns missing from header:";
    for (const auto& m : missing) msg += " " + m;
    throw StructuralError(msg);
  }

  std::vector<std::pair<std::size_t, const ColumnRange*>> ranges;
  for (const auto& r : schema.ranges) {
    const auto k = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), r.column) - cols.begin());
    ranges.emplace_back(k, &r);
  }

  IngestResult result;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++result.rows_read;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw StructuralError(path.string() + ": line " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, header has " + std::to_string(header.size()));
    std::vector<double> values(cols.size());
    bool incomplete = false;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto& f = fields[index[k]];
      if (std::find(schema.missing_tokens.begin(), schema.missing_tokens.end(), f) != schema.missing_tokens.end()) {
        incomplete = true;
        break;
      }
      try {
        values[k] = parse_double(f);
      } catch (const StructuralError&) {
        throw StructuralError(path.string() + ": line " + std::to_string(line_no) + ", column '" + cols[k] +
                              "': cannot parse '" + f + "'");
      }
      if (!std::isfinite(values[k])) {
        incomplete = true;
        break;
      }
    }
    if (incomplete) {
      ++result.removed_missing;
      continue;
    }
    const bool outside = std::any_of(ranges.begin(), ranges.end(), [&](const auto& r) {
      const double v = values[r.first];
      return (r.second->min && v < *r.second->min) || (r.second->max && v > *r.second->max);
    });
    if (outside) {
      ++result.removed_range;
      continue;
    }
    rows.push_back(std::move(values));
  }

  Dataset& d = result.data;
  d.covariate_names = schema.covariates;
  d.standardization1 = schema.standardization1;
  d.standardization2 = schema.standardization2;
  d.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(schema.covariates.size()));
  d.y1.reserve(rows.size());
  d.y2.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d.y1.push_back(schema.standardization1.forward(rows[i][0]));
    d.y2.push_back(schema.standardization2.forward(rows[i][1]));
    for (std::size_t j = 0; j < schema.covariates.size(); ++j)
      d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j + 2];
  }
  d.validate();
  return result;
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data, const std::string& response1,
                       const std::string& response2) {
  data.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StructuralError("cannot open " + path.string() + " for writing");
  out << response1 << ',' << response2;
  for (const auto& c : data.covariate_names) out << ',' << c;
  out << '\n';
  const auto y1 = raw_response(data, 1);
  const auto y2 = raw_response(data, 2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << format_double(y1[i]) << ',' << format_double(y2[i]);
    for (Eigen::Index j = 0; j < data.x.cols(); ++j)
      out << ',' << format_double(data.x(static_cast<Eigen::Index>(i), j));
    out << '\n';
  }
}

nlohmann::json to_json(const CsvSchema& schema) {
  nlohmann::json j{{"response1", schema.response1},
                   {"response2", schema.response2},
                   {"covariates", schema.covariates},
                   {"standardization1", to_json(schema.standardization1)},
                   {"standardization2", to_json(schema.standardization2)},
                   {"missing_tokens", schema.missing_tokens}};
  auto ranges = nlohmann::json::array();
  for (const auto& r : schema.ranges) {
    nlohmann::json e{{"column", r.column}};
    if (r.min) e["min"] = *r.min;
    if (r.max) e["max"] = *r.max;
    ranges.push_back(e);
  }
  j["ranges"] = ranges;
  return j;
}

CsvSchema csv_schema_from_json(const nlohmann::json& j) {
  CsvSchema s;
  s.response1 = j.value("response1", s.response1);
  s.response2 = j.value("response2", s.response2);
  s.covariates = j.value("covariates", s.covariates);
  if (j.contains("standardization1")) s.standardization1 = standardization_from_json(j.at("standardization1"));
  if (j.contains("standardization2")) s.standardization2 = standardization_from_json(j.at("standardization2"));
  s.missing_tokens = j.value("missing_tokens", s.missing_tokens);
  if (j.contains("ranges"))
    for (const auto& e : j.at("ranges")) {
      ColumnRange r{e.at("column").get<std::string>(), std::nullopt, std::nullopt};
      if (e.contains("min")) r.min = e.at("min").get<double>();
      if (e.contains("max")) r.max = e.at("max").get<double>();
      s.ranges.push_back(r);
    }
  s.validate();
  return s;
}

}  // namespace copreg
