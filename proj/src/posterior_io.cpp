#include <charconv>
#include <fstream>
#include <sstream>

#include "copreg/error.hpp"
#include "copreg/inference.hpp"

namespace copreg {

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return {buf, res.ptr};
}

double parse_double(std::string_view s) {
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw StructuralError("cannot parse number '" + std::string(s) + "'");
  return x;
}

void write_posterior(const PosteriorSamples& samples, const std::filesystem::path& csv_path,
                     const std::filesystem::path& sidecar_path) {
  samples.validate();
  for (const auto& l : samples.labels)
    if (l.find_first_of(",\"\n") != std::string::npos)
      throw StructuralError("coefficient label '" + l + "' cannot be written to CSV");

  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw StructuralError("cannot open " + csv_path.string() + " for writing");
  csv << "chain,draw";
  for (const auto& l : samples.labels) csv << ',' << l;
  csv << '\n';
  for (std::size_t c = 0; c < samples.chains.size(); ++c) {
    const auto& m = samples.chains[c];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      csv << c << ',' << r;
      for (Eigen::Index k = 0; k < m.cols(); ++k) csv << ',' << format_double(m(r, k));
      csv << '\n';
    }
  }
  if (!csv) throw StructuralError("error writing " + csv_path.string());

  nlohmann::json j;
  j["format"] = "copreg-posterior";
  j["version"] = 1;
  j["labels"] = samples.labels;
  j["structure"] = to_json(samples.structure);
  j["config"] = to_json(samples.config);
  j["chain_seeds"] = samples.chain_seeds;
  j["draws_per_chain"] = samples.draws_per_chain();
  j["blocks"] = samples.block_names;
  j["acceptance"] = samples.acceptance;
  std::ofstream side(sidecar_path, std::ios::binary);
  if (!side) throw StructuralError("cannot open " + sidecar_path.string() + " for writing");
  side << j.dump(2) << '\n';
}

PosteriorSamples read_posterior(const std::filesystem::path& csv_path, const std::filesystem::path& sidecar_path) {
  std::ifstream side(sidecar_path);
  if (!side) throw StructuralError("cannot open " + sidecar_path.string());
  PosteriorSamples s;
  std::size_t draws = 0;
  try {
    const auto j = nlohmann::json::parse(side);
    if (j.value("format", "") != "copreg-posterior") throw StructuralError("not a posterior sidecar");
    s.labels = j.at("labels").get<std::vector<std::string>>();
    s.structure = structure_from_json(j.at("structure"));
    s.config = mcmc_config_from_json(j.at("config"));
    s.chain_seeds = j.at("chain_seeds").get<std::vector<std::uint64_t>>();
    s.block_names = j.value("blocks", std::vector<std::string>{});
    s.acceptance = j.value("acceptance", std::vector<std::vector<double>>{});
    draws = j.at("draws_per_chain").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("posterior sidecar: ") + e.what());
  }

  std::ifstream csv(csv_path);
  if (!csv) throw StructuralError("cannot open " + csv_path.string());
  std::string line;
  std::getline(csv, line);
  {
    std::string expected = "chain,draw";
    for (const auto& l : s.labels) expected += "," + l;
    if (line != expected) throw StructuralError("posterior csv header does not match the sidecar labels");
  }
  const auto k = static_cast<Eigen::Index>(s.labels.size());
  s.chains.assign(s.chain_seeds.size(), Eigen::MatrixXd(static_cast<Eigen::Index>(draws), k));
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    for (;;) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != s.labels.size() + 2)
      throw StructuralError("posterior csv: wrong field count on data row " + std::to_string(rows));
    const auto c = static_cast<std::size_t>(parse_double(fields[0]));
    const auto r = static_cast<Eigen::Index>(parse_double(fields[1]));
    if (c >= s.chains.size() || r < 0 || r >= static_cast<Eigen::Index>(draws))
      throw StructuralError("posterior csv: chain/draw index out of range");
    for (Eigen::Index j = 0; j < k; ++j) s.chains[c](r, j) = parse_double(fields[static_cast<std::size_t>(j) + 2]);
    ++rows;
  }
  if (rows != draws * s.chains.size()) throw StructuralError("posterior csv: row count does not match the sidecar");
  s.validate();
  return s;
}

}  // namespace copreg
