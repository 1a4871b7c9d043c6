#pragma once

// CSV and JSON rendering of reports. CSV files start with a "# schema: ..."
// comment line naming the layout version.

#include <string>
#include <vector>

#include <json.hpp>

#include "rsr/attacks.hpp"
#include "rsr/pruning.hpp"
#include "rsr/training.hpp"

namespace rsr::io {

using nlohmann::json;

struct CsvTable {
  std::string schema;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws if absent.
  std::size_t column(const std::string& name) const;
  friend bool operator==(const CsvTable&, const CsvTable&) = default;
};

/// Fields containing commas, quotes or newlines are quoted.
std::string to_csv(const CsvTable& t);
CsvTable parse_csv(const std::string& text);

/// Two decimals, for accuracies and percentages.
std::string fixed2(double v);
/// Shortest form that reads back to the same double.
std::string exact(double v);

json to_json(const attack::AttackSpec& s);
json to_json(const attack::EvaluationReport& r);
json to_json(const prune::SparsityReport& r);
json to_json(const std::vector<train::EpochRecord>& history);

CsvTable history_table(const std::vector<train::EpochRecord>& history);

/// Stable pretty-printed JSON text with a trailing newline.
std::string dump(const json& j);

}  // namespace rsr::io
