#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rbs/common.hpp"

namespace rbs {

// ---------------------------------------------------------------------------
// Preference-data cost estimator.
//
// Candidate generation treats each pair as one call: the prompt (plus a fixed
// input overhead) goes in, the preferred and rejected completions come out.
// Judge annotation sends prompt + both completions + a rubric overhead in and
// a fixed decision budget out. Prices are dollars per million tokens and are
// always parameters; internal arithmetic is full precision and rounding only
// happens when a table is formatted.
// ---------------------------------------------------------------------------

struct DatasetCostRow {
  std::string name;
  std::uint64_t n_pairs = 0;
  double prompt_len = 0.0;
  double pref_len = 0.0;
  double rej_len = 0.0;

  void validate() const {
    if (prompt_len < 0.0 || pref_len < 0.0 || rej_len < 0.0) {
      throw DataError("cost row '" + name + "': lengths must be non-negative");
    }
  }
};

struct PriceSpec {
  double p_in = 0.0;        // $/1M input tokens
  double p_out = 0.0;       // $/1M output tokens
  double o_in_gen = 0.0;    // generation input overhead tokens per pair
  double o_in_judge = 40.0; // judge input overhead tokens per pair
  double o_out_judge = 40.0;// judge output budget tokens per pair

  /// Published per-token rates.
  static PriceSpec stated() { return PriceSpec{2.50, 10.00, 0.0, 40.0, 40.0}; }
  /// Rates that reproduce the reference generation-cost table, a uniform 0.8x
  /// of the stated rates.
  static PriceSpec table3_effective() { return PriceSpec{2.00, 8.00, 0.0, 40.0, 40.0}; }

  void validate() const {
    if (p_in < 0.0 || p_out < 0.0) throw ConfigError("prices must be non-negative");
  }
};

struct CostReport {
  double t_in = 0.0;          // input tokens
  double t_out = 0.0;         // output tokens
  double cost = 0.0;          // dollars
  double cost_per_pair = 0.0; // dollars, 0 when the row is empty
};

/// T_in = N * (PromptLen + O_in), T_out = N * (PrefLen + RejLen).
inline CostReport generation_cost(const DatasetCostRow& row, const PriceSpec& prices) {
  row.validate();
  prices.validate();
  CostReport r;
  const double n = static_cast<double>(row.n_pairs);
  const double t_cand = row.pref_len + row.rej_len;
  r.t_in = n * (row.prompt_len + prices.o_in_gen);
  r.t_out = n * t_cand;
  r.cost = r.t_in / 1e6 * prices.p_in + r.t_out / 1e6 * prices.p_out;
  r.cost_per_pair = row.n_pairs > 0 ? r.cost / n : 0.0;
  return r;
}

/// T_in = N * (PromptLen + PrefLen + RejLen + O_in), T_out = N * O_out.
inline CostReport annotation_cost(const DatasetCostRow& row, const PriceSpec& prices) {
  row.validate();
  prices.validate();
  CostReport r;
  const double n = static_cast<double>(row.n_pairs);
  const double t_content = row.prompt_len + row.pref_len + row.rej_len;
  r.t_in = n * (t_content + prices.o_in_judge);
  r.t_out = n * prices.o_out_judge;
  r.cost = r.t_in / 1e6 * prices.p_in + r.t_out / 1e6 * prices.p_out;
  r.cost_per_pair = row.n_pairs > 0 ? r.cost / n : 0.0;
  return r;
}

enum class CostMode { kGeneration, kAnnotation };

struct CostTable {
  CostMode mode = CostMode::kGeneration;
  std::vector<DatasetCostRow> rows;
  std::vector<CostReport> reports;
  double total_cost = 0.0;
};

inline CostTable cost_table(std::span<const DatasetCostRow> rows, const PriceSpec& prices,
                            CostMode mode) {
  if (rows.empty()) throw ConfigError("cost_table: no rows");
  CostTable table;
  table.mode = mode;
  for (const auto& row : rows) {
    const CostReport r =
        mode == CostMode::kGeneration ? generation_cost(row, prices) : annotation_cost(row, prices);
    table.rows.push_back(row);
    table.reports.push_back(r);
    table.total_cost += r.cost;
  }
  return table;
}

// ---------------------------------------------------------------------------
// Formatting. Token totals are shown in millions to 2 decimals, dollars to
// cents, per-pair cost to 5 decimals.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

}  // namespace detail

inline std::string cost_table_to_csv(const CostTable& table) {
  const bool gen = table.mode == CostMode::kGeneration;
  std::string out = gen ? "name,n_pairs,prompt_len,pref_len,rej_len,t_cand,overhead_in,"
                          "t_in_m,t_out_m,cost,cost_per_pair\n"
                        : "name,n_pairs,prompt_len,pref_len,rej_len,t_content,overhead_in,"
                          "overhead_out,t_in_m,t_out_m,cost,cost_per_pair\n";
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const auto& r = table.reports[i];
    out += row.name + ',' + std::to_string(row.n_pairs) + ',' + detail::fixed(row.prompt_len, 1) +
           ',' + detail::fixed(row.pref_len, 1) + ',' + detail::fixed(row.rej_len, 1) + ',';
    if (gen) {
      out += detail::fixed(row.pref_len + row.rej_len, 1) + ',' +
             detail::fixed(r.t_in / static_cast<double>(row.n_pairs) - row.prompt_len, 0) + ',';
    } else {
      out += detail::fixed(row.prompt_len + row.pref_len + row.rej_len, 1) + ',' +
             detail::fixed(
                 r.t_in / static_cast<double>(row.n_pairs) -
                     (row.prompt_len + row.pref_len + row.rej_len),
                 0) +
             ',' + detail::fixed(r.t_out / static_cast<double>(row.n_pairs), 0) + ',';
    }
    out += detail::fixed(r.t_in / 1e6, 2) + ',' + detail::fixed(r.t_out / 1e6, 2) + ',' +
           detail::fixed(r.cost, 2) + ',' + detail::fixed(r.cost_per_pair, 5) + '\n';
  }
  const std::size_t n_cols = gen ? 11 : 12;
  std::vector<std::string> total_row(n_cols);
  total_row[0] = "TOTAL";
  total_row[n_cols - 2] = detail::fixed(table.total_cost, 2);
  for (std::size_t i = 0; i < n_cols; ++i) {
    if (i > 0) out += ',';
    out += total_row[i];
  }
  out += '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Row input: CSV `name,N,prompt_len,pref_len,rej_len`, optional header line.
// ---------------------------------------------------------------------------

inline std::vector<DatasetCostRow> parse_cost_rows_csv(std::string_view text,
                                                       const std::string& where) {
  std::vector<DatasetCostRow> rows;
  std::istringstream lines{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("name,", 0) == 0) continue;  // header
    std::istringstream fields(line);
    std::string field;
    std::vector<std::string> parts;
    while (std::getline(fields, field, ',')) parts.push_back(field);
    if (parts.size() != 5) {
      throw DataError(where + ":" + std::to_string(lineno) + ": expected 5 fields, got " +
                      std::to_string(parts.size()));
    }
    DatasetCostRow row;
    row.name = parts[0];
    try {
      row.n_pairs = std::stoull(parts[1]);
      row.prompt_len = std::stod(parts[2]);
      row.pref_len = std::stod(parts[3]);
      row.rej_len = std::stod(parts[4]);
    } catch (const std::exception&) {
      throw DataError(where + ":" + std::to_string(lineno) + ": malformed numeric field");
    }
    row.validate();
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(where + ": no cost rows found");
  return rows;
}

inline std::vector<DatasetCostRow> read_cost_rows_csv(const std::filesystem::path& path) {
  return parse_cost_rows_csv(read_file(path), path.string());
}

/// The ten preference datasets whose published statistics ship with the tool.
/// Both the generation and annotation estimates consume the same rows.
inline const std::vector<DatasetCostRow>& bundled_dataset_rows() {
  static const std::vector<DatasetCostRow> rows = {
      {"HH-RLHF", 115396, 160.4, 82.2, 73.6},
      {"SHP", 93301, 186.2, 173.6, 88.8},
      {"HelpSteer", 37131, 530.0, 116.4, 89.3},
      {"PKU-SafeRLHF-30K", 26874, 21.5, 70.4, 74.6},
      {"UltraFeedback", 340025, 161.5, 279.5, 211.1},
      {"UltraInteract", 161927, 507.4, 396.6, 416.7},
      {"CodeUltraFeedback", 50156, 172.8, 427.6, 400.6},
      {"Argilla-Math", 2418, 36.5, 276.5, 265.3},
      {"OpenOrca", 6926, 153.3, 165.4, 260.5},
      {"Capybara", 14811, 634.5, 348.4, 401.9},
  };
  return rows;
}

}  // namespace rbs
