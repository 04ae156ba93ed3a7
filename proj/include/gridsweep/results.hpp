#pragma once

#include <string>
#include <vector>

#include "gridsweep/task.hpp"

namespace gridsweep {

// The final experiment output: one column per parameter and result title,
// rows in original task order, groups below min_group_size already dropped.
struct ResultTable {
  std::vector<std::string> titles;
  std::vector<ParamTuple> rows;

  bool operator==(const ResultTable& other) const = default;
};

// Strings render bare, everything else as JSON. Cells must not contain tabs
// or newlines; offending characters are replaced with spaces.
std::string format_cell(const Json& value);

// Inverse of format_cell for scalar cells: JSON scalars parse back to their
// typed value, anything else stays a string.
Json parse_cell(const std::string& cell);

std::string to_tsv(const ResultTable& table);
ResultTable parse_tsv(const std::string& text);

// Write is atomic (temp file + rename) so readers never see a partial table.
void write_results_file(const std::string& path, const ResultTable& table);
ResultTable read_results_file(const std::string& path);

// Keeps rows where every (title, rendered value) filter matches.
ResultTable filter_rows(
    const ResultTable& table,
    const std::vector<std::pair<std::string, std::string>>& filters);

// Groups rows by the given columns and averages the numeric non-group
// columns; non-numeric non-group columns are dropped. Group order follows
// first appearance.
ResultTable aggregate_groups(const ResultTable& table,
                             const std::vector<std::string>& group_titles);

// Column-aligned rendering for terminal output.
std::string render_aligned(const ResultTable& table);

}  // namespace gridsweep
