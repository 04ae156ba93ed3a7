#include "gridsweep/results.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace gridsweep {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

}  // namespace

std::string format_cell(const Json& value) {
  std::string s = value.is_string() ? value.get<std::string>() : value.dump();
  for (char& c : s) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

Json parse_cell(const std::string& cell) {
  Json parsed = Json::parse(cell, nullptr, false);
  if (!parsed.is_discarded() && !parsed.is_string()) return parsed;
  return cell;
}

std::string to_tsv(const ResultTable& table) {
  std::ostringstream out;
  for (std::size_t i = 0; i < table.titles.size(); ++i) {
    if (i) out << '\t';
    out << table.titles[i];
  }
  out << '\n';
  for (const ParamTuple& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << '\t';
      out << format_cell(row[i]);
    }
    out << '\n';
  }
  return out.str();
}

ResultTable parse_tsv(const std::string& text) {
  ResultTable table;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells = split_tabs(line);
    if (!have_header) {
      table.titles = std::move(cells);
      have_header = true;
      continue;
    }
    ParamTuple row;
    for (const std::string& cell : cells) row.push_back(parse_cell(cell));
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_results_file(const std::string& path, const ResultTable& table) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << to_tsv(table);
  }
  std::filesystem::rename(tmp, path);
}

ResultTable read_results_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_tsv(buf.str());
}

ResultTable filter_rows(
    const ResultTable& table,
    const std::vector<std::pair<std::string, std::string>>& filters) {
  std::vector<std::pair<std::size_t, std::string>> checks;
  for (const auto& [title, value] : filters) {
    auto it = std::find(table.titles.begin(), table.titles.end(), title);
    if (it == table.titles.end()) {
      throw std::invalid_argument("no such column: " + title);
    }
    checks.emplace_back(it - table.titles.begin(), value);
  }
  ResultTable out;
  out.titles = table.titles;
  for (const ParamTuple& row : table.rows) {
    bool keep = true;
    for (const auto& [idx, value] : checks) {
      if (idx >= row.size() || format_cell(row[idx]) != value) {
        keep = false;
        break;
      }
    }
    if (keep) out.rows.push_back(row);
  }
  return out;
}

ResultTable aggregate_groups(const ResultTable& table,
                             const std::vector<std::string>& group_titles) {
  std::vector<std::size_t> group_idx;
  for (const std::string& title : group_titles) {
    auto it = std::find(table.titles.begin(), table.titles.end(), title);
    if (it == table.titles.end()) {
      throw std::invalid_argument("no such column: " + title);
    }
    group_idx.push_back(it - table.titles.begin());
  }
  std::vector<std::size_t> value_idx;
  for (std::size_t i = 0; i < table.titles.size(); ++i) {
    bool is_group =
        std::find(group_idx.begin(), group_idx.end(), i) != group_idx.end();
    if (is_group) continue;
    bool numeric = !table.rows.empty();
    for (const ParamTuple& row : table.rows) {
      if (i >= row.size() || !row[i].is_number()) {
        numeric = false;
        break;
      }
    }
    if (numeric) value_idx.push_back(i);
  }

  ResultTable out;
  for (std::size_t i : group_idx) out.titles.push_back(table.titles[i]);
  for (std::size_t i : value_idx) {
    out.titles.push_back("mean_" + table.titles[i]);
  }

  std::vector<std::string> order;
  std::map<std::string, std::pair<ParamTuple, std::vector<double>>> groups;
  std::map<std::string, int> counts;
  for (const ParamTuple& row : table.rows) {
    ParamTuple key;
    for (std::size_t i : group_idx) {
      key.push_back(i < row.size() ? row[i] : Json());
    }
    std::string key_str = Json(key).dump();
    auto [it, inserted] =
        groups.try_emplace(key_str, key, std::vector<double>(value_idx.size()));
    if (inserted) order.push_back(key_str);
    for (std::size_t k = 0; k < value_idx.size(); ++k) {
      it->second.second[k] += row[value_idx[k]].get<double>();
    }
    ++counts[key_str];
  }
  for (const std::string& key_str : order) {
    const auto& [key, sums] = groups.at(key_str);
    ParamTuple row = key;
    for (double sum : sums) row.push_back(sum / counts.at(key_str));
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string render_aligned(const ResultTable& table) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back(table.titles);
  for (const ParamTuple& row : table.rows) {
    std::vector<std::string> line;
    for (const Json& v : row) line.push_back(format_cell(v));
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> widths;
  for (const auto& line : cells) {
    if (widths.size() < line.size()) widths.resize(line.size());
    for (std::size_t i = 0; i < line.size(); ++i) {
      widths[i] = std::max(widths[i], line[i].size());
    }
  }
  std::ostringstream out;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i) out << "  ";
      out << line[i];
      if (i + 1 < line.size()) {
        out << std::string(widths[i] - line[i].size(), ' ');
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace gridsweep
