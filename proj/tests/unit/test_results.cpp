#include "gridsweep/results.hpp"

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "doctest.h"

using namespace gridsweep;

namespace {

ResultTable sample_table() {
  ResultTable t;
  t.titles = {"n_tasks", "n_agents", "Options", "optimal_cost", "elapsed_sec"};
  t.rows = {
      {2, 2, "", 17, 0.001},
      {2, 2, "NO_CUTOFFS", 17, 0.002},
      {2, 3, "", 9, 0.001},
      {3, 3, "HEURISTIC", 40, 0.004},
      {3, 3, "", 40, 0.003},
  };
  return t;
}

}  // namespace

TEST_CASE("cells format and parse back") {
  CHECK(format_cell(Json(5)) == "5");
  CHECK(format_cell(Json(2.5)) == "2.5");
  CHECK(format_cell(Json("NO_CUTOFFS")) == "NO_CUTOFFS");
  CHECK(format_cell(Json("has\ttab\nand newline")) == "has tab and newline");
  CHECK(format_cell(Json(true)) == "true");
  CHECK(parse_cell("5") == Json(5));
  CHECK(parse_cell("2.5") == Json(2.5));
  CHECK(parse_cell("NO_CUTOFFS") == Json("NO_CUTOFFS"));
  CHECK(parse_cell("true") == Json(true));
  CHECK(parse_cell("") == Json(""));
}

TEST_CASE("tsv round-trip") {
  ResultTable t = sample_table();
  std::string text = to_tsv(t);
  // Header plus one line per row, tab-separated.
  CHECK(text.substr(0, text.find('\n')) ==
        "n_tasks\tn_agents\tOptions\toptimal_cost\telapsed_sec");
  ResultTable back = parse_tsv(text);
  CHECK(back == t);
}

TEST_CASE("results file write is atomic and reads back") {
  std::string path = "test_results_tmp.tsv";
  ResultTable t = sample_table();
  write_results_file(path, t);
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  CHECK(read_results_file(path) == t);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_results_file(path), std::runtime_error);
}

TEST_CASE("row filtering matches rendered values") {
  ResultTable t = sample_table();
  ResultTable only22 = filter_rows(t, {{"n_tasks", "2"}, {"n_agents", "2"}});
  CHECK(only22.rows.size() == 2);
  ResultTable plain = filter_rows(t, {{"Options", ""}});
  CHECK(plain.rows.size() == 3);
  ResultTable none = filter_rows(t, {{"optimal_cost", "999"}});
  CHECK(none.rows.empty());
  CHECK(none.titles == t.titles);
  CHECK_THROWS_AS(filter_rows(t, {{"bogus_column", "1"}}),
                  std::invalid_argument);
}

TEST_CASE("group aggregation averages numeric columns") {
  ResultTable t = sample_table();
  ResultTable agg = aggregate_groups(t, {"n_tasks", "n_agents"});
  // Options is non-numeric and not grouped, so it is dropped.
  REQUIRE(agg.titles == std::vector<std::string>(
                            {"n_tasks", "n_agents", "mean_optimal_cost",
                             "mean_elapsed_sec"}));
  REQUIRE(agg.rows.size() == 3);  // groups in first-appearance order
  CHECK(agg.rows[0][0] == Json(2));
  CHECK(agg.rows[0][1] == Json(2));
  CHECK(agg.rows[0][2].get<double>() == doctest::Approx(17.0));
  CHECK(agg.rows[0][3].get<double>() == doctest::Approx(0.0015));
  CHECK(agg.rows[1][2].get<double>() == doctest::Approx(9.0));
  CHECK(agg.rows[2][2].get<double>() == doctest::Approx(40.0));
  CHECK_THROWS_AS(aggregate_groups(t, {"missing"}), std::invalid_argument);
}

TEST_CASE("aligned rendering pads columns") {
  ResultTable t;
  t.titles = {"name", "value"};
  t.rows = {{"longer_name", 1}, {"x", 12345}};
  std::string out = render_aligned(t);
  // Columns line up: every line's second column starts at the same offset.
  std::istringstream in(out);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  std::size_t col = lines[1].find("1");
  CHECK(lines[0].find("value") == col);
  CHECK(lines[2].find("12345") == col);
}

TEST_CASE("empty table renders header only") {
  ResultTable t;
  t.titles = {"a", "b"};
  CHECK(parse_tsv(to_tsv(t)) == t);
  ResultTable agg = aggregate_groups(t, {"a"});
  CHECK(agg.rows.empty());
}
