#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "subtree/common.hpp"

namespace subtree {

// Column roles, as given in the roles file:
//   r response, t treatment, d event indicator, n ordinal predictor,
//   c categorical predictor, x excluded.
enum class Role { Response, Treatment, Event, Ordinal, Categorical, Excluded };

const char* role_name(Role r);

struct Column {
  std::string name;
  Role role = Role::Excluded;
  // Numeric payload for response / event / ordinal columns (NaN at missing).
  std::vector<double> num;
  // Level codes for treatment / categorical columns (-1 at missing).
  std::vector<int> code;
  // Level dictionary in order of first appearance.
  std::vector<std::string> levels;
  std::vector<char> miss;  // 1 where the cell was NA/empty
  bool has_missing = false;

  bool is_factor() const {
    return role == Role::Treatment || role == Role::Categorical;
  }
};

// Column-major table. Nodes and resamples reference rows of one immutable
// Dataset by index; no cell is ever copied per node.
struct Dataset {
  std::vector<Column> cols;
  std::size_t n = 0;
  int response = -1;   // column index or -1
  int treatment = -1;
  int event = -1;
  std::vector<int> predictors;  // ordinal+categorical columns, file order

  const Column& col(int i) const { return cols[static_cast<std::size_t>(i)]; }
  int col_index(const std::string& name) const;
  int n_treatment_levels() const {
    return treatment < 0 ? 0 : static_cast<int>(cols[treatment].levels.size());
  }
  const std::vector<double>& y() const { return cols[response].num; }
  const std::vector<int>& z() const { return cols[treatment].code; }
  std::vector<int> all_rows() const;
};

// Loads an RFC-4180-style CSV (header row required, quoted fields, "" escape)
// plus a roles file of lines "<name> <code>". Missing cells are the literal
// token NA (case-sensitive) or an empty field. Throws InputError on malformed
// input: unknown role code, column without a role, role naming an absent
// column, non-numeric ordinal cell, missing response/treatment/event cell,
// event value outside {0,1}, duplicate header names.
Dataset load_dataset(const std::filesystem::path& csv_path,
                     const std::filesystem::path& roles_path);

// Writes the dataset back to CSV; reload gives identical cells and masks.
void write_csv(const Dataset& ds, const std::filesystem::path& path);

// New dataset holding the given rows (repeats allowed, order kept). Roles,
// column order, and level dictionaries are preserved, so level codes stay
// comparable with the source dataset.
Dataset subset_rows(const Dataset& ds, const std::vector<int>& rows);

// Node-level factor view of one predictor column over a row subset.
// Ordinal: two groups split at the mean of the subset's non-missing values
// (group 0 = "<= mean", group 1 = "> mean"); categorical: one group per level
// present in the subset, dictionary order. A trailing missing group is added
// iff the subset has missing cells.
struct FactorGrouping {
  std::vector<int> level;   // group index per position of `rows`
  int n_levels = 0;         // includes the missing group when present
  int missing_level = -1;   // index of the missing group, or -1
  int populated = 0;        // groups with at least one row
  bool degenerate = true;   // fewer than 2 populated groups
  double mean = 0.0;        // ordinal split mean (unset for categorical)
  // Dataset-level code per group (categorical); -1 for the missing group.
  std::vector<int> source_level;
  std::vector<std::string> labels;
};

FactorGrouping group_rows(const Dataset& ds, int col,
                          const std::vector<int>& rows);

}  // namespace subtree
