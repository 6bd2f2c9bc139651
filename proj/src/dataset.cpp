#include "subtree/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace subtree {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA"; }

// One RFC-4180 record; handles quoted fields, "" escapes and embedded
// newlines. Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& out) {
  out.clear();
  std::string field;
  bool quoted = false;
  bool any = false;
  int c;
  while ((c = in.get()) != EOF) {
    any = true;
    char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && field.empty()) {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else if (ch == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      out.push_back(field);
      return true;
    } else {
      field.push_back(ch);
    }
  }
  if (!any) return false;
  if (!field.empty() && field.back() == '\r') field.pop_back();
  out.push_back(field);
  return true;
}

double parse_number(const std::string& s, const std::string& col,
                    std::size_t row) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end != begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
  double v = 0.0;
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw InputError("column '" + col + "', row " + std::to_string(row + 1) +
                     ": cannot parse '" + s + "' as a number");
  }
  return v;
}

Role parse_role_code(const std::string& code, const std::string& name) {
  if (code == "r") return Role::Response;
  if (code == "t") return Role::Treatment;
  if (code == "d") return Role::Event;
  if (code == "n") return Role::Ordinal;
  if (code == "c") return Role::Categorical;
  if (code == "x") return Role::Excluded;
  throw InputError("roles file: unknown code '" + code + "' for column '" +
                   name + "'");
}

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += "\"\"";
    else out.push_back(ch);
  }
  out += "\"";
  return out;
}

std::string format_number(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

const char* role_name(Role r) {
  switch (r) {
    case Role::Response: return "response";
    case Role::Treatment: return "treatment";
    case Role::Event: return "event";
    case Role::Ordinal: return "ordinal";
    case Role::Categorical: return "categorical";
    case Role::Excluded: return "excluded";
  }
  return "?";
}

int Dataset::col_index(const std::string& name) const {
  for (std::size_t i = 0; i < cols.size(); ++i)
    if (cols[i].name == name) return static_cast<int>(i);
  return -1;
}

std::vector<int> Dataset::all_rows() const {
  std::vector<int> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

Dataset load_dataset(const std::filesystem::path& csv_path,
                     const std::filesystem::path& roles_path) {
  std::ifstream roles_in(roles_path);
  if (!roles_in) throw InputError("cannot open roles file: " + roles_path.string());
  std::unordered_map<std::string, Role> role_of;
  std::string line;
  while (std::getline(roles_in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string name, code, extra;
    if (!(ls >> name)) continue;  // blank line
    if (!(ls >> code) || (ls >> extra)) {
      throw InputError("roles file: malformed line '" + line + "'");
    }
    if (role_of.count(name)) {
      throw InputError("roles file: duplicate entry for column '" + name + "'");
    }
    role_of[name] = parse_role_code(code, name);
  }

  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw InputError("cannot open data file: " + csv_path.string());
  std::vector<std::string> header;
  if (!read_record(in, header) || header.empty()) {
    throw InputError(csv_path.string() + ": missing header row");
  }

  Dataset ds;
  ds.cols.resize(header.size());
  std::unordered_map<std::string, int> seen;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const std::string& name = header[j];
    if (seen.count(name)) {
      throw InputError("duplicate column name in header: '" + name + "'");
    }
    seen[name] = static_cast<int>(j);
    auto it = role_of.find(name);
    if (it == role_of.end()) {
      throw InputError("column '" + name + "' has no entry in the roles file");
    }
    ds.cols[j].name = name;
    ds.cols[j].role = it->second;
  }
  for (const auto& [name, role] : role_of) {
    if (!seen.count(name)) {
      throw InputError("roles file names absent column '" + name + "'");
    }
  }

  std::vector<std::unordered_map<std::string, int>> level_of(header.size());
  std::vector<std::string> record;
  std::size_t row = 0;
  while (read_record(in, record)) {
    if (record.size() == 1 && record[0].empty()) continue;  // trailing newline
    if (record.size() != header.size()) {
      throw InputError(csv_path.string() + ": row " + std::to_string(row + 1) +
                       " has " + std::to_string(record.size()) +
                       " fields, expected " + std::to_string(header.size()));
    }
    for (std::size_t j = 0; j < record.size(); ++j) {
      Column& c = ds.cols[j];
      const std::string& cell = record[j];
      bool missing = is_missing_token(cell);
      switch (c.role) {
        case Role::Response:
        case Role::Event:
          if (missing) {
            throw InputError("column '" + c.name + "' (" + role_name(c.role) +
                             "), row " + std::to_string(row + 1) +
                             ": missing value not allowed");
          }
          c.num.push_back(parse_number(cell, c.name, row));
          c.miss.push_back(0);
          break;
        case Role::Ordinal:
          if (missing) {
            c.num.push_back(kNaN);
            c.miss.push_back(1);
            c.has_missing = true;
          } else {
            c.num.push_back(parse_number(cell, c.name, row));
            c.miss.push_back(0);
          }
          break;
        case Role::Treatment:
        case Role::Categorical: {
          if (missing) {
            if (c.role == Role::Treatment) {
              throw InputError("column '" + c.name + "' (treatment), row " +
                               std::to_string(row + 1) +
                               ": missing value not allowed");
            }
            c.code.push_back(-1);
            c.miss.push_back(1);
            c.has_missing = true;
          } else {
            auto& dict = level_of[j];
            auto it = dict.find(cell);
            int code;
            if (it == dict.end()) {
              code = static_cast<int>(c.levels.size());
              dict[cell] = code;
              c.levels.push_back(cell);
            } else {
              code = it->second;
            }
            c.code.push_back(code);
            c.miss.push_back(0);
          }
          break;
        }
        case Role::Excluded:
          c.miss.push_back(missing ? 1 : 0);
          c.levels.push_back(cell);  // raw text kept for round trips
          break;
      }
    }
    ++row;
  }
  if (row == 0) throw InputError(csv_path.string() + ": no data rows");
  ds.n = row;

  for (std::size_t j = 0; j < ds.cols.size(); ++j) {
    Column& c = ds.cols[j];
    int idx = static_cast<int>(j);
    switch (c.role) {
      case Role::Response:
        if (ds.response >= 0) throw InputError("more than one response column");
        ds.response = idx;
        break;
      case Role::Treatment:
        if (ds.treatment >= 0) throw InputError("more than one treatment column");
        ds.treatment = idx;
        break;
      case Role::Event: {
        if (ds.event >= 0) throw InputError("more than one event column");
        ds.event = idx;
        for (std::size_t i = 0; i < c.num.size(); ++i) {
          if (c.num[i] != 0.0 && c.num[i] != 1.0) {
            throw InputError("column '" + c.name + "' (event), row " +
                             std::to_string(i + 1) +
                             ": values must be 0 or 1");
          }
        }
        break;
      }
      case Role::Ordinal:
      case Role::Categorical:
        ds.predictors.push_back(idx);
        break;
      case Role::Excluded:
        break;
    }
  }
  if (ds.response < 0) throw InputError("no response column (role r)");
  return ds;
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::string out;
  for (std::size_t j = 0; j < ds.cols.size(); ++j) {
    if (j) out += ',';
    out += quote_csv(ds.cols[j].name);
  }
  out += '\n';
  for (std::size_t i = 0; i < ds.n; ++i) {
    for (std::size_t j = 0; j < ds.cols.size(); ++j) {
      if (j) out += ',';
      const Column& c = ds.cols[j];
      if (c.role == Role::Excluded) {
        out += quote_csv(c.levels[i]);
        continue;
      }
      if (c.miss[i]) {
        out += "NA";
        continue;
      }
      if (c.is_factor()) {
        out += quote_csv(c.levels[static_cast<std::size_t>(c.code[i])]);
      } else {
        out += format_number(c.num[i]);
      }
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

Dataset subset_rows(const Dataset& ds, const std::vector<int>& rows) {
  Dataset out;
  out.n = rows.size();
  out.response = ds.response;
  out.treatment = ds.treatment;
  out.event = ds.event;
  out.predictors = ds.predictors;
  out.cols.resize(ds.cols.size());
  for (std::size_t j = 0; j < ds.cols.size(); ++j) {
    const Column& src = ds.cols[j];
    Column& dst = out.cols[j];
    dst.name = src.name;
    dst.role = src.role;
    if (src.role == Role::Excluded) {
      // Excluded columns keep their raw cell text in `levels`, one per row.
      dst.levels.reserve(rows.size());
      for (int r : rows) dst.levels.push_back(src.levels[r]);
      continue;
    }
    dst.levels = src.levels;
    dst.has_missing = false;
    if (!src.num.empty()) {
      dst.num.reserve(rows.size());
      for (int r : rows) dst.num.push_back(src.num[r]);
    }
    if (!src.code.empty()) {
      dst.code.reserve(rows.size());
      for (int r : rows) dst.code.push_back(src.code[r]);
    }
    if (!src.miss.empty()) {
      dst.miss.reserve(rows.size());
      for (int r : rows) {
        dst.miss.push_back(src.miss[r]);
        if (src.miss[r]) dst.has_missing = true;
      }
    }
  }
  return out;
}

FactorGrouping group_rows(const Dataset& ds, int col,
                          const std::vector<int>& rows) {
  const Column& c = ds.col(col);
  FactorGrouping g;
  g.level.resize(rows.size(), -1);

  if (c.role == Role::Ordinal) {
    double sum = 0.0;
    std::size_t k = 0;
    bool any_missing = false;
    for (int r : rows) {
      if (c.miss[r]) {
        any_missing = true;
      } else {
        sum += c.num[r];
        ++k;
      }
    }
    if (k == 0) {  // everything missing: a single populated group
      g.n_levels = 1;
      g.missing_level = 0;
      g.populated = rows.empty() ? 0 : 1;
      std::fill(g.level.begin(), g.level.end(), 0);
      g.source_level = {-1};
      g.labels = {"missing"};
      g.degenerate = true;
      return g;
    }
    g.mean = sum / static_cast<double>(k);
    g.n_levels = any_missing ? 3 : 2;
    g.missing_level = any_missing ? 2 : -1;
    std::vector<int> count(static_cast<std::size_t>(g.n_levels), 0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      int r = rows[i];
      int lvl = c.miss[r] ? g.missing_level : (c.num[r] <= g.mean ? 0 : 1);
      g.level[i] = lvl;
      ++count[static_cast<std::size_t>(lvl)];
    }
    for (int ct : count)
      if (ct > 0) ++g.populated;
    char buf[48];
    std::snprintf(buf, sizeof(buf), "<=%g", g.mean);
    g.source_level = {0, 1};
    g.labels.push_back(buf);
    std::snprintf(buf, sizeof(buf), ">%g", g.mean);
    g.labels.push_back(buf);
    if (any_missing) {
      g.source_level.push_back(-1);
      g.labels.push_back("missing");
    }
  } else if (c.role == Role::Categorical) {
    // Compact to the levels present in this subset, dictionary order.
    std::vector<int> remap(c.levels.size(), -1);
    bool any_missing = false;
    for (int r : rows) {
      if (c.miss[r]) any_missing = true;
      else remap[static_cast<std::size_t>(c.code[r])] = 0;
    }
    int next = 0;
    for (std::size_t l = 0; l < remap.size(); ++l) {
      if (remap[l] == 0) {
        remap[l] = next++;
        g.source_level.push_back(static_cast<int>(l));
        g.labels.push_back(c.levels[l]);
      }
    }
    g.n_levels = next;
    if (any_missing) {
      g.missing_level = g.n_levels++;
      g.source_level.push_back(-1);
      g.labels.push_back("missing");
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      int r = rows[i];
      g.level[i] = c.miss[r] ? g.missing_level
                             : remap[static_cast<std::size_t>(c.code[r])];
    }
    g.populated = g.n_levels;  // every group non-empty by construction
  } else {
    throw InputError("column '" + c.name + "' is not a predictor");
  }
  g.degenerate = g.populated < 2;
  return g;
}

int resolve_threads(int requested) {
  if (const char* env = std::getenv("SUBTREE_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v >= 0) requested = static_cast<int>(v);
  }
  if (requested <= 0) {
    unsigned hw = std::thread::hardware_concurrency();
    requested = hw ? static_cast<int>(hw) : 1;
  }
  return requested;
}

void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write file: " + tmp.string());
    out.write(content.data(),
              static_cast<std::streamsize>(content.size()));
    if (!out) throw InputError("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace subtree
