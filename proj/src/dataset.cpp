#include "ivsurv/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "ivsurv/errors.hpp"
#include "ivsurv/mathutil.hpp"

namespace ivsurv {

Cohort::Cohort(std::vector<ObservedRecord> records) : records_(std::move(records)) {
  if (records_.size() < 2) {
    throw DataError("cohort must contain at least 2 records");
  }
  p_ = static_cast<int>(records_.front().covariates.size());
  bool any_event = false;
  bool z_levels[2] = {false, false};
  bool a_levels[2] = {false, false};
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (!(r.time_obs >= 0.0) || !std::isfinite(r.time_obs)) {
      throw DataError("row " + std::to_string(i + 1) +
                      ": time must be finite and nonnegative");
    }
    if (static_cast<int>(r.covariates.size()) != p_) {
      throw DataError("row " + std::to_string(i + 1) +
                      ": covariate dimension differs from first row");
    }
    for (int j = 0; j < p_; ++j) {
      if (!std::isfinite(r.covariates[j])) {
        throw DataError("row " + std::to_string(i + 1) + ": covariate x" +
                        std::to_string(j + 1) + " is not finite");
      }
    }
    any_event = any_event || r.event;
    z_levels[r.instrument ? 1 : 0] = true;
    a_levels[r.treatment ? 1 : 0] = true;
    max_time_ = std::max(max_time_, r.time_obs);
  }
  if (!any_event) throw DataError("cohort has no observed events");
  if (!z_levels[0]) throw DataError("instrument level 0 absent");
  if (!z_levels[1]) throw DataError("instrument level 1 absent");
  if (!a_levels[0]) throw DataError("treatment level 0 absent");
  if (!a_levels[1]) throw DataError("treatment level 1 absent");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim surrounding whitespace and a possible trailing \r
    auto b = field.find_first_not_of(" \t\r\n");
    auto e = field.find_last_not_of(" \t\r\n");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_double(const std::string& s, std::size_t row, const std::string& col) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty()) {
    throw DataError("row " + std::to_string(row) + ": non-numeric value '" + s +
                    "' in column '" + col + "'");
  }
  if (!std::isfinite(v)) {
    throw DataError("row " + std::to_string(row) + ": non-finite value in column '" +
                    col + "'");
  }
  return v;
}

bool parse_binary(const std::string& s, std::size_t row, const std::string& col) {
  const double v = parse_double(s, row, col);
  if (v == 0.0) return false;
  if (v == 1.0) return true;
  throw DataError("row " + std::to_string(row) + ": " + col + " not in {0,1}");
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path);
  table.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != table.header.size()) {
      throw DataError("row " + std::to_string(table.rows.size() + 1) +
                      ": expected " + std::to_string(table.header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  return table;
}

int column_index(const CsvTable& t, const std::string& name) {
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (t.header[j] == name) return static_cast<int>(j);
  }
  return -1;
}

int required_column(const CsvTable& t, const std::string& name) {
  const int j = column_index(t, name);
  if (j < 0) throw DataError("missing column '" + name + "'");
  return j;
}

// Covariate columns: either the schema's explicit list, or auto-detected
// columns named x1..xp taken in numeric order.
std::vector<int> covariate_columns(const CsvTable& t, const CsvSchema& schema) {
  std::vector<int> cols;
  if (!schema.covariates.empty()) {
    for (const auto& name : schema.covariates) cols.push_back(required_column(t, name));
    return cols;
  }
  std::vector<std::pair<int, int>> numbered;  // (index number, column)
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    const auto& h = t.header[j];
    if (h.size() < 2 || h[0] != 'x') continue;
    bool digits = true;
    for (std::size_t k = 1; k < h.size(); ++k) digits = digits && std::isdigit(h[k]);
    if (digits) numbered.emplace_back(std::stoi(h.substr(1)), static_cast<int>(j));
  }
  std::sort(numbered.begin(), numbered.end());
  for (auto [num, j] : numbered) cols.push_back(j);
  return cols;
}

}  // namespace

Cohort load_cohort(const std::string& path, const CsvSchema& schema) {
  const CsvTable t = read_csv(path);
  const int c_time = required_column(t, schema.time);
  const int c_event = required_column(t, schema.event);
  const int c_a = required_column(t, schema.treatment);
  const int c_z = required_column(t, schema.instrument);
  const std::vector<int> c_x = covariate_columns(t, schema);

  std::vector<ObservedRecord> records;
  records.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    ObservedRecord r;
    r.time_obs = parse_double(row[c_time], i + 1, schema.time);
    r.event = parse_binary(row[c_event], i + 1, schema.event);
    r.treatment = parse_binary(row[c_a], i + 1, schema.treatment);
    r.instrument = parse_binary(row[c_z], i + 1, schema.instrument);
    r.covariates.resize(static_cast<Eigen::Index>(c_x.size()));
    for (std::size_t j = 0; j < c_x.size(); ++j) {
      r.covariates[static_cast<Eigen::Index>(j)] =
          parse_double(row[c_x[j]], i + 1, t.header[c_x[j]]);
    }
    records.push_back(std::move(r));
  }
  return Cohort(std::move(records));
}

std::vector<RawEncounter> load_encounters(const std::string& path,
                                          const CsvSchema& schema) {
  const CsvTable t = read_csv(path);
  const int c_time = required_column(t, schema.time);
  const int c_event = required_column(t, schema.event);
  const int c_a = required_column(t, schema.treatment);
  const int c_prov = required_column(t, schema.provider);
  const std::vector<int> c_x = covariate_columns(t, schema);

  std::vector<RawEncounter> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    RawEncounter e;
    e.provider_id = row[c_prov];
    if (e.provider_id.empty()) {
      throw DataError("row " + std::to_string(i + 1) + ": empty provider id");
    }
    e.time_obs = parse_double(row[c_time], i + 1, schema.time);
    e.event = parse_binary(row[c_event], i + 1, schema.event);
    e.treated = parse_binary(row[c_a], i + 1, schema.treatment);
    e.covariates.resize(static_cast<Eigen::Index>(c_x.size()));
    for (std::size_t j = 0; j < c_x.size(); ++j) {
      e.covariates[static_cast<Eigen::Index>(j)] =
          parse_double(row[c_x[j]], i + 1, t.header[c_x[j]]);
    }
    out.push_back(std::move(e));
  }
  if (out.empty()) throw DataError("no encounter rows in " + path);
  return out;
}

void write_cohort(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  write_cohort(cohort, out);
}

void write_cohort(const Cohort& cohort, std::ostream& out) {
  out << "time,event,a,z";
  for (int j = 0; j < cohort.covariate_dim(); ++j) out << ",x" << (j + 1);
  out << "\n";
  char buf[40];
  for (const auto& r : cohort.records()) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.time_obs);
    out << buf << ',' << (r.event ? 1 : 0) << ',' << (r.treatment ? 1 : 0) << ','
        << (r.instrument ? 1 : 0);
    for (int j = 0; j < cohort.covariate_dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", r.covariates[j]);
      out << ',' << buf;
    }
    out << "\n";
  }
}

Cohort build_preference_iv(const std::vector<RawEncounter>& encounters,
                           double threshold, int min_patients,
                           PreferenceIvReport* report) {
  if (encounters.empty()) throw DataError("no encounters supplied");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold must be in (0,1)");
  }
  if (min_patients < 1) throw ConfigError("min_patients must be positive");

  struct Tally {
    std::size_t n = 0;
    std::size_t treated = 0;
  };
  std::map<std::string, Tally> tally;
  for (const auto& e : encounters) {
    auto& t = tally[e.provider_id];
    ++t.n;
    if (e.treated) ++t.treated;
  }

  std::map<std::string, bool> assigned;  // kept providers -> instrument level
  std::size_t excluded = 0;
  PreferenceIvReport local;
  for (const auto& [id, t] : tally) {
    ProviderSummary s;
    s.provider_id = id;
    s.n_encounters = t.n;
    s.fraction_treated = static_cast<double>(t.treated) / static_cast<double>(t.n);
    s.kept = t.n >= static_cast<std::size_t>(min_patients);
    s.instrument = s.fraction_treated > threshold;
    if (s.kept) {
      assigned[id] = s.instrument;
    } else {
      excluded += t.n;
    }
    local.providers.push_back(std::move(s));
  }
  local.rows_excluded = excluded;
  if (assigned.empty()) {
    throw DataError("all providers excluded (fewer than " +
                    std::to_string(min_patients) + " encounters each)");
  }

  std::vector<ObservedRecord> records;
  records.reserve(encounters.size());
  for (const auto& e : encounters) {
    auto it = assigned.find(e.provider_id);
    if (it == assigned.end()) continue;
    ObservedRecord r;
    r.time_obs = e.time_obs;
    r.event = e.event;
    r.treatment = e.treated;
    r.covariates = e.covariates;
    r.instrument = it->second;
    records.push_back(std::move(r));
  }
  if (report) *report = std::move(local);
  return Cohort(std::move(records));  // positivity violations surface here
}

double event_time_quantile(const Cohort& cohort, double q) {
  std::vector<double> times;
  times.reserve(cohort.size());
  for (const auto& r : cohort.records()) times.push_back(r.time_obs);
  return sample_quantile(times, q);
}

}  // namespace ivsurv
