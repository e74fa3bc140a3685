#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ivsurv {

/// One subject: observed follow-up time, event indicator, binary treatment,
/// baseline covariates, and binary instrument.
struct ObservedRecord {
  double time_obs = 0.0;
  bool event = false;
  bool treatment = false;
  Eigen::VectorXd covariates;
  bool instrument = false;
};

/// An immutable validated sample of ObservedRecord. Construction enforces:
/// finite nonnegative times, a common covariate dimension, n >= 2, at least
/// one observed event, and both levels of instrument and treatment present.
class Cohort {
 public:
  explicit Cohort(std::vector<ObservedRecord> records);

  const std::vector<ObservedRecord>& records() const { return records_; }
  const ObservedRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  int covariate_dim() const { return p_; }

  double max_time() const { return max_time_; }

 private:
  std::vector<ObservedRecord> records_;
  int p_ = 0;
  double max_time_ = 0.0;
};

/// One provider/patient encounter before instrument construction.
struct RawEncounter {
  std::string provider_id;
  bool treated = false;
  double time_obs = 0.0;
  bool event = false;
  Eigen::VectorXd covariates;
};

/// Column-name mapping for CSV ingestion. Empty `covariates` means
/// auto-detection of columns named x1, x2, ... (in numeric order).
struct CsvSchema {
  std::string time = "time";
  std::string event = "event";
  std::string treatment = "a";
  std::string instrument = "z";
  std::string provider = "provider";
  std::vector<std::string> covariates;
};

Cohort load_cohort(const std::string& path, const CsvSchema& schema = {});
std::vector<RawEncounter> load_encounters(const std::string& path,
                                          const CsvSchema& schema = {});

/// Writes the canonical cohort CSV (time,event,a,z,x1..xp) with full
/// double precision, so load_cohort(write_cohort(c)) round-trips exactly.
void write_cohort(const Cohort& cohort, const std::string& path);
void write_cohort(const Cohort& cohort, std::ostream& out);

/// Per-provider summary produced by build_preference_iv.
struct ProviderSummary {
  std::string provider_id;
  std::size_t n_encounters = 0;
  double fraction_treated = 0.0;
  bool kept = false;
  bool instrument = false;
};

struct PreferenceIvReport {
  std::vector<ProviderSummary> providers;
  std::size_t rows_excluded = 0;
};

/// Dichotomizes provider prescribing preference into a binary instrument:
/// per provider, the fraction of encounters with treated=1 is computed;
/// providers with fewer than `min_patients` encounters are dropped; the
/// instrument is 1 iff the fraction strictly exceeds `threshold`.
Cohort build_preference_iv(const std::vector<RawEncounter>& encounters,
                           double threshold, int min_patients,
                           PreferenceIvReport* report = nullptr);

/// Linear-interpolation quantile of the observed times in the cohort.
double event_time_quantile(const Cohort& cohort, double q);

}  // namespace ivsurv
