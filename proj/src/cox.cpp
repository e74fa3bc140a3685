#include "ivsurv/cox.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "ivsurv/errors.hpp"

namespace ivsurv {

CoxDesign make_cox_design(const std::vector<ObservedRecord>& records,
                          const FeatureMap& features, SurvivalOutcome outcome) {
  const auto n = static_cast<Eigen::Index>(records.size());
  CoxDesign d;
  d.x.resize(n, features.dim());
  d.time.resize(n);
  d.status.resize(records.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    d.x.row(i) = features.eval(r);
    d.time[i] = r.time_obs;
    const bool ev = outcome == SurvivalOutcome::failure ? r.event : !r.event;
    d.status[static_cast<std::size_t>(i)] = ev ? 1 : 0;
  }
  return d;
}

namespace {

// Single descending-time sweep accumulating the risk-set sums S0, S1, S2.
// Ties are grouped (Breslow): all events at a time share the full risk set.
struct LikelihoodTerms {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd info;  // negative Hessian
};

LikelihoodTerms cox_terms(const CoxDesign& d, const Eigen::VectorXd& beta,
                          bool want_score, bool want_info) {
  const Eigen::Index n = d.x.rows();
  const Eigen::Index p = d.x.cols();
  LikelihoodTerms out;
  if (want_score) out.score = Eigen::VectorXd::Zero(p);
  if (want_info) out.info = Eigen::MatrixXd::Zero(p, p);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return d.time[a] > d.time[b]; });

  const Eigen::VectorXd eta = d.x * beta;
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);

  std::size_t i = 0;
  while (i < order.size()) {
    const double t = d.time[order[i]];
    std::size_t j = i;
    while (j < order.size() && d.time[order[j]] == t) {
      const Eigen::Index idx = order[j];
      const double w = std::exp(eta[idx]);
      s0 += w;
      if (want_score || want_info) s1 += w * d.x.row(idx).transpose();
      if (want_info) s2 += w * d.x.row(idx).transpose() * d.x.row(idx);
      ++j;
    }
    int deaths = 0;
    for (std::size_t k = i; k < j; ++k) {
      const Eigen::Index idx = order[k];
      if (d.status[static_cast<std::size_t>(idx)]) {
        ++deaths;
        out.loglik += eta[idx];
        if (want_score) out.score += d.x.row(idx).transpose();
      }
    }
    if (deaths > 0) {
      out.loglik -= deaths * std::log(s0);
      if (want_score || want_info) {
        const Eigen::VectorXd mu = s1 / s0;
        if (want_score) out.score -= deaths * mu;
        if (want_info) out.info += deaths * (s2 / s0 - mu * mu.transpose());
      }
    }
    i = j;
  }
  return out;
}

// Columns with no variation carry no information in the partial likelihood
// (a constant multiplies hazard ratios identically) and are frozen at 0.
std::vector<Eigen::Index> varying_columns(const Eigen::MatrixXd& x) {
  std::vector<Eigen::Index> cols;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double lo = x.col(j).minCoeff();
    const double hi = x.col(j).maxCoeff();
    if (hi > lo) cols.push_back(j);
  }
  return cols;
}

}  // namespace

double cox_partial_loglik(const CoxDesign& d, const Eigen::VectorXd& beta) {
  return cox_terms(d, beta, false, false).loglik;
}

Eigen::VectorXd cox_score(const CoxDesign& d, const Eigen::VectorXd& beta) {
  return cox_terms(d, beta, true, false).score;
}

Eigen::MatrixXd cox_information(const CoxDesign& d, const Eigen::VectorXd& beta) {
  return cox_terms(d, beta, true, true).info;
}

CoxSurvivalModel fit_cox(const Cohort& cohort, const FeatureMap& features,
                         SurvivalOutcome outcome, const CoxFitOptions& opts) {
  return fit_cox(cohort.records(), features, outcome, opts);
}

namespace {

// Damped Newton over a sum of per-stratum partial likelihoods with shared
// coefficients. Columns constant within every stratum carry no information
// and are frozen at 0.
Eigen::VectorXd fit_cox_core(const std::vector<CoxDesign>& designs,
                             Eigen::Index p, const CoxFitOptions& opts) {
  std::size_t n_events = 0;
  for (const auto& d : designs) {
    for (char s : d.status) n_events += s;
  }
  if (n_events == 0) throw EstimationError("no events of the requested kind to fit");

  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < p; ++j) {
    bool varies = false;
    for (const auto& d : designs) {
      if (d.x.rows() > 0 && d.x.col(j).maxCoeff() > d.x.col(j).minCoeff()) {
        varies = true;
        break;
      }
    }
    if (varies) active.push_back(j);
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  if (active.empty()) return beta;

  std::vector<CoxDesign> da(designs.size());
  for (std::size_t s = 0; s < designs.size(); ++s) {
    da[s].time = designs[s].time;
    da[s].status = designs[s].status;
    da[s].x.resize(designs[s].x.rows(), static_cast<Eigen::Index>(active.size()));
    for (std::size_t j = 0; j < active.size(); ++j) {
      da[s].x.col(static_cast<Eigen::Index>(j)) = designs[s].x.col(active[j]);
    }
  }
  auto loglik = [&](const Eigen::VectorXd& b) {
    double ll = 0.0;
    for (const auto& d : da) ll += cox_partial_loglik(d, b);
    return ll;
  };
  auto score = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(b.size());
    for (const auto& d : da) g += cox_score(d, b);
    return g;
  };
  auto information = [&](const Eigen::VectorXd& b) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(b.size(), b.size());
    for (const auto& d : da) h += cox_information(d, b);
    return h;
  };

  Eigen::VectorXd b = Eigen::VectorXd::Zero(da[0].x.cols());
  double ll = loglik(b);
  bool converged = false;
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    const Eigen::VectorXd g = score(b);
    if (g.norm() < opts.gradient_tol) {
      converged = true;
      break;
    }
    const Eigen::MatrixXd info = information(b);
    Eigen::VectorXd step = info.ldlt().solve(g);
    if (!step.allFinite()) {
      throw ConvergenceError("Cox information matrix is singular");
    }
    // accept steps that do not materially decrease the objective; the
    // slack keeps final Newton steps (which change ll below double
    // resolution) from being rejected
    const double slack = 1e-12 * (std::abs(ll) + 1.0);
    double new_ll = loglik(b + step);
    int halvings = 0;
    while (!(new_ll >= ll - slack) && halvings < opts.max_step_halvings) {
      step *= 0.5;
      new_ll = loglik(b + step);
      ++halvings;
    }
    if (!(new_ll >= ll - slack)) {
      throw ConvergenceError("Cox fit stalled: step halving failed to improve "
                             "the partial likelihood");
    }
    b += step;
    ll = new_ll;
    if (b.lpNorm<Eigen::Infinity>() > opts.divergence_norm) {
      throw ConvergenceError(
          "Cox coefficient diverging (monotone partial likelihood)");
    }
  }
  if (!converged && score(b).norm() >= opts.gradient_tol) {
    throw ConvergenceError("Cox fit did not converge in " +
                           std::to_string(opts.max_iterations) + " iterations");
  }
  // one polishing step to push the score to the floating-point floor
  const Eigen::VectorXd polish = information(b).ldlt().solve(score(b));
  if (polish.allFinite()) b += polish;

  for (std::size_t j = 0; j < active.size(); ++j) beta[active[j]] = b[j];
  return beta;
}

// Breslow baseline: ascending sweep with reverse-accumulated risk sums.
std::pair<std::vector<double>, std::vector<double>> breslow_baseline(
    const CoxDesign& d, const Eigen::VectorXd& beta) {
  const Eigen::Index n = d.x.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return d.time[a] > d.time[b]; });
  const Eigen::VectorXd risk = (d.x * beta).array().exp();

  double s0 = 0.0;
  std::size_t i = 0;
  std::vector<std::pair<double, double>> rev;  // (time, jump) in desc order
  while (i < order.size()) {
    const double t = d.time[order[i]];
    std::size_t j = i;
    int deaths = 0;
    while (j < order.size() && d.time[order[j]] == t) {
      s0 += risk[order[j]];
      if (d.status[static_cast<std::size_t>(order[j])]) ++deaths;
      ++j;
    }
    if (deaths > 0) rev.emplace_back(t, deaths / s0);
    i = j;
  }
  std::vector<double> times, jumps;
  times.reserve(rev.size());
  jumps.reserve(rev.size());
  for (auto it = rev.rbegin(); it != rev.rend(); ++it) {
    times.push_back(it->first);
    jumps.push_back(it->second);
  }
  return {std::move(times), std::move(jumps)};
}

}  // namespace

CoxSurvivalModel fit_cox(const std::vector<ObservedRecord>& records,
                         const FeatureMap& features, SurvivalOutcome outcome,
                         const CoxFitOptions& opts) {
  CoxDesign d = make_cox_design(records, features, outcome);
  std::vector<CoxDesign> designs;
  designs.push_back(std::move(d));
  const Eigen::VectorXd beta = fit_cox_core(designs, designs[0].x.cols(), opts);
  auto [times, jumps] = breslow_baseline(designs[0], beta);
  return CoxSurvivalModel(beta, std::move(times), std::move(jumps), features);
}

std::shared_ptr<const SurvivalModel> fit_cox_strata(
    const std::vector<ObservedRecord>& records, const FeatureMap& features,
    SurvivalOutcome outcome, ArmSource split_by, const CoxFitOptions& opts) {
  std::vector<ObservedRecord> arm0, arm1;
  for (const auto& r : records) {
    const bool arm = split_by == ArmSource::treatment ? r.treatment : r.instrument;
    (arm ? arm1 : arm0).push_back(r);
  }
  std::vector<CoxDesign> designs;
  designs.push_back(make_cox_design(arm0, features, outcome));
  designs.push_back(make_cox_design(arm1, features, outcome));
  const Eigen::VectorXd beta = fit_cox_core(designs, designs[0].x.cols(), opts);
  auto [t0, j0] = breslow_baseline(designs[0], beta);
  auto [t1, j1] = breslow_baseline(designs[1], beta);
  auto m0 = std::make_shared<const CoxSurvivalModel>(beta, std::move(t0),
                                                     std::move(j0), features);
  auto m1 = std::make_shared<const CoxSurvivalModel>(beta, std::move(t1),
                                                     std::move(j1), features);
  return std::make_shared<const StratifiedSurvivalModel>(std::move(m0), std::move(m1));
}

}  // namespace ivsurv
