// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are fixed
// here; nothing is tuned to the observed results.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "linear_gaussian.hpp"
#include "pcdpem/experiment.hpp"

using namespace pcdpem;
using nlohmann::json;

namespace {

// Pinned tolerances.
constexpr double kBenchmarkErrorMax = 0.25;
constexpr double kGeneRegulationBand = 0.05;
constexpr double kFhnParameterErrorMax = 0.25;
constexpr double kCouplingErrorMax = 0.6;
constexpr double kAblationDivergedFraction = 0.5;
constexpr double kGossipSigma = 1e-2;
constexpr std::size_t kGossipSeeds = 200;
constexpr double kMassDriftMax = 1e-12;
constexpr double kAscentSlack = 1e-12;
constexpr double kOracleZ = 3.0;
constexpr double kPsdMargin = -1e-9;
constexpr int kScalarInstances = 1000;

// Desk-scale budget.
constexpr std::size_t kRepetitions = 10;
constexpr std::size_t kTrendRepetitions = 5;
constexpr std::size_t kCouplingRepetitions = 5;
constexpr std::size_t kAblationSeeds = 4;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

struct Identification {
  std::string model;
  std::string label;
  const RunRecord* record;
};

struct Suite {
  std::set<int> only;
  json results = json::object();
  std::vector<MonteCarloSummary> summaries;  // kept alive for the cross-run criteria
  std::vector<RunRecord> extra_records;
  std::vector<std::string> extra_models;
  std::vector<ConsensusReport> gossip_reports;
  int failures = 0;

  bool wanted(int id) const { return only.empty() || only.count(id) > 0; }

  void report(int id, bool pass, const std::string& detail, json values = json::object()) {
    std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
    values["pass"] = pass;
    values["detail"] = detail;
    results[std::to_string(id)] = values;
    if (!pass) ++failures;
  }

  void info(int id, const std::string& detail, json values = json::object()) {
    std::cout << "criterion " << id << ": INFO  " << detail << std::endl;
    values["pass"] = true;
    values["informational"] = true;
    values["detail"] = detail;
    results[std::to_string(id)] = values;
  }

  const MonteCarloSummary& run(const ExperimentConfig& c, const std::string& label) {
    const auto t0 = Clock::now();
    summaries.push_back(monte_carlo(c));
    const auto& s = summaries.back();
    std::cerr << "[acceptance] " << label << ": median error " << fmt(s.median_error) << ", mean iterations "
              << fmt(s.mean_iterations) << ", failures " << s.failures << ", divergences " << s.divergences << " ("
              << fmt(seconds_since(t0)) << " s)" << std::endl;
    results["runs"][label] = to_json_summary(s);
    return s;
  }

  static json to_json_summary(const MonteCarloSummary& s) {
    json j = to_json(s);
    for (auto& r : j["runs"]) r.erase("iteration_seconds");
    return j;
  }

  std::vector<Identification> identifications() const {
    std::vector<Identification> out;
    for (const auto& s : summaries) {
      for (const auto& r : s.records) out.push_back({s.config.model, s.config.model, &r});
    }
    for (std::size_t i = 0; i < extra_records.size(); ++i) out.push_back({extra_models[i], "ablation", &extra_records[i]});
    return out;
  }
};

ExperimentConfig desk(const std::string& model) {
  ExperimentConfig c;
  c.model = model;
  c.repetitions = kRepetitions;
  c.seed = 1;
  return c;
}

// 1 ------------------------------------------------------------------------
void benchmark_identification(Suite& suite) {
  const auto& s = suite.run(desk("benchmark"), "benchmark_M500");
  const bool pass = s.successes() == s.records.size() && s.median_error < kBenchmarkErrorMax;
  suite.report(1, pass,
               "benchmark V=20 T=100 M=500 R=" + std::to_string(s.records.size()) + ": median relative error " +
                   fmt(s.median_error) + " (< " + fmt(kBenchmarkErrorMax) + "), failed/diverged " +
                   std::to_string(s.failures + s.divergences),
               {{"median_error", s.median_error}, {"mean", to_vec(s.mean)}, {"std", to_vec(s.stddev)}});
}

// 2 ------------------------------------------------------------------------
void particle_trend(Suite& suite) {
  std::vector<const MonteCarloSummary*> by_m;
  for (std::size_t M : {50u, 100u, 1000u}) {
    auto c = desk("benchmark");
    c.repetitions = kTrendRepetitions;
    c.num_particles = M;
    by_m.push_back(&suite.run(c, "benchmark_M" + std::to_string(M)));
  }
  const double e100 = by_m[1]->median_error, e1000 = by_m[2]->median_error;
  const double i50 = by_m[0]->mean_iterations, i1000 = by_m[2]->mean_iterations;
  const bool pass = e1000 <= e100 && i1000 <= i50;
  suite.report(2, pass,
               "same seeds, R=" + std::to_string(kTrendRepetitions) + ": median error M=1000 " + fmt(e1000) +
                   " <= M=100 " + fmt(e100) + "; mean iterations M=1000 " + fmt(i1000) + " <= M=50 " + fmt(i50),
               {{"median_error_M100", e100},
                {"median_error_M1000", e1000},
                {"mean_iterations_M50", i50},
                {"mean_iterations_M1000", i1000}});
}

// 3 ------------------------------------------------------------------------
void gene_regulation(Suite& suite) {
  const auto& s = suite.run(desk("gene_regulation"), "gene_regulation");
  std::vector<double> a, b;
  for (const auto& r : s.records) {
    if (r.failed || r.diverged) continue;
    a.push_back(r.theta_hat[0]);
    b.push_back(r.theta_hat[1]);
  }
  const double ma = median(a), mb = median(b);
  const bool pass = s.successes() == s.records.size() && std::abs(ma + 0.2) <= kGeneRegulationBand * 0.2 &&
                    std::abs(mb - 1.0) <= kGeneRegulationBand * 1.0;
  suite.report(3, pass,
               "gene regulation V=20 M=500 R=" + std::to_string(s.records.size()) + ": median a " + fmt(ma) +
                   " (target -0.2 +-5%), median b " + fmt(mb) + " (target 1.0 +-5%)",
               {{"median_a", ma}, {"median_b", mb}, {"mean", to_vec(s.mean)}, {"std", to_vec(s.stddev)}});
}

// 4 ------------------------------------------------------------------------
void fitzhugh_nagumo(Suite& suite) {
  const auto& s = suite.run(desk("fitzhugh_nagumo"), "fitzhugh_nagumo");
  bool pass = s.successes() == s.records.size();
  std::ostringstream os;
  for (Eigen::Index i = 0; i < 6; ++i) {
    const double e = s.median_parameter_errors[i];
    pass = pass && e < kFhnParameterErrorMax;
    os << (i ? ", " : "") << s.param_names[static_cast<std::size_t>(i)] << " " << fmt(e);
  }
  suite.report(4, pass, "FitzHugh-Nagumo median relative errors (each < 0.25): " + os.str(),
               {{"median_parameter_errors", to_vec(s.median_parameter_errors)}, {"mean", to_vec(s.mean)}});
}

// 5 ------------------------------------------------------------------------
void coupling_robustness(Suite& suite) {
  bool pass = true;
  std::ostringstream os;
  json vals;
  for (std::size_t k = 0; k < table_coupling_count(); ++k) {
    auto c = desk("benchmark");
    c.repetitions = kCouplingRepetitions;
    c.coupling = k;
    const auto& s = suite.run(c, "benchmark_coupling" + std::to_string(k));
    const bool ok = s.successes() == s.records.size() && s.median_error < kCouplingErrorMax;
    pass = pass && ok;
    os << "[" << table_coupling(k).describe() << "] " << fmt(s.median_error) << "; ";
    vals["median_error"].push_back(s.median_error);
  }
  // ablation: the two 10/J couplings without the contraction constraint
  for (std::size_t k : {0u, 1u}) {
    auto c = desk("benchmark");
    c.coupling = k;
    std::size_t diverged = 0;
    for (std::size_t r = 0; r < kAblationSeeds; ++r) {
      const auto t0 = Clock::now();
      suite.extra_records.push_back(ablation_no_stability(c, r));
      suite.extra_models.push_back("benchmark");
      const auto& rec = suite.extra_records.back();
      std::cerr << "[acceptance] ablation coupling " << k << " run " << r << ": "
                << (rec.diverged ? "diverged" : rec.failed ? "failed: " + rec.error : "completed, error " + fmt(rec.relative_error))
                << " (" << fmt(seconds_since(t0)) << " s)" << std::endl;
      if (rec.diverged) ++diverged;
    }
    const double frac = static_cast<double>(diverged) / kAblationSeeds;
    pass = pass && frac >= kAblationDivergedFraction;
    os << "unconstrained coupling " << k << " diverged " << diverged << "/" << kAblationSeeds << "; ";
    vals["ablation_diverged"].push_back(diverged);
  }
  suite.report(5, pass, "median errors (< 0.6) " + os.str(), vals);
}

// 6 ------------------------------------------------------------------------
void gossip_convergence(Suite& suite) {
  bool pass = true;
  std::ostringstream os;
  json vals;
  for (std::size_t V : {10u, 20u, 50u}) {
    ExperimentConfig c;
    c.num_agents = V;
    const std::size_t budget = derived_round_budget(kGossipSigma, V);
    std::size_t hits = 0;
    for (std::size_t seed = 0; seed < kGossipSeeds; ++seed) {
      const auto net = experiment_network(c, derive_seed(seed, {stream::kTopology, V}));
      Rng rng = make_rng(seed, {stream::kExperiment, V});
      std::normal_distribution<double> N(1.0, 1.0);
      std::vector<ConsensusState> states;
      for (AgentId v = 0; v < V; ++v) states.push_back(init_consensus(Vector::Constant(1, N(rng)), v, V));
      ConsensusOptions opt;
      opt.delta = kGossipSigma;
      opt.termination = Termination::RoundBudget;
      opt.max_rounds = budget;
      opt.seed = derive_seed(seed, {stream::kGossip, V});
      const auto res = run_consensus(std::move(states), net, opt);
      suite.gossip_reports.push_back(res.report);
      if (res.report.rounds_run == budget &&
          *std::max_element(res.report.sigma.begin(), res.report.sigma.end()) <= kGossipSigma) {
        ++hits;
      }
    }
    const double frac = static_cast<double>(hits) / kGossipSeeds;
    const double need = 1.0 - 1.0 / static_cast<double>(V);
    pass = pass && frac >= need;
    os << "V=" << V << " rounds " << budget << " fraction " << fmt(frac) << " (>= " << fmt(need) << "); ";
    vals["fraction"].push_back(frac);
    vals["rounds"].push_back(budget);
  }
  suite.report(6, pass, "sigma <= 0.01 at the round budget, 200 seeds: " + os.str(), vals);
}

// 7 ------------------------------------------------------------------------
void mass_conservation(Suite& suite) {
  double mass = 0, count = 0;
  std::size_t runs = 0;
  auto take = [&](const ConsensusReport& r) {
    mass = std::max(mass, r.max_mass_drift);
    count = std::max(count, r.max_count_drift);
    ++runs;
  };
  for (const auto& r : suite.gossip_reports) take(r);
  for (const auto& id : suite.identifications()) {
    if (!id.record->estimate) continue;
    for (const auto& h : id.record->estimate->history) take(h.consensus);
  }
  const bool pass = runs > 0 && mass <= kMassDriftMax && count <= kMassDriftMax;
  suite.report(7, pass,
               std::to_string(runs) + " gossip runs: max relative mass drift " + fmt(mass) +
                   ", max counter drift / V " + fmt(count) + " (<= 1e-12)",
               {{"gossip_runs", runs}, {"max_mass_drift", mass}, {"max_count_drift", count}});
}

// 8 ------------------------------------------------------------------------
void em_ascent(Suite& suite) {
  std::size_t iterations = 0, violations = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& id : suite.identifications()) {
    if (!id.record->estimate) continue;
    for (const auto& h : id.record->estimate->history) {
      ++iterations;
      worst = std::min(worst, h.delta_q());
      if (h.q_end < h.q_start - kAscentSlack) ++violations;
    }
  }
  suite.report(8, iterations > 0 && violations == 0,
               std::to_string(iterations) + " recorded EM iterations, " + std::to_string(violations) +
                   " with Q(theta_k+1) < Q(theta_k) - 1e-12; smallest gain " + fmt(worst),
               {{"iterations", iterations}, {"violations", violations}, {"min_gain", worst}});
}

// 9 ------------------------------------------------------------------------

/// Point-mass (grid) forward-backward smoother for the scalar linear-Gaussian model.
std::vector<double> grid_smoothed_means(const std::vector<double>& y, double a, double b, double s, double w, double m0,
                                        double p0) {
  const double lo = -12.0, hi = 12.0;
  const std::size_t G = 2401;
  const double h = (hi - lo) / static_cast<double>(G - 1);
  std::vector<double> x(G);
  for (std::size_t g = 0; g < G; ++g) x[g] = lo + h * static_cast<double>(g);
  auto normal = [](double v, double mean, double var) {
    return std::exp(-0.5 * (v - mean) * (v - mean) / var) / std::sqrt(2 * M_PI * var);
  };
  const std::size_t T = y.size();
  std::vector<std::vector<double>> filt(T, std::vector<double>(G));
  std::vector<double> pred(G);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t g = 0; g < G; ++g) {
      if (t == 0) {
        pred[g] = normal(x[g], m0, p0);
      } else {
        double acc = 0;
        for (std::size_t k = 0; k < G; ++k) acc += filt[t - 1][k] * normal(x[g], a * x[k], s);
        pred[g] = acc * h;
      }
    }
    double z = 0;
    for (std::size_t g = 0; g < G; ++g) {
      filt[t][g] = pred[g] * normal(y[t], b * x[g], w);
      z += filt[t][g] * h;
    }
    for (double& f : filt[t]) f /= z;
  }
  std::vector<std::vector<double>> smooth = filt;
  for (std::size_t t = T - 1; t-- > 0;) {
    std::vector<double> ratio(G);
    for (std::size_t j = 0; j < G; ++j) {
      double p = 0;
      for (std::size_t k = 0; k < G; ++k) p += filt[t][k] * normal(x[j], a * x[k], s);
      ratio[j] = p * h > 0 ? smooth[t + 1][j] / (p * h) : 0.0;
    }
    for (std::size_t k = 0; k < G; ++k) {
      double acc = 0;
      for (std::size_t j = 0; j < G; ++j) acc += normal(x[j], a * x[k], s) * ratio[j];
      smooth[t][k] = filt[t][k] * acc * h;
    }
  }
  std::vector<double> means(T);
  for (std::size_t t = 0; t < T; ++t) {
    double m = 0, z = 0;
    for (std::size_t g = 0; g < G; ++g) {
      m += x[g] * smooth[t][g];
      z += smooth[t][g];
    }
    means[t] = m / z;
  }
  return means;
}

void oracle_equivalence(Suite& suite) {
  const double a = 0.9, b = 1.0, s = 0.5, w = 0.4, m0 = 0.0, p0 = 1.0;
  const ModelClass model = testing::linear_gaussian_model(a, b, s, w, m0, p0);
  const Vector theta = model.true_theta;
  const DirectedNetwork single(1, {});

  // (a) particle means against Kalman / RTS, M=1000
  const std::size_t T = 50, M = 1000, R = 20;
  const auto data = simulate_network(model, theta, no_coupling(), single, T, {Vector::Constant(1, 0.5)}, 314);
  const Matrix U(static_cast<Eigen::Index>(T), 0);
  const auto y = testing::column(data.outputs[0]);
  const auto kf = testing::kalman_rts(y, a, b, s, w, m0, p0);
  std::vector<std::vector<double>> fm(T), sm(T);
  for (std::uint64_t r = 0; r < R; ++r) {
    const auto e = smooth_agent(model, theta, data.outputs[0], U, M, 1000 + r);
    for (std::size_t t = 0; t < T; ++t) {
      fm[t].push_back(e.filter_mean(t)[0]);
      sm[t].push_back(e.smoothed_mean(t)[0]);
    }
  }
  auto rms_z = [&](const std::vector<std::vector<double>>& runs, const std::vector<double>& oracle) {
    double acc = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const double mean = std::accumulate(runs[t].begin(), runs[t].end(), 0.0) / R;
      double var = 0;
      for (double v : runs[t]) var += (v - mean) * (v - mean);
      const double se = std::sqrt(var / (R - 1) / R);
      acc += std::pow((mean - oracle[t]) / se, 2);
    }
    return std::sqrt(acc / T);
  };
  const double zf = rms_z(fm, kf.filter_mean), zs = rms_z(sm, kf.smooth_mean);

  // (b) consensus surrogate against grid quadrature
  const std::size_t Tq = 25;
  const auto dq = simulate_network(model, theta, no_coupling(), single, Tq, {Vector::Constant(1, 0.5)}, 2718);
  const auto yq = testing::column(dq.outputs[0]);
  const auto grid_means = grid_smoothed_means(yq, a, b, s, w, m0, p0);
  const auto rts = testing::kalman_rts(yq, a, b, s, w, m0, p0);
  double grid_vs_rts = 0;
  for (std::size_t t = 0; t < Tq; ++t) grid_vs_rts = std::max(grid_vs_rts, std::abs(grid_means[t] - rts.smooth_mean[t]));
  Matrix xg(static_cast<Eigen::Index>(Tq), 1);
  for (std::size_t t = 0; t < Tq; ++t) xg(static_cast<Eigen::Index>(t), 0) = grid_means[t];
  const Matrix Uq(static_cast<Eigen::Index>(Tq), 0);
  const double q_exact = qbar_trajectory(model, theta, xg, dq.outputs[0], Uq);

  std::vector<double> gaps;
  for (std::size_t Mq : {50u, 200u, 1000u}) {
    double gap = 0;
    const int reps = 20;
    for (int r = 0; r < reps; ++r) {
      const auto e = smooth_agent(model, theta, dq.outputs[0], Uq, Mq, 5000 + static_cast<std::uint64_t>(r));
      const auto cs = select_contribution(e, 1);
      const auto layout = make_layout(cs, 1);
      const auto cres = run_consensus(std::vector<ContributionSet>{cs}, single, {});
      const auto gset = make_global_set(cres.global, layout);
      const auto sd = surrogate_data(gset, dq, 0, QbarForm::Network);
      gap += std::abs(qbar(model, theta, sd) - q_exact) / reps;
    }
    gaps.push_back(gap);
  }
  const bool decreasing = gaps[1] < gaps[0] && gaps[2] < gaps[1];
  const bool pass = zf <= kOracleZ && zs <= kOracleZ && decreasing && grid_vs_rts < 1e-6;
  suite.report(9, pass,
               "RMS z of particle vs Kalman filter " + fmt(zf) + ", smoother vs RTS " + fmt(zs) + " (<= 3, M=1000, " +
                   std::to_string(R) + " runs); |Q_M - Q_grid| at M=50/200/1000: " + fmt(gaps[0]) + " / " +
                   fmt(gaps[1]) + " / " + fmt(gaps[2]) + " (decreasing); grid vs RTS " + fmt(grid_vs_rts),
               {{"rms_z_filter", zf}, {"rms_z_smoother", zs}, {"qbar_gaps", gaps}, {"grid_vs_rts", grid_vs_rts}});
}

// 10 -----------------------------------------------------------------------
void certification(Suite& suite) {
  std::size_t checked = 0, bad = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& id : suite.identifications()) {
    const auto& rec = *id.record;
    if (!rec.estimate || id.label == "ablation") continue;
    ++checked;
    const auto& est = *rec.estimate;
    if (!est.certificate) {
      ++bad;
      continue;
    }
    const auto sys = builtin_system(id.model);
    const auto chk = check_contraction(sys.model, est.theta, *est.certificate, est.witnesses);
    worst = std::min(worst, chk.margin);
    if (chk.margin < kPsdMargin) ++bad;
  }

  Rng rng(derive_seed(10, {stream::kExperiment}));
  std::uniform_real_distribution<double> th(-2.0, 2.0), pp(0.01, 2.5), kk(0.001, 1.999);
  int disagree = 0, compared = 0;
  for (int i = 0; i < kScalarInstances; ++i) {
    const double t = th(rng), p = pp(rng), k = kk(rng);
    const double analytic = (2.0 - k - p) * p - t * t;
    const Matrix F = Matrix::Constant(1, 1, t), P = Matrix::Constant(1, 1, p);
    const bool schur = schur_margin(F, P, k) >= 0.0;
    const bool block = block_margin(F, P, k) >= kPsdMargin;
    ++compared;
    // exact boundary cases are decided by rounding; only count clear ones
    if (std::abs(analytic) < 1e-9) continue;
    if (schur != (analytic >= 0) || block != (analytic >= 0)) ++disagree;
  }
  const bool pass = checked > 0 && bad == 0 && disagree == 0;
  suite.report(10, pass,
               std::to_string(checked) + " returned estimates certified, " + std::to_string(bad) +
                   " failing (worst margin " + fmt(worst) + "); block/Schur/analytic disagreements " +
                   std::to_string(disagree) + " of " + std::to_string(compared),
               {{"checked", checked}, {"failing", bad}, {"worst_margin", worst}, {"disagreements", disagree}});
}

// 11 -----------------------------------------------------------------------
void paper_scale_note(Suite& suite) {
  json vals;
  std::ostringstream os;
  for (const auto& s : suite.summaries) {
    if (s.config.model != "benchmark" || s.config.coupling) continue;
    double it = 0;
    std::size_t n = 0;
    for (const auto& r : s.records) {
      for (double x : r.iteration_seconds) {
        it += x;
        ++n;
      }
    }
    const double mean_it = n ? it / static_cast<double>(n) : 0.0;
    os << "M=" << s.config.num_particles << " " << fmt(mean_it) << " s/iteration; ";
    vals["seconds_per_iteration"][std::to_string(s.config.num_particles)] = mean_it;
  }
  suite.info(11, "desk-scale timings (not asserted): " + os.str() + "paper-scale tables via `pcdpem --paper-scale montecarlo`",
             vals);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcdpem acceptance suite"};
  std::string out;
  std::vector<int> only;
  app.add_option("--out", out, "write a JSON result file");
  app.add_option("--only", only, "run a subset of criteria (cross-run criteria 7, 8, 10 use whatever ran)");
  CLI11_PARSE(app, argc, argv);

  Suite suite;
  suite.only.insert(only.begin(), only.end());
  const auto t0 = Clock::now();
  auto step = [&](int id, void (*fn)(Suite&)) {
    if (!suite.wanted(id)) return;
    const auto t = Clock::now();
    try {
      fn(suite);
    } catch (const std::exception& e) {
      suite.report(id, false, std::string("exception: ") + e.what());
    }
    std::cerr << "[acceptance] criterion " << id << " took " << fmt(seconds_since(t)) << " s" << std::endl;
  };
  step(6, gossip_convergence);
  step(9, oracle_equivalence);
  step(1, benchmark_identification);
  step(2, particle_trend);
  step(3, gene_regulation);
  step(4, fitzhugh_nagumo);
  step(5, coupling_robustness);
  step(7, mass_conservation);
  step(8, em_ascent);
  step(10, certification);
  step(11, paper_scale_note);

  suite.results["failures"] = suite.failures;
  suite.results["seconds"] = seconds_since(t0);
  if (!out.empty()) {
    std::ofstream f(out);
    f << suite.results.dump(2) << '\n';
  }
  std::cout << (suite.failures ? "acceptance: " + std::to_string(suite.failures) + " criteria failed"
                               : std::string("acceptance: all criteria passed"))
            << std::endl;
  return suite.failures ? 1 : 0;
}
