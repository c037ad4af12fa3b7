// pcdpem command line: topology, simulate, identify, montecarlo, sweep, report.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pcdpem/consensus.hpp"
#include "pcdpem/em.hpp"
#include "pcdpem/errors.hpp"
#include "pcdpem/experiment.hpp"
#include "pcdpem/model.hpp"
#include "pcdpem/network.hpp"
#include "pcdpem/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pcdpem;

namespace {

/// Output directory plus a manifest of every file written into it.
class RunDir {
 public:
  RunDir(const std::string& root, const std::string& command, std::uint64_t seed) : command_(command), seed_(seed) {
    std::ostringstream name;
    name << command << "-seed" << seed;
    path_ = fs::path(root) / name.str();
    fs::create_directories(path_);
  }

  std::string file(const std::string& name) {
    files_.push_back(name);
    return (path_ / name).string();
  }

  void finish(const json& extra) {
    json m = extra;
    m["command"] = command_;
    m["seed"] = seed_;
    m["files"] = files_;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream ts;
    ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    m["created"] = ts.str();
    std::ofstream(path_ / "manifest.json") << m.dump(2) << '\n';
    std::cout << "wrote " << path_.string() << '\n';
  }

 private:
  std::string command_;
  std::uint64_t seed_;
  fs::path path_;
  std::vector<std::string> files_;
};

void write_json(const std::string& path, const json& j) { std::ofstream(path) << j.dump(2) << '\n'; }

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

void print_summary(const MonteCarloSummary& s) {
  const auto cmp = comparison_values(s.config.model);
  std::cout << std::left << std::setw(10) << "param" << std::setw(12) << "true" << std::setw(26) << "mean +- std"
            << std::setw(14) << "median err" << "comparison\n";
  for (std::size_t i = 0; i < s.param_names.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    std::cout << std::setw(10) << s.param_names[i] << std::setw(12) << fmt(s.theta_true[k])
              << std::setw(26) << (fmt(s.mean[k]) + " +- " + fmt(s.stddev[k], 3)) << std::setw(14)
              << fmt(s.median_parameter_errors[k], 3) << (std::isnan(cmp[i]) ? "-" : fmt(cmp[i])) << '\n';
  }
  std::cout << "median relative error " << fmt(s.median_error) << ", mean iterations " << fmt(s.mean_iterations, 3)
            << ", failures " << s.failures << ", divergences " << s.divergences << " of " << s.records.size() << '\n';
}

/// Flags shared by the experiment-style subcommands.
struct CommonFlags {
  std::string config;
  std::string model;
  std::size_t agents = 0, attach = 0, horizon = 0, particles = 0, runs = 0, iterations = 0;
  double dt = 0, process_var = 0, measurement_var = 0;
  int coupling = -1;
  std::size_t workers = 0;
  bool unconstrained = false;

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON experiment config");
    app->add_option("--model", model, "benchmark | gene_regulation | fitzhugh_nagumo");
    app->add_option("--agents,-V", agents, "number of agents");
    app->add_option("--attach", attach, "preferential-attachment edges per new agent");
    app->add_option("--horizon,-T", horizon, "time steps");
    app->add_option("--particles,-M", particles, "particles per agent");
    app->add_option("--runs,-R", runs, "Monte Carlo repetitions");
    app->add_option("--iterations", iterations, "EM iteration cap");
    app->add_option("--dt", dt, "Euler step for continuous-time models");
    app->add_option("--process-var", process_var, "override the true process-noise variance");
    app->add_option("--measurement-var", measurement_var, "override the true measurement-noise variance");
    app->add_option("--coupling", coupling, "interaction table index 0..4");
    app->add_option("--workers", workers, "parallel Monte Carlo runs (0: all cores)");
    app->add_flag("--unconstrained", unconstrained, "disable the contraction constraint");
  }

  ExperimentConfig resolve(std::uint64_t seed, const std::string& out, bool paper_scale) const {
    ExperimentConfig c = config.empty() ? ExperimentConfig{} : load_experiment_config(config);
    if (paper_scale) c.apply_paper_scale();
    if (!model.empty()) c.model = model;
    if (agents) c.num_agents = agents;
    if (attach) c.attach = attach;
    if (horizon) c.horizon = horizon;
    if (particles) c.num_particles = particles;
    if (runs) c.repetitions = runs;
    if (iterations) c.max_iterations = static_cast<int>(iterations);
    if (dt > 0) c.dt = dt;
    if (process_var > 0) c.process_var = process_var;
    if (measurement_var > 0) c.measurement_var = measurement_var;
    if (coupling >= 0) c.coupling = static_cast<std::size_t>(coupling);
    if (workers) c.workers = workers;
    if (unconstrained) c.constrained = false;
    c.seed = seed;
    c.out_dir = out;
    c.validate();
    return c;
  }
};

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed particle-consensus EM identification for networked nonlinear agents"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  std::string out = "runs";
  bool paper_scale = false;
  app.add_option("--seed", seed, "root seed")->capture_default_str();
  app.add_option("--out", out, "root directory for run outputs")->capture_default_str();
  app.add_flag("--paper-scale", paper_scale, "V=100, M=1000, R=100");

  // topology
  auto* topo = app.add_subcommand("topology", "generate a directed scale-free network");
  std::size_t topo_agents = 20, topo_attach = 5;
  double topo_degree = 5.1, topo_deletion = -1.0;
  topo->add_option("--agents,-V", topo_agents)->capture_default_str();
  topo->add_option("--attach", topo_attach)->capture_default_str();
  topo->add_option("--degree", topo_degree, "target mean total degree")->capture_default_str();
  topo->add_option("--deletion", topo_deletion, "explicit arc deletion fraction (overrides --degree)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "simulate a network trajectory");
  CommonFlags sim_flags;
  sim_flags.add(sim);

  // identify
  auto* ident = app.add_subcommand("identify", "run the identification loop once");
  CommonFlags id_flags;
  id_flags.add(ident);
  std::string data_csv, data_meta, edges_csv, history_out;
  ident->add_option("--data", data_csv, "trajectory CSV from `simulate` (simulates afresh when omitted)");
  ident->add_option("--meta", data_meta, "metadata JSON belonging to --data");
  ident->add_option("--edges", edges_csv, "edge list belonging to --data");

  // montecarlo
  auto* mc = app.add_subcommand("montecarlo", "Monte Carlo study with summary statistics");
  CommonFlags mc_flags;
  mc_flags.add(mc);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Monte Carlo over particles, noise levels or couplings");
  CommonFlags sw_flags;
  sw_flags.add(sw);
  std::string axis_name = "particles", values_text;
  sw->add_option("--axis", axis_name, "particles | noise | coupling")->capture_default_str();
  sw->add_option("--values", values_text, "comma separated values (noise/coupling: indices)");

  // report
  auto* rep = app.add_subcommand("report", "print the tables stored in a run directory");
  std::string report_dir;
  rep->add_option("dir", report_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (topo->parsed()) {
      RunDir dir(out, "topology", seed);
      const double deletion =
          topo_deletion >= 0 ? topo_deletion : deletion_fraction_for(topo_agents, topo_attach, topo_degree);
      const auto net = generate_ba_directed(topo_agents, topo_attach, deletion, seed);
      save_edge_list(dir.file("edges.csv"), net);
      const auto st = degree_stats(net);
      json info{{"agents", topo_agents},     {"attach", topo_attach},         {"deletion_fraction", deletion},
                {"edges", net.num_edges()},  {"mean_total_degree", st.mean_total}, {"max_total_degree", st.max_total},
                {"min_total_degree", st.min_total}, {"max_in_degree", net.max_in_degree()}};
      write_json(dir.file("topology.json"), info);
      std::cout << info.dump(2) << '\n';
      dir.finish({{"topology", info}});
    } else if (sim->parsed()) {
      const ExperimentConfig c = sim_flags.resolve(seed, out, paper_scale);
      RunDir dir(out, "simulate", seed);
      const auto sys = configured_system(c);
      const RunSeeds rs = run_seeds(seed, 0);
      const auto net = experiment_network(c, rs.topology);
      const auto data = simulate_network(sys.model, sys.model.true_theta, sys.coupling, net, c.horizon,
                                         uniform_initial_states(sys.x0, c.num_agents), rs.data);
      save_trajectory_csv(dir.file("trajectory.csv"), data);
      save_trajectory_metadata(dir.file("trajectory.json"), data);
      save_edge_list(dir.file("edges.csv"), net);
      dir.finish({{"config", to_json(c)}, {"coupling", sys.coupling.describe()}});
    } else if (ident->parsed()) {
      const ExperimentConfig c = id_flags.resolve(seed, out, paper_scale);
      RunDir dir(out, "identify", seed);
      const auto sys = configured_system(c);
      const RunSeeds rs = run_seeds(seed, 0);
      TrajectoryData data;
      DirectedNetwork net;
      if (!data_csv.empty()) {
        if (data_meta.empty() || edges_csv.empty()) throw ParameterError("--data needs --meta and --edges");
        data = load_trajectory(data_csv, data_meta);
        net = load_edge_list(edges_csv);
      } else {
        net = experiment_network(c, rs.topology);
        data = simulate_network(sys.model, sys.model.true_theta, sys.coupling, net, c.horizon,
                                uniform_initial_states(sys.x0, c.num_agents), rs.data);
      }
      const Vector truth = data.true_theta.size() ? data.true_theta : sys.model.true_theta;
      const Vector theta0 = random_initial_theta(truth, c.init_fraction, rs.init);
      PcdpemConfig pc = pcdpem_config(c, rs.em);
      pc.workers = c.workers;
      const ThetaEstimate est = run_pcdpem(data, net, sys.model, theta0, pc);
      save_history_csv(dir.file("history.csv"), est, sys.model);
      json j = to_json(est, sys.model);
      j["theta_true"] = std::vector<double>(truth.data(), truth.data() + truth.size());
      j["relative_error"] = relative_error(est.theta, truth);
      write_json(dir.file("estimate.json"), j);
      std::cout << "theta_hat";
      for (Eigen::Index i = 0; i < est.theta.size(); ++i) std::cout << ' ' << fmt(est.theta[i], 6);
      std::cout << "\nrelative error " << fmt(relative_error(est.theta, truth)) << " after " << est.iterations()
                << " iterations\n";
      dir.finish({{"config", to_json(c)}});
    } else if (mc->parsed()) {
      const ExperimentConfig c = mc_flags.resolve(seed, out, paper_scale);
      RunDir dir(out, "montecarlo-" + c.model, seed);
      const auto s = monte_carlo(c);
      save_records_csv(dir.file("runs.csv"), s);
      save_parameter_table(dir.file("parameters.csv"), s);
      write_json(dir.file("summary.json"), to_json(s));
      print_summary(s);
      dir.finish({{"config", to_json(c)}});
    } else if (sw->parsed()) {
      const ExperimentConfig c = sw_flags.resolve(seed, out, paper_scale);
      const SweepAxis axis = parse_sweep_axis(axis_name);
      std::vector<double> values = parse_values(values_text);
      if (values.empty()) {
        switch (axis) {
          case SweepAxis::Particles: values = {50, 100, 200, 500, 1000}; break;
          case SweepAxis::Noise: values = {0, 1, 2, 3}; break;
          case SweepAxis::Coupling: values = {0, 1, 2, 3, 4}; break;
        }
      }
      RunDir dir(out, "sweep-" + to_string(axis) + "-" + c.model, seed);
      const auto points = sweep(c, axis, values);
      save_sweep_csv(dir.file("sweep.csv"), axis, points);
      json summaries = json::array();
      for (const auto& p : points) {
        std::cout << "== " << p.label << '\n';
        print_summary(p.summary);
        json sj = to_json(p.summary);
        sj["label"] = p.label;
        sj["value"] = p.value;
        summaries.push_back(sj);
      }
      write_json(dir.file("summaries.json"), summaries);
      if (axis == SweepAxis::Particles) {
        const auto rows = timing_report(points);
        save_timing_csv(dir.file("timing.csv"), rows);
        std::cout << "particles  s/iteration  total s  iterations  rounds  within bound\n";
        for (const auto& r : rows) {
          std::cout << std::setw(11) << r.num_particles << std::setw(13) << fmt(r.mean_iteration_seconds)
                    << std::setw(9) << fmt(r.mean_total_seconds) << std::setw(12) << fmt(r.mean_iterations, 3)
                    << std::setw(8) << fmt(r.mean_rounds, 3) << (r.within_bound ? "  yes" : "  NO") << '\n';
        }
      }
      dir.finish({{"config", to_json(c)}, {"axis", to_string(axis)}, {"values", values}});
    } else if (rep->parsed()) {
      const fs::path root(report_dir);
      const fs::path manifest = root / "manifest.json";
      if (!fs::exists(manifest)) throw ParameterError("no manifest.json in " + report_dir);
      json m = json::parse(std::ifstream(manifest));
      std::cout << "command " << m.value("command", "?") << ", seed " << m.value("seed", 0) << ", created "
                << m.value("created", "?") << '\n';
      for (const auto& f : m["files"]) {
        const std::string name = f.get<std::string>();
        if (name.size() > 4 && name.substr(name.size() - 4) == ".csv" && name != "edges.csv" &&
            name != "trajectory.csv") {
          std::cout << "\n-- " << name << '\n' << std::ifstream(root / name).rdbuf();
        }
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
