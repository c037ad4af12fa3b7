#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pcdpem/errors.hpp"
#include "pcdpem/experiment.hpp"

using namespace pcdpem;

namespace {

ExperimentConfig tiny(std::size_t reps = 2) {
  ExperimentConfig c;
  c.model = "gene_regulation";
  c.num_agents = 6;
  c.attach = 2;
  c.horizon = 30;
  c.num_particles = 60;
  c.repetitions = reps;
  c.max_iterations = 3;
  c.workers = 1;
  c.seed = 42;
  return c;
}

}  // namespace

TEST_CASE("single repetition reports zero spread") {
  const auto s = monte_carlo(tiny(1));
  REQUIRE(s.records.size() == 1);
  REQUIRE(s.successes() == 1);
  CHECK(s.stddev.isZero());
  CHECK(s.mean == s.records[0].theta_hat);
  CHECK(s.median_error == s.records[0].relative_error);
}

TEST_CASE("runs are reproducible and ordered") {
  const auto c = tiny(2);
  const auto a = monte_carlo(c);
  auto c2 = c;
  c2.workers = 2;
  const auto b = monte_carlo(c2);
  REQUIRE(a.records.size() == 2);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(a.records[r].run == r);
    CHECK(a.records[r].theta_hat == b.records[r].theta_hat);
    CHECK(a.records[r].messages == b.records[r].messages);
    CHECK(a.records[r].relative_error == relative_error(a.records[r].theta_hat, a.records[r].theta_true));
  }
  CHECK(a.records[0].theta0 != a.records[1].theta0);
}

TEST_CASE("aggregates are recomputable from records") {
  auto s = monte_carlo(tiny(3));
  const Vector mean = s.mean, sd = s.stddev;
  const double med = s.median_error;
  summarize(s);
  CHECK(s.mean == mean);
  CHECK(s.stddev == sd);
  CHECK(s.median_error == med);

  s.records[1].failed = true;
  summarize(s);
  CHECK(s.failures == 1);
  CHECK(s.successes() == 2);
  CHECK(s.mean.isApprox(0.5 * (s.records[0].theta_hat + s.records[2].theta_hat)));
}

TEST_CASE("error metrics") {
  Vector est(3), truth(3);
  est << 1.1, -2.0, 0.5;
  truth << 1.0, -2.5, 0.0;
  CHECK(relative_error(est, truth) == doctest::Approx((est - truth).norm() / truth.norm()));
  const Vector pe = parameter_errors(est, truth);
  CHECK(pe[0] == doctest::Approx(0.1));
  CHECK(pe[1] == doctest::Approx(0.2));
  CHECK(pe[2] == doctest::Approx(0.5));
}

TEST_CASE("config JSON round trip and validation") {
  auto c = tiny();
  c.coupling = 3;
  c.process_var = 0.5;
  c.form = QbarForm::Aggregate;
  const auto back = experiment_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json{{"particles", 5}}), ParameterError);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json{{"model", "lorenz"}}), ParameterError);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json{{"repetitions", 0}}), ParameterError);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json{{"init_fraction", 1.5}}), ParameterError);

  const auto dir = std::filesystem::temp_directory_path() / "pcdpem_cfg";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "c.json");
    out << "{\n  // desk scale\n  \"model\": \"fitzhugh_nagumo\", \"num_particles\": 123\n}\n";
  }
  const auto loaded = load_experiment_config((dir / "c.json").string());
  CHECK(loaded.model == "fitzhugh_nagumo");
  CHECK(loaded.num_particles == 123);
  CHECK(loaded.num_agents == 20);
  std::filesystem::remove_all(dir);

  ExperimentConfig p;
  p.apply_paper_scale();
  CHECK(p.num_agents == 100);
  CHECK(p.num_particles == 1000);
  CHECK(p.repetitions == 100);
}

TEST_CASE("configured systems and topology") {
  ExperimentConfig c;
  c.model = "benchmark";
  c.process_var = 5.0;
  c.measurement_var = 10.0;
  c.coupling = 1;
  const auto sys = configured_system(c);
  CHECK(sys.model.true_theta[4] == 5.0);
  CHECK(sys.model.true_theta[5] == 10.0);
  CHECK(sys.coupling.kind == CouplingKind::SineSquared);

  CHECK(deletion_fraction_for(100, 5, 5.1) == doctest::Approx(1.0 - 255.0 / 950.0));
  const auto net = experiment_network(c, 3);
  CHECK(net.num_agents() == 20);
  CHECK(degree_stats(net).mean_total == doctest::Approx(5.1).epsilon(0.05));

  const auto s0 = run_seeds(1, 0), s1 = run_seeds(1, 1);
  CHECK(s0.data != s1.data);
  CHECK(s0.topology != s0.data);
}

TEST_CASE("sweep axes, timing and communication accounting") {
  CHECK(parse_sweep_axis("particles") == SweepAxis::Particles);
  CHECK(to_string(SweepAxis::Coupling) == "coupling");
  CHECK_THROWS_AS(parse_sweep_axis("temperature"), ParameterError);
  CHECK(noise_levels().size() == 4);
  CHECK(communication_bound(10, 7, 3) == 210.0);

  auto c = tiny(1);
  c.max_iterations = 2;
  const auto pts = sweep(c, SweepAxis::Particles, {20, 40});
  REQUIRE(pts.size() == 2);
  CHECK(pts[1].summary.config.num_particles == 40);
  const auto rows = timing_report(pts);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.messages_per_round_exact);
    CHECK(r.within_bound);
    CHECK(r.max_messages_per_round == 6);
    CHECK(r.mean_iteration_seconds > 0.0);
  }
}

TEST_CASE("comparison constants") {
  CHECK(comparison_values("gene_regulation")[0] == doctest::Approx(-0.197));
  CHECK(comparison_values("fitzhugh_nagumo").size() == 8);
  CHECK(std::isnan(comparison_values("fitzhugh_nagumo")[7]));
}
