#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "macroute/selector.hpp"
#include "macroute/simulator.hpp"

using namespace macroute;

namespace {

Topology read_topology(const std::string& path,
                       const std::vector<std::string>& lambda_overrides) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot open topology: " + path);
  Topology t = load_topology(in);
  for (const auto& spec : lambda_overrides) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("lambda override must look like NODE=RATE: " +
                               spec);
    const std::string id = spec.substr(0, eq);
    t.nodes[t.index_of(id)].lambda_pps = std::stod(spec.substr(eq + 1));
  }
  t.validate();
  return t;
}

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  if (out.empty()) throw std::runtime_error("empty grid: " + csv);
  return out;
}

struct CommonParams {
  MacParams mac;
  Timing timing;
  PowerProfile power;
};

void apply_config_file(const std::string& path, CommonParams& p,
                       SimConfig* sim) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j;
  in >> j;
  if (j.contains("mac")) {
    const auto& m = j["mac"];
    p.mac.min_be = m.value("min_be", p.mac.min_be);
    p.mac.max_be = m.value("max_be", p.mac.max_be);
    p.mac.max_backoffs = m.value("max_backoffs", p.mac.max_backoffs);
    p.mac.max_retries = m.value("max_retries", p.mac.max_retries);
  }
  if (j.contains("timing")) {
    const auto& t = j["timing"];
    p.timing.slot_s = t.value("slot_s", p.timing.slot_s);
    p.timing.cca_slots = t.value("cca_slots", p.timing.cca_slots);
    p.timing.tx_slots = t.value("tx_slots", p.timing.tx_slots);
    p.timing.ack_slots = t.value("ack_slots", p.timing.ack_slots);
  }
  if (j.contains("power")) {
    const auto& w = j["power"];
    p.power.tx_w = w.value("tx_w", p.power.tx_w);
    p.power.rx_w = w.value("rx_w", p.power.rx_w);
    p.power.cca_w = w.value("cca_w", p.power.cca_w);
    p.power.backoff_w = w.value("backoff_w", p.power.backoff_w);
    p.power.idle_w = w.value("idle_w", p.power.idle_w);
  }
  if (sim && j.contains("sim")) {
    const auto& s = j["sim"];
    sim->duration_s = s.value("duration_s", sim->duration_s);
    sim->reselect_period_s = s.value("reselect_period_s", sim->reselect_period_s);
    sim->alpha_smoothing = s.value("alpha_smoothing", sim->alpha_smoothing);
    sim->alpha_window = s.value("alpha_window", sim->alpha_window);
    sim->etx_window = s.value("etx_window", sim->etx_window);
    sim->queue_capacity = s.value("queue_capacity", sim->queue_capacity);
    if (s.contains("forced_alpha"))
      sim->forced_alpha = s["forced_alpha"].get<double>();
  }
}

std::ostream& open_out(std::ofstream& file, const std::string& path) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file.good()) throw std::runtime_error("cannot open output: " + path);
  return file;
}

int cmd_solve(const std::string& topo_path, const std::string& metric_name,
              double r_min, double bp_weight, const CommonParams& p,
              const std::vector<std::string>& lambdas, const std::string& out,
              const std::string& sweep) {
  Topology t = read_topology(topo_path, lambdas);
  Dodag d = build_dodag(t);
  MetricKind metric{metric_tag_from_string(metric_name)};
  metric.r_min = r_min;
  metric.bp_weight = bp_weight;

  std::ofstream file;
  std::ostream& os = open_out(file, out);

  if (!sweep.empty()) {
    // a:b:n, n log-spaced common rate multipliers between a and b
    double lo, hi;
    int steps;
    char c1, c2;
    std::istringstream ss(sweep);
    if (!(ss >> lo >> c1 >> hi >> c2 >> steps) || c1 != ':' || c2 != ':' ||
        steps < 2 || lo <= 0 || hi <= lo)
      throw std::runtime_error("sweep must look like LO:HI:STEPS");
    os << "lambda_scale,converged,min_reliability,max_delay_s,max_power_w\n";
    bool all_ok = true;
    for (int k = 0; k < steps; ++k) {
      const double scale =
          std::pow(10.0, std::log10(lo) +
                             (std::log10(hi) - std::log10(lo)) * k / (steps - 1));
      Topology scaled = t;
      for (auto& n : scaled.nodes) n.lambda_pps *= scale;
      auto s = solve_network(scaled, d, metric, p.mac, p.timing, p.power);
      double min_r = 1.0, max_d = 0.0, max_p = 0.0;
      for (int i = 0; i < scaled.size(); ++i) {
        if (i != scaled.root_index()) {
          min_r = std::min(min_r, s.e2e_reliability[i]);
          max_d = std::max(max_d, s.e2e_delay_s[i]);
        }
        max_p = std::max(max_p, s.node_power_w[i]);
      }
      os << scale << ',' << (s.converged ? 1 : 0) << ',' << min_r << ','
         << max_d << ',' << max_p << '\n';
      all_ok = all_ok && s.converged;
    }
    return all_ok ? 0 : 2;
  }

  auto s = solve_network(t, d, metric, p.mac, p.timing, p.power);
  write_solution_csv(os, t, s);
  if (!s.converged) {
    std::cerr << "warning: fixed point did not converge in " << s.iterations
              << " iterations; emitted the last iterate\n";
    return 2;
  }
  return 0;
}

int cmd_simulate(const std::string& topo_path, SimConfig cfg, int runs,
                 const CommonParams& p, const std::vector<std::string>& lambdas,
                 const std::string& out, const std::string& trace_path) {
  Topology t = read_topology(topo_path, lambdas);
  Dodag d = build_dodag(t);
  cfg.mac = p.mac;
  cfg.timing = p.timing;
  cfg.profile = p.power;

  std::ofstream file;
  std::ostream& os = open_out(file, out);

  if (runs <= 1) {
    auto [trace, report] = run_simulation(t, d, cfg);
    write_report_csv(os, t, report);
    if (!trace_path.empty()) {
      std::ofstream tr(trace_path);
      if (!tr.good())
        throw std::runtime_error("cannot open trace: " + trace_path);
      write_trace_jsonl(tr, t, trace);
    }
    return 0;
  }

  os << "run,avg_reliability,min_reliability,avg_delay_s,max_power_w,switches\n";
  for (int r = 0; r < runs; ++r) {
    cfg.run_index = r;
    auto [trace, report] = run_simulation(t, d, cfg);
    os << r << ',' << report.avg_reliability << ',' << report.min_reliability
       << ',' << report.avg_delay_s << ',' << report.max_power_w << ','
       << report.total_switches << '\n';
  }
  return 0;
}

int cmd_select(const std::string& topo_path, const CommonParams& p,
               const std::vector<std::string>& lambdas, double r_min,
               double d_max, const std::string& r_grid_csv,
               const std::string& d_grid_csv, const SearchSpace& space,
               const std::string& out) {
  Topology t = read_topology(topo_path, lambdas);
  Dodag d = build_dodag(t);
  std::ofstream file;
  std::ostream& os = open_out(file, out);

  if (!r_grid_csv.empty() || !d_grid_csv.empty()) {
    const auto r_grid =
        r_grid_csv.empty() ? std::vector<double>{r_min} : parse_grid(r_grid_csv);
    const auto d_grid =
        d_grid_csv.empty() ? std::vector<double>{d_max} : parse_grid(d_grid_csv);
    auto map =
        map_feasibility(t, d, r_grid, d_grid, p.timing, p.power, space);
    write_feasibility_csv(os, map);
    for (const auto& cell : map.cells)
      if (cell) return 0;
    return 2;
  }

  auto res =
      select_configuration(t, d, r_min, d_max, p.timing, p.power, space);
  if (!res.feasible) {
    os << "INFEASIBLE\n";
    return 2;
  }
  os << "config,objective_w\n" << res.config.label() << ','
     << res.config.objective_w << '\n';
  return 0;
}

int cmd_compare(const std::string& topo_path, const std::string& metric_name,
                double r_min, double bp_weight, SimConfig cfg, int runs,
                const CommonParams& p, const std::vector<std::string>& lambdas,
                const std::string& out) {
  Topology t = read_topology(topo_path, lambdas);
  Dodag d = build_dodag(t);
  MetricKind metric{metric_tag_from_string(metric_name)};
  metric.r_min = r_min;
  metric.bp_weight = bp_weight;
  cfg.metric = metric;
  cfg.mac = p.mac;
  cfg.timing = p.timing;
  cfg.profile = p.power;

  auto s = solve_network(t, d, metric, p.mac, p.timing, p.power);

  const int n = t.size();
  std::vector<double> rel(n, 0.0), delay(n, 0.0), power(n, 0.0);
  for (int r = 0; r < std::max(1, runs); ++r) {
    cfg.run_index = r;
    auto [trace, report] = run_simulation(t, d, cfg);
    for (int i = 0; i < n; ++i) {
      rel[i] += report.reliability[i];
      delay[i] += report.mean_delay_s[i];
      power[i] += report.power_w[i];
    }
  }
  const double k = std::max(1, runs);

  std::ofstream file;
  std::ostream& os = open_out(file, out);
  os << "node,model_reliability,sim_reliability,model_delay_s,sim_delay_s,"
        "model_power_w,sim_power_w\n";
  for (int i = 0; i < n; ++i)
    os << t.nodes[i].id << ',' << s.e2e_reliability[i] << ',' << rel[i] / k
       << ',' << s.e2e_delay_s[i] << ',' << delay[i] / k << ','
       << s.node_power_w[i] << ',' << power[i] / k << '\n';
  return s.converged ? 0 : 2;
}

int cmd_gen(int nodes, std::uint64_t seed, double density, double lambda,
            const std::string& out) {
  Topology t = generate_random_topology(nodes, seed, density, lambda);
  std::ofstream file;
  std::ostream& os = open_out(file, out);
  os << topology_to_json(t).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"analytical and simulated evaluation of CSMA/CA mesh routing"};
  app.require_subcommand(1);

  std::string topo_path, metric_name = "r", out, trace_path, config_path;
  std::vector<std::string> lambdas;
  double r_min = 0.5, bp_weight = 1.0, d_max = 0.1;
  std::string sweep, r_grid_csv, d_grid_csv;
  CommonParams params;
  SimConfig sim;
  sim.metric = {MetricTag::RMetric};
  int runs = 1;
  bool poisson = false;
  double forced_alpha = -1.0;
  SearchSpace space;
  int gen_nodes = 19;
  std::uint64_t gen_seed = 1;
  double gen_density = 2.0, gen_lambda = 1.0;

  auto add_common = [&](CLI::App* cmd, bool needs_topology = true) {
    if (needs_topology)
      cmd->add_option("--topology", topo_path, "topology JSON file")
          ->required();
    cmd->add_option("--lambda", lambdas,
                    "per-node rate override, NODE=RATE (repeatable)");
    cmd->add_option("--config", config_path,
                    "JSON file overriding mac/timing/power/sim defaults");
    cmd->add_option("--min-be", params.mac.min_be, "initial backoff exponent");
    cmd->add_option("--max-be", params.mac.max_be, "backoff exponent cap");
    cmd->add_option("--max-backoffs", params.mac.max_backoffs,
                    "extra CCA attempts before an access-failure drop");
    cmd->add_option("--max-retries", params.mac.max_retries,
                    "retransmissions before a retry-limit drop");
    cmd->add_option("--out", out, "output file (default stdout)");
  };
  auto add_metric = [&](CLI::App* cmd) {
    cmd->add_option("--metric", metric_name,
                    "parent selection rule: etx, r, q, backpressure");
    cmd->add_option("--rmin", r_min, "reliability floor of the q rule");
    cmd->add_option("--bp-weight", bp_weight,
                    "link-cost weight of the back-pressure rule");
  };
  auto add_sim = [&](CLI::App* cmd) {
    cmd->add_option("--seed", sim.seed, "simulation seed");
    cmd->add_option("--runs", runs, "independent replications");
    cmd->add_option("--duration", sim.duration_s, "simulated seconds");
    cmd->add_flag("--poisson", poisson,
                  "Poisson arrivals instead of jittered periodic");
    cmd->add_option("--forced-alpha", forced_alpha,
                    "script CCA busy outcomes with this probability");
  };

  auto* solve = app.add_subcommand("solve", "analytical fixed point");
  add_common(solve);
  add_metric(solve);
  solve->add_option("--lambda-sweep", sweep,
                    "LO:HI:STEPS log-spaced rate multipliers");

  auto* simulate = app.add_subcommand("simulate", "discrete-event run");
  add_common(simulate);
  add_metric(simulate);
  add_sim(simulate);
  simulate->add_option("--trace", trace_path, "per-packet JSON-lines trace");

  auto* select = app.add_subcommand("select", "constrained parameter search");
  add_common(select);
  select->add_option("--rmin", r_min, "end-to-end reliability floor");
  select->add_option("--dmax", d_max, "end-to-end delay ceiling, seconds");
  select->add_option("--rmin-grid", r_grid_csv,
                     "comma list of reliability floors (feasibility map)");
  select->add_option("--dmax-grid", d_grid_csv,
                     "comma list of delay ceilings (feasibility map)");
  select->add_option("--be-lo", space.min_be_lo, "smallest initial exponent");
  select->add_option("--be-hi", space.min_be_hi, "largest initial exponent");
  select->add_option("--cap-hi", space.max_be_hi, "largest exponent cap");
  select->add_option("--backoffs-hi", space.max_backoffs_hi,
                     "largest extra-CCA count");

  auto* compare = app.add_subcommand(
      "compare", "model vs simulation, per node, averaged over runs");
  add_common(compare);
  add_metric(compare);
  add_sim(compare);

  auto* gen = app.add_subcommand("gen-topology", "random layered topology");
  gen->add_option("--nodes", gen_nodes, "node count including the sink");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--density", gen_density, "mean extra parent links per node");
  gen->add_option("--rate", gen_lambda, "per-node packet rate");
  gen->add_option("--out", out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) apply_config_file(config_path, params, &sim);
    if (poisson) sim.arrivals = ArrivalProcess::Poisson;
    if (forced_alpha >= 0.0) sim.forced_alpha = forced_alpha;
    params.mac.validate();
    params.timing.validate();
    params.power.validate();

    if (solve->parsed())
      return cmd_solve(topo_path, metric_name, r_min, bp_weight, params,
                       lambdas, out, sweep);
    if (simulate->parsed()) {
      sim.metric = MetricKind{metric_tag_from_string(metric_name)};
      sim.metric.r_min = r_min;
      sim.metric.bp_weight = bp_weight;
      return cmd_simulate(topo_path, sim, runs, params, lambdas, out,
                          trace_path);
    }
    if (select->parsed())
      return cmd_select(topo_path, params, lambdas, r_min, d_max, r_grid_csv,
                        d_grid_csv, space, out);
    if (compare->parsed())
      return cmd_compare(topo_path, metric_name, r_min, bp_weight, sim, runs,
                         params, lambdas, out);
    if (gen->parsed())
      return cmd_gen(gen_nodes, gen_seed, gen_density, gen_lambda, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
