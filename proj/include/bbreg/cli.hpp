#pragma once

// Command-line front end: fit, test, batch, simulate.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bbreg/batch.hpp"
#include "bbreg/bootstrap.hpp"
#include "bbreg/io.hpp"
#include "bbreg/simulation.hpp"

namespace bbreg {

struct RunConfig {
  std::string subcommand;
  std::string counts_path;
  std::string metadata_path;
  std::vector<std::string> mu_covariates;
  std::vector<std::string> phi_covariates;
  std::string taxon;
  std::vector<std::string> methods{"lrt"};
  std::optional<int> B;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::string out;
  std::string format;
  std::string summary_path;
  // simulate
  std::string setting = "S1";
  int n = 30;
  int sims = 1000;
  double c = 1.0;
  std::string depths_path;
  bool fixed_depths = false;
};

namespace detail {

inline std::vector<std::int64_t> read_depth_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open depth file '" + path + "'");
  std::vector<std::int64_t> depths;
  std::string tok;
  while (in >> tok) {
    for (char& ch : tok) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream parts(tok);
    std::int64_t v = 0;
    while (parts >> v) {
      if (v < 1) throw std::runtime_error("depth file '" + path + "': depths must be positive");
      depths.push_back(v);
    }
    if (!parts.eof()) throw std::runtime_error("depth file '" + path + "': non-integer entry '" + tok + "'");
  }
  if (depths.empty()) throw std::runtime_error("depth file '" + path + "' is empty");
  return depths;
}

inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << text;
}

inline std::size_t find_taxon(const CountTable& table, const std::string& taxon) {
  for (std::size_t t = 0; t < table.n_taxa(); ++t) {
    if (table.taxa[t] == taxon) return t;
  }
  throw std::runtime_error("taxon '" + taxon + "' is not in the counts file");
}

inline TestMethod single_method(const RunConfig& cfg) {
  if (cfg.methods.size() != 1) throw std::invalid_argument("--method takes a single method for this subcommand");
  return parse_test_method(cfg.methods.front());
}

inline TestOptions test_options(const RunConfig& cfg, int default_b) {
  TestOptions o;
  o.B = cfg.B.value_or(default_b);
  o.threads = cfg.threads;
  return o;
}

inline std::string run_fit(const RunConfig& cfg) {
  const auto in = ingest(cfg.counts_path, cfg.metadata_path, cfg.mu_covariates, cfg.phi_covariates);
  std::vector<std::size_t> which;
  if (!cfg.taxon.empty()) {
    which.push_back(find_taxon(in.table, cfg.taxon));
  } else {
    for (std::size_t t = 0; t < in.table.n_taxa(); ++t) which.push_back(t);
  }
  std::vector<FitResult> fits(which.size());
  parallel_for(which.size(), cfg.threads, [&](std::size_t i) {
    fits[i] = fit(Dataset(in.table.counts[which[i]], in.table.depths), in.design);
  });
  if (cfg.format == "csv") {
    std::ostringstream os;
    os << "taxon,loglik,converged,iterations,boundary,gradient_norm";
    for (int j = 0; j < in.design.dim(); ++j) os << ",theta_" << j;
    os << '\n';
    for (std::size_t i = 0; i < which.size(); ++i) {
      const auto& f = fits[i];
      os << in.table.taxa[which[i]] << ',' << format_double(f.loglik) << ',' << (f.converged ? "true" : "false")
         << ',' << f.iterations << ',' << (f.boundary_flag ? "true" : "false") << ',' << format_double(f.gradient_norm);
      for (int j = 0; j < in.design.dim(); ++j) os << ',' << format_double(f.theta_hat[j]);
      os << '\n';
    }
    return os.str();
  }
  nlohmann::json j;
  if (!cfg.taxon.empty()) {
    j = fit_json(cfg.taxon, fits.front());
  } else {
    j = nlohmann::json::array();
    for (std::size_t i = 0; i < which.size(); ++i) j.push_back(fit_json(in.table.taxa[which[i]], fits[i]));
  }
  return j.dump(2) + "\n";
}

inline std::string run_test_cmd(const RunConfig& cfg) {
  if (cfg.taxon.empty()) throw std::invalid_argument("test needs --taxon");
  const auto in = ingest(cfg.counts_path, cfg.metadata_path, cfg.mu_covariates, cfg.phi_covariates);
  const std::size_t t = find_taxon(in.table, cfg.taxon);
  const TestMethod method = single_method(cfg);
  const auto res = test_taxon(in.table.counts[t], in.table.depths, in.design, method,
                              test_options(cfg, kDefaultBootstrapReps), RngStream(cfg.seed, t));
  if (cfg.format == "csv") {
    std::ostringstream os;
    os << "taxon,hypothesis,method,statistic,df,p_value,degenerate\n";
    auto row = [&](const char* h, const std::optional<TestResult>& r) {
      if (!r) return;
      os << cfg.taxon << ',' << h << ',' << to_string(r->method) << ',' << format_double(r->statistic) << ','
         << r->df << ',' << format_double(r->p_value) << ',' << (r->degenerate ? "true" : "false") << '\n';
    };
    row("da", res.da);
    row("dv", res.dv);
    return os.str();
  }
  nlohmann::json j = {{"taxon", cfg.taxon},
                      {"theta_hat", theta_json(res.theta_hat)},
                      {"loglik", res.loglik},
                      {"converged", res.converged},
                      {"boundary", res.boundary},
                      {"da", test_json(res.da)},
                      {"dv", test_json(res.dv)}};
  return j.dump(2) + "\n";
}

inline std::string run_batch_cmd(const RunConfig& cfg, std::ostream& err) {
  const auto in = ingest(cfg.counts_path, cfg.metadata_path, cfg.mu_covariates, cfg.phi_covariates);
  const auto res = run_batch(in.table, in.design, single_method(cfg), test_options(cfg, kDefaultBootstrapReps), cfg.seed);
  for (const auto& s : res.skipped) err << "skipped " << s.taxon << ": " << s.reason << '\n';
  if (cfg.format == "csv") {
    std::ostringstream os;
    write_batch_csv(res, os);
    return os.str();
  }
  return batch_json(res).dump(2) + "\n";
}

inline std::string run_simulate(const RunConfig& cfg, std::ostream& err) {
  SimScenario sc;
  sc.setting = parse_setting(cfg.setting);
  sc.scale_c = cfg.c;
  sc.n = cfg.n;
  sc.n_sims = cfg.sims;
  sc.methods.clear();
  for (const auto& m : cfg.methods) sc.methods.push_back(parse_test_method(m));
  sc.B = cfg.B.value_or(200);
  sc.seed = cfg.seed;
  sc.threads = cfg.threads;
  sc.redraw_depths = !cfg.fixed_depths;
  if (!cfg.depths_path.empty()) sc.depth_pool = read_depth_file(cfg.depths_path);
  const auto rep = run_scenario(sc);
  const auto summary = sim_summary_json(rep);
  if (!cfg.summary_path.empty()) emit(cfg.summary_path, summary.dump(2) + "\n", err);
  for (const auto& [m, s] : rep.summary) {
    err << to_string(m) << ": rejection rate " << s.rejection_rate << ", KS " << s.ks_statistic << ", failures "
        << s.failures << '\n';
  }
  if (cfg.format == "json") return summary.dump(2) + "\n";
  std::ostringstream os;
  write_sim_csv(rep, os);
  return os.str();
}

}  // namespace detail

/// Executes a parsed configuration. Returns the process exit status.
inline int run(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    std::string text;
    if (cfg.subcommand == "fit") {
      text = detail::run_fit(cfg);
    } else if (cfg.subcommand == "test") {
      text = detail::run_test_cmd(cfg);
    } else if (cfg.subcommand == "batch") {
      text = detail::run_batch_cmd(cfg, err);
    } else if (cfg.subcommand == "simulate") {
      text = detail::run_simulate(cfg, err);
    } else {
      throw std::invalid_argument("unknown subcommand '" + cfg.subcommand + "'");
    }
    detail::emit(cfg.out, text, out);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

/// Parses argv into a RunConfig and runs it.
inline int main_entry(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Beta-binomial regression: fitting, hypothesis tests, batch analysis and simulation"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string methods_csv;

  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--counts", cfg.counts_path, "counts CSV (taxon,<sample ids>)")->required();
    sub->add_option("--metadata", cfg.metadata_path, "metadata CSV (sample,<covariates>)")->required();
    sub->add_option("--mu-covariates", cfg.mu_covariates, "comma-separated covariates of the mean model")
        ->delimiter(',');
    sub->add_option("--phi-covariates", cfg.phi_covariates, "comma-separated covariates of the overdispersion model")
        ->delimiter(',');
  };
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", cfg.out, "output path (default stdout)");
    sub->add_option("--format", cfg.format, "output format")->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--threads", cfg.threads, "worker threads (0 = all cores)");
  };
  auto add_testing = [&](CLI::App* sub) {
    sub->add_option("--method", methods_csv, "wald, lrt, pb_wald or pb_lrt");
    sub->add_option("--B", cfg.B, "bootstrap replicates")->check(CLI::PositiveNumber);
    sub->add_option("--seed", cfg.seed, "random seed");
  };

  auto* fit_cmd = app.add_subcommand("fit", "fit the model to one or all taxa");
  add_data(fit_cmd);
  add_common(fit_cmd);
  fit_cmd->add_option("--taxon", cfg.taxon, "taxon to fit (default all)");

  auto* test_cmd = app.add_subcommand("test", "differential abundance and variability tests for one taxon");
  add_data(test_cmd);
  add_common(test_cmd);
  add_testing(test_cmd);
  test_cmd->add_option("--taxon", cfg.taxon, "taxon to test")->required();

  auto* batch_cmd = app.add_subcommand("batch", "test every taxon and adjust with Benjamini-Hochberg");
  add_data(batch_cmd);
  add_common(batch_cmd);
  add_testing(batch_cmd);

  auto* sim_cmd = app.add_subcommand("simulate", "Type I error / power simulation");
  add_common(sim_cmd);
  add_testing(sim_cmd);
  sim_cmd->add_option("--setting", cfg.setting, "S1..S5")->check(CLI::IsMember({"S1", "S2", "S3", "S4", "S5"}));
  sim_cmd->add_option("--n", cfg.n, "sample size (even, >= 4)");
  sim_cmd->add_option("--sims", cfg.sims, "number of simulated datasets")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--c", cfg.c, "effect scale for S4/S5")->check(CLI::Range(0.0, 1.0));
  sim_cmd->add_option("--depths", cfg.depths_path, "file of admissible depths (whitespace or comma separated)");
  sim_cmd->add_flag("--fixed-depths", cfg.fixed_depths, "draw one depth vector for all replicates");
  sim_cmd->add_option("--summary", cfg.summary_path, "also write the JSON summary here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  cfg.subcommand = app.get_subcommands().front()->get_name();
  if (cfg.format.empty()) cfg.format = cfg.subcommand == "simulate" ? "csv" : "json";
  if (!methods_csv.empty()) {
    cfg.methods.clear();
    std::stringstream ss(methods_csv);
    std::string m;
    while (std::getline(ss, m, ',')) cfg.methods.push_back(m);
  } else if (cfg.subcommand == "simulate") {
    cfg.methods = {"wald", "lrt"};
  }
  return run(cfg, out, err);
}

}  // namespace bbreg
