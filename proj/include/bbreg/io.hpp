#pragma once

// Count-table and metadata CSV ingestion, and result writers.
//
// counts CSV:   taxon,<sample ids...>   one row per taxon, integer cells
// metadata CSV: sample,<covariates...>  one row per sample
//
// Samples are joined by id. A covariate column whose cells all parse as
// numbers is used as is; a column with exactly two distinct string levels
// is coded 0/1 with the lexicographically smaller level as 0.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbreg/batch.hpp"
#include "bbreg/model.hpp"
#include "bbreg/optimizer.hpp"
#include "bbreg/simulation.hpp"

namespace bbreg {

enum class IngestErrorKind {
  unreadable,
  malformed,
  missing_id,
  non_integer,
  negative_count,
  duplicate_id,
  missing_column,
  bad_covariate,
};

class IngestError : public std::runtime_error {
 public:
  IngestError(IngestErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  [[nodiscard]] IngestErrorKind kind() const { return kind_; }

 private:
  IngestErrorKind kind_;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

inline CsvFile read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(IngestErrorKind::unreadable, "cannot open '" + path + "'");
  CsvFile f;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      f.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != f.header.size()) {
      throw IngestError(IngestErrorKind::malformed, path + ":" + std::to_string(lineno) + ": expected " +
                                                        std::to_string(f.header.size()) + " fields, found " +
                                                        std::to_string(cells.size()));
    }
    f.rows.push_back(std::move(cells));
    f.line_numbers.push_back(lineno);
  }
  if (!have_header) throw IngestError(IngestErrorKind::malformed, path + ": empty file");
  return f;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

}  // namespace detail

/// Reads a counts CSV. Depths are the column sums.
inline CountTable read_counts(const std::string& path) {
  const auto f = detail::read_csv(path);
  if (f.header.size() < 2) throw IngestError(IngestErrorKind::malformed, path + ": no sample columns");
  std::vector<std::string> samples(f.header.begin() + 1, f.header.end());
  std::set<std::string> seen;
  for (const auto& s : samples) {
    if (s.empty()) throw IngestError(IngestErrorKind::malformed, path + ": empty sample id in header");
    if (!seen.insert(s).second) throw IngestError(IngestErrorKind::duplicate_id, path + ": duplicate sample id '" + s + "'");
  }
  std::vector<std::string> taxa;
  std::vector<std::vector<std::int64_t>> counts;
  seen.clear();
  for (std::size_t r = 0; r < f.rows.size(); ++r) {
    const auto& row = f.rows[r];
    const std::string where = path + ":" + std::to_string(f.line_numbers[r]);
    if (row[0].empty()) throw IngestError(IngestErrorKind::malformed, where + ": empty taxon id");
    if (!seen.insert(row[0]).second) {
      throw IngestError(IngestErrorKind::duplicate_id, where + ": duplicate taxon id '" + row[0] + "'");
    }
    std::vector<std::int64_t> values(samples.size());
    for (std::size_t j = 0; j < samples.size(); ++j) {
      const auto& cell = row[j + 1];
      std::int64_t v = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw IngestError(IngestErrorKind::non_integer,
                          where + ": count for taxon '" + row[0] + "', sample '" + samples[j] +
                              "' is not an integer: '" + cell + "'");
      }
      if (v < 0) {
        throw IngestError(IngestErrorKind::negative_count,
                          where + ": negative count for taxon '" + row[0] + "', sample '" + samples[j] + "'");
      }
      values[j] = v;
    }
    taxa.push_back(row[0]);
    counts.push_back(std::move(values));
  }
  if (taxa.empty()) throw IngestError(IngestErrorKind::malformed, path + ": no taxa");
  try {
    return CountTable::from_counts(std::move(taxa), std::move(samples), std::move(counts));
  } catch (const std::invalid_argument& e) {
    throw IngestError(IngestErrorKind::malformed, path + ": " + e.what());
  }
}

struct Metadata {
  std::vector<std::string> columns;
  std::map<std::string, std::vector<std::string>> rows;  // sample id -> cells
};

inline Metadata read_metadata(const std::string& path) {
  const auto f = detail::read_csv(path);
  Metadata md;
  md.columns.assign(f.header.begin() + 1, f.header.end());
  std::set<std::string> seen;
  for (const auto& c : md.columns) {
    if (!seen.insert(c).second) throw IngestError(IngestErrorKind::duplicate_id, path + ": duplicate column '" + c + "'");
  }
  for (std::size_t r = 0; r < f.rows.size(); ++r) {
    const auto& row = f.rows[r];
    if (md.rows.contains(row[0])) {
      throw IngestError(IngestErrorKind::duplicate_id, path + ":" + std::to_string(f.line_numbers[r]) +
                                                           ": duplicate sample id '" + row[0] + "'");
    }
    md.rows[row[0]] = std::vector<std::string>(row.begin() + 1, row.end());
  }
  return md;
}

/// Covariate matrix for the named columns, rows in `samples` order.
inline Matrix covariate_matrix(const Metadata& md, const std::vector<std::string>& samples,
                               const std::vector<std::string>& names) {
  for (const auto& s : samples) {
    if (!md.rows.contains(s)) throw IngestError(IngestErrorKind::missing_id, "sample '" + s + "' is missing from the metadata");
  }
  Matrix X(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t c = 0; c < names.size(); ++c) {
    const auto it = std::ranges::find(md.columns, names[c]);
    if (it == md.columns.end()) {
      throw IngestError(IngestErrorKind::missing_column, "covariate '" + names[c] + "' is not a metadata column");
    }
    const auto col = static_cast<std::size_t>(it - md.columns.begin());
    std::vector<std::string> cells;
    for (const auto& s : samples) cells.push_back(md.rows.at(s)[col]);
    std::vector<double> numeric(cells.size());
    bool all_numeric = true;
    for (std::size_t i = 0; i < cells.size() && all_numeric; ++i) all_numeric = detail::parse_double(cells[i], numeric[i]);
    if (!all_numeric) {
      const std::set<std::string> levels(cells.begin(), cells.end());
      if (levels.size() != 2) {
        throw IngestError(IngestErrorKind::bad_covariate, "covariate '" + names[c] + "' is neither numeric nor two-level (" +
                                                              std::to_string(levels.size()) + " levels)");
      }
      const std::string& zero = *levels.begin();
      for (std::size_t i = 0; i < cells.size(); ++i) numeric[i] = cells[i] == zero ? 0.0 : 1.0;
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = numeric[i];
    }
  }
  return X;
}

struct Ingested {
  CountTable table;
  DesignPair design;
};

inline Ingested ingest(const std::string& counts_path, const std::string& metadata_path,
                       const std::vector<std::string>& mu_covariates, const std::vector<std::string>& phi_covariates) {
  Ingested out{read_counts(counts_path), {}};
  const Metadata md = read_metadata(metadata_path);
  Matrix X = covariate_matrix(md, out.table.sample_ids, mu_covariates);
  Matrix Xs = covariate_matrix(md, out.table.sample_ids, phi_covariates);
  try {
    out.design = DesignPair(std::move(X), std::move(Xs));
  } catch (const std::invalid_argument& e) {
    throw IngestError(IngestErrorKind::bad_covariate, e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_counts(const CountTable& table, std::ostream& os) {
  os << "taxon";
  for (const auto& s : table.sample_ids) os << ',' << s;
  os << '\n';
  for (std::size_t t = 0; t < table.n_taxa(); ++t) {
    os << table.taxa[t];
    for (auto c : table.counts[t]) os << ',' << c;
    os << '\n';
  }
}

inline nlohmann::json theta_json(const Theta& t) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"beta0", t.beta0()}, {"beta", vec(t.beta())}, {"beta0_star", t.beta0star()}, {"beta_star", vec(t.betastar())}};
}

inline nlohmann::json fit_json(const std::string& taxon, const FitResult& f) {
  return {{"taxon", taxon},
          {"theta_hat", theta_json(f.theta_hat)},
          {"loglik", f.loglik},
          {"converged", f.converged},
          {"iterations", f.iterations},
          {"boundary", f.boundary_flag},
          {"gradient_norm", f.gradient_norm},
          {"n_starts", f.n_starts_used}};
}

inline nlohmann::json test_json(const std::optional<TestResult>& r) {
  if (!r) return nullptr;
  nlohmann::json j = {{"method", to_string(r->method)}, {"statistic", r->statistic}, {"df", r->df},
                      {"p_value", r->p_value},          {"degenerate", r->degenerate}};
  if (r->boot_reps) {
    j["boot_reps"] = *r->boot_reps;
    j["excluded_reps"] = r->excluded_reps;
  }
  if (!r->warning.empty()) j["warning"] = r->warning;
  return j;
}

inline nlohmann::json taxon_json(const TaxonResult& r) {
  auto opt = [](const std::optional<TestResult>& t, auto get) -> nlohmann::json {
    if (!t) return nullptr;
    return get(*t);
  };
  return {{"taxon", r.taxon},
          {"p_da", opt(r.da, [](const TestResult& t) { return t.p_value; })},
          {"p_dv", opt(r.dv, [](const TestResult& t) { return t.p_value; })},
          {"q_da", r.da ? nlohmann::json(r.q_da) : nlohmann::json(nullptr)},
          {"q_dv", r.dv ? nlohmann::json(r.q_dv) : nlohmann::json(nullptr)},
          {"degenerate_da", opt(r.da, [](const TestResult& t) { return t.degenerate; })},
          {"degenerate_dv", opt(r.dv, [](const TestResult& t) { return t.degenerate; })},
          {"converged", r.converged}};
}

inline nlohmann::json batch_json(const BatchResult& b) {
  nlohmann::json out = {{"results", nlohmann::json::array()}, {"skipped", nlohmann::json::array()}};
  for (const auto& r : b.records) out["results"].push_back(taxon_json(r));
  for (const auto& s : b.skipped) out["skipped"].push_back({{"taxon", s.taxon}, {"reason", s.reason}});
  return out;
}

inline void write_batch_csv(const BatchResult& b, std::ostream& os) {
  auto num = [](bool present, double v) { return present ? format_double(v) : std::string("NA"); };
  auto flag = [](bool present, bool v) { return present ? std::string(v ? "true" : "false") : std::string("NA"); };
  os << "taxon,p_da,p_dv,q_da,q_dv,degenerate_da,degenerate_dv,converged\n";
  for (const auto& r : b.records) {
    os << r.taxon << ',' << num(r.da.has_value(), r.da ? r.da->p_value : 0.0) << ','
       << num(r.dv.has_value(), r.dv ? r.dv->p_value : 0.0) << ',' << num(r.da.has_value(), r.q_da) << ','
       << num(r.dv.has_value(), r.q_dv) << ',' << flag(r.da.has_value(), r.da && r.da->degenerate) << ','
       << flag(r.dv.has_value(), r.dv && r.dv->degenerate) << ',' << (r.converged ? "true" : "false") << '\n';
  }
}

/// One row per (replicate, method).
inline void write_sim_csv(const SimReport& rep, std::ostream& os) {
  os << "replicate,method,p_value,statistic,degenerate,failed\n";
  const auto sims = static_cast<std::size_t>(rep.scenario.n_sims);
  for (std::size_t r = 0; r < sims; ++r) {
    for (auto m : rep.scenario.methods) {
      const auto& rec = rep.records.at(m)[r];
      os << r << ',' << to_string(m) << ',' << (rec.failed ? "NA" : format_double(rec.p_value)) << ','
         << (rec.failed ? "NA" : format_double(rec.statistic)) << ',' << (rec.degenerate ? "true" : "false") << ','
         << (rec.failed ? "true" : "false") << '\n';
    }
  }
}

inline nlohmann::json sim_summary_json(const SimReport& rep) {
  const auto& sc = rep.scenario;
  nlohmann::json methods = nlohmann::json::object();
  for (const auto& [m, s] : rep.summary) {
    methods[std::string(to_string(m))] = {{"rejection_rate", s.rejection_rate},
                                          {"ks_statistic", s.ks_statistic},
                                          {"failures", s.failures}};
  }
  return {{"setting", to_string(sc.setting)},
          {"c", sc.scale_c},
          {"n", sc.n},
          {"n_sims", sc.n_sims},
          {"B", sc.B},
          {"seed", sc.seed},
          {"level", kSimLevel},
          {"ks_critical_1pct", ks_critical_1pct(static_cast<std::size_t>(sc.n_sims))},
          {"theta_true", theta_json(sc.theta_true())},
          {"methods", methods}};
}

}  // namespace bbreg
