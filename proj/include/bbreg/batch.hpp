#pragma once

// Per-taxon differential abundance (all mean-model slopes zero) and
// differential variability (all overdispersion slopes zero) over a count
// table, followed by Benjamini-Hochberg adjustment.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bbreg/bootstrap.hpp"
#include "bbreg/inference.hpp"
#include "bbreg/model.hpp"
#include "bbreg/optimizer.hpp"
#include "bbreg/parallel.hpp"
#include "bbreg/random.hpp"

namespace bbreg {

/// Taxa x samples count matrix. Depths are sample totals over every taxon
/// in the table and stay fixed when taxa are filtered out.
struct CountTable {
  std::vector<std::string> taxa;
  std::vector<std::string> sample_ids;
  std::vector<std::vector<std::int64_t>> counts;  // counts[taxon][sample]
  std::vector<std::int64_t> depths;

  /// Builds a table and sets depths to the column sums.
  static CountTable from_counts(std::vector<std::string> taxa, std::vector<std::string> sample_ids,
                                std::vector<std::vector<std::int64_t>> counts) {
    CountTable t{std::move(taxa), std::move(sample_ids), std::move(counts), {}};
    t.depths.assign(t.sample_ids.size(), 0);
    for (const auto& row : t.counts) {
      if (row.size() != t.sample_ids.size()) throw std::invalid_argument("CountTable: ragged count matrix");
      for (std::size_t j = 0; j < row.size(); ++j) t.depths[j] += row[j];
    }
    t.validate();
    return t;
  }

  [[nodiscard]] std::size_t n_taxa() const { return taxa.size(); }
  [[nodiscard]] std::size_t n_samples() const { return sample_ids.size(); }

  void validate() const {
    if (counts.size() != taxa.size()) throw std::invalid_argument("CountTable: taxa and rows differ in number");
    if (depths.size() != sample_ids.size()) throw std::invalid_argument("CountTable: depths length mismatch");
    if (std::set<std::string>(taxa.begin(), taxa.end()).size() != taxa.size()) {
      throw std::invalid_argument("CountTable: duplicate taxon identifier");
    }
    if (std::set<std::string>(sample_ids.begin(), sample_ids.end()).size() != sample_ids.size()) {
      throw std::invalid_argument("CountTable: duplicate sample identifier");
    }
    for (std::size_t t = 0; t < counts.size(); ++t) {
      if (counts[t].size() != sample_ids.size()) throw std::invalid_argument("CountTable: ragged count matrix");
      for (auto c : counts[t]) {
        if (c < 0) throw std::invalid_argument("CountTable: negative count for taxon " + taxa[t]);
      }
    }
    for (std::size_t j = 0; j < depths.size(); ++j) {
      if (depths[j] < 1) throw std::invalid_argument("CountTable: sample " + sample_ids[j] + " has zero total count");
    }
  }

  friend bool operator==(const CountTable&, const CountTable&) = default;
};

struct SkippedTaxon {
  std::string taxon;
  std::string reason;
};

/// Drops taxa whose counts are zero in every sample.
inline CountTable filter_taxa(const CountTable& table, std::vector<SkippedTaxon>* skipped = nullptr) {
  CountTable out;
  out.sample_ids = table.sample_ids;
  out.depths = table.depths;
  for (std::size_t t = 0; t < table.n_taxa(); ++t) {
    const auto& row = table.counts[t];
    if (std::ranges::all_of(row, [](std::int64_t c) { return c == 0; })) {
      if (skipped) skipped->push_back({table.taxa[t], "all counts zero"});
      continue;
    }
    out.taxa.push_back(table.taxa[t]);
    out.counts.push_back(row);
  }
  return out;
}

/// Constraint setting every mean-model slope to zero.
inline ConstraintSpec abundance_constraint(const DesignPair& design) {
  const Theta shape = Theta::zeros(design.k(), design.kstar());
  std::vector<int> coords;
  for (int j = 0; j < design.k(); ++j) coords.push_back(shape.index_beta(j));
  return ConstraintSpec::select(design.dim(), coords);
}

/// Constraint setting every overdispersion slope to zero.
inline ConstraintSpec variability_constraint(const DesignPair& design) {
  const Theta shape = Theta::zeros(design.k(), design.kstar());
  std::vector<int> coords;
  for (int j = 0; j < design.kstar(); ++j) coords.push_back(shape.index_betastar(j));
  return ConstraintSpec::select(design.dim(), coords);
}

struct TaxonResult {
  std::string taxon;
  /// Absent when the corresponding submodel has no covariates.
  std::optional<TestResult> da;
  std::optional<TestResult> dv;
  double q_da = 1.0;
  double q_dv = 1.0;
  bool converged = false;
  bool boundary = false;
  double loglik = 0.0;
  Theta theta_hat;
};

/// Runs the DA and DV tests for one taxon with a shared unrestricted fit.
/// The DA test uses rng.substream(0), the DV test rng.substream(1).
inline TaxonResult test_taxon(const std::vector<std::int64_t>& counts, const std::vector<std::int64_t>& depths,
                              const DesignPair& design, TestMethod method, const TestOptions& options,
                              const RngStream& rng) {
  const Dataset data(counts, depths);
  TaxonResult res;
  const FitResult full = fit(data, design, options.trust);
  res.converged = full.converged;
  res.boundary = full.boundary_flag;
  res.loglik = full.loglik;
  res.theta_hat = full.theta_hat;
  if (design.k() > 0) {
    res.da = run_test(method, data, design, abundance_constraint(design), options, rng.substream(0), &full);
  }
  if (design.kstar() > 0) {
    res.dv = run_test(method, data, design, variability_constraint(design), options, rng.substream(1), &full);
  }
  return res;
}

/// Benjamini-Hochberg step-up adjustment:
/// q_(i) = min_{j >= i} min(1, m p_(j) / j), returned in input order.
inline std::vector<double> bh_adjust(const std::vector<double>& p) {
  const std::size_t m = p.size();
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("bh_adjust: p-values must lie in [0, 1]");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> q(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    // m p / j >= p exactly, but the division may round one ulp below p
    const double pj = p[order[r]];
    const double adj = std::min(1.0, std::max(pj, static_cast<double>(m) * pj / static_cast<double>(r + 1)));
    running = std::min(running, adj);
    q[order[r]] = running;
  }
  return q;
}

struct FdrPoint {
  double threshold = 0.0;
  std::size_t discoveries = 0;
};

/// Number of taxa with q <= t at each distinct q value t.
inline std::vector<FdrPoint> fdr_curve(std::vector<double> q) {
  std::ranges::sort(q);
  std::vector<FdrPoint> curve;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (i + 1 < q.size() && q[i + 1] == q[i]) continue;
    curve.push_back({q[i], i + 1});
  }
  return curve;
}

struct BatchResult {
  std::vector<TaxonResult> records;
  std::vector<SkippedTaxon> skipped;
};

/// Filters all-zero taxa, tests the rest, and BH-adjusts each family of
/// p-values. Taxon t (index in the unfiltered table) draws from stream
/// (seed, t). Taxa whose fit fails are reported in `skipped`.
inline BatchResult run_batch(const CountTable& table, const DesignPair& design, TestMethod method,
                             const TestOptions& options, std::uint64_t seed) {
  table.validate();
  if (design.rows() != table.n_samples()) throw std::invalid_argument("run_batch: design rows != samples");
  BatchResult out;
  std::vector<std::size_t> kept;
  for (std::size_t t = 0; t < table.n_taxa(); ++t) {
    if (std::ranges::any_of(table.counts[t], [](std::int64_t c) { return c != 0; })) {
      kept.push_back(t);
    } else {
      out.skipped.push_back({table.taxa[t], "all counts zero"});
    }
  }

  std::vector<std::optional<TaxonResult>> results(kept.size());
  std::vector<std::string> errors(kept.size());
  parallel_for(kept.size(), options.threads, [&](std::size_t i) {
    const std::size_t t = kept[i];
    try {
      results[i] = test_taxon(table.counts[t], table.depths, design, method, options, RngStream(seed, t));
      results[i]->taxon = table.taxa[t];
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (results[i]) {
      out.records.push_back(std::move(*results[i]));
    } else {
      out.skipped.push_back({table.taxa[kept[i]], "fit failed: " + errors[i]});
    }
  }

  std::vector<double> p_da;
  std::vector<double> p_dv;
  for (const auto& r : out.records) {
    if (r.da) p_da.push_back(r.da->p_value);
    if (r.dv) p_dv.push_back(r.dv->p_value);
  }
  const auto q_da = bh_adjust(p_da);
  const auto q_dv = bh_adjust(p_dv);
  std::size_t ia = 0;
  std::size_t iv = 0;
  for (auto& r : out.records) {
    if (r.da) r.q_da = q_da[ia++];
    if (r.dv) r.q_dv = q_dv[iv++];
  }
  return out;
}

}  // namespace bbreg
