#include "ssat/selection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ssat/error.hpp"
#include "ssat/parallel.hpp"
#include "ssat/rng.hpp"

namespace ssat {

SelectionMethod parse_selection_method(const std::string& name) {
  if (name == "random") return SelectionMethod::kRandom;
  if (name == "pcs") return SelectionMethod::kPcs;
  if (name == "lcs-km") return SelectionMethod::kLcsKm;
  if (name == "lcs-gmm") return SelectionMethod::kLcsGmm;
  throw Error("unknown selection method '" + name +
              "' (expected random, pcs, lcs-km, or lcs-gmm)");
}

const char* selection_method_name(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::kRandom: return "random";
    case SelectionMethod::kPcs: return "pcs";
    case SelectionMethod::kLcsKm: return "lcs-km";
    case SelectionMethod::kLcsGmm: return "lcs-gmm";
  }
  return "?";
}

void SelectionConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ConfigError("selection alpha must be in (0, 1]");
  }
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw ConfigError("selection beta must be in [0, 1]");
  }
  const bool clustering =
      method == SelectionMethod::kLcsKm || method == SelectionMethod::kLcsGmm;
  if (clustering && k == 1) {
    throw ConfigError("clustering-based selection needs k >= 2");
  }
}

ScoredPool compute_scores(const Dataset& pool, const MlpParams& intermediate,
                          SelectionMethod method, std::size_t k,
                          std::uint64_t seed) {
  if (pool.size() == 0) throw Error("compute_scores: empty pool");
  const std::size_t n = pool.size();
  ScoredPool out;
  out.method = method;
  out.points.resize(n);

  // Pseudo-labels and latent embeddings in one batched forward pass.
  const ClassifierOutput fwd = classifier_forward(intermediate,
                                                  pool.features());
  for (std::size_t i = 0; i < n; ++i) {
    out.points[i].index = i;
    out.points[i].pseudo_label =
        static_cast<int>(argmax_row(fwd.logits, i));
  }

  switch (method) {
    case SelectionMethod::kRandom: {
      Rng rng(seed);
      for (std::size_t i = 0; i < n; ++i) {
        out.points[i].score = rng.uniform01();
      }
      break;
    }
    case SelectionMethod::kPcs: {
      parallel_for(n, [&](std::size_t i) {
        out.points[i].score = confidence(fwd.logits.extract_row(i));
      });
      break;
    }
    case SelectionMethod::kLcsKm: {
      out.kmeans = kmeans_fit(fwd.latent, k, seed);
      parallel_for(n, [&](std::size_t i) {
        out.points[i].score =
            kmeans_boundary_score(fwd.latent.extract_row(i), *out.kmeans);
      });
      break;
    }
    case SelectionMethod::kLcsGmm: {
      out.gmm = gmm_fit(fwd.latent, k, seed);
      parallel_for(n, [&](std::size_t i) {
        out.points[i].score =
            gmm_boundary_score(fwd.latent.extract_row(i), *out.gmm).delta;
      });
      break;
    }
  }
  return out;
}

Selection select_subset(ScoredPool& pool, double alpha, double beta,
                        std::uint64_t seed) {
  const std::size_t n_pool = pool.points.size();
  const std::size_t total =
      static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n_pool)));
  if (total == 0) throw Error("select_subset: empty selection");
  const std::size_t n_boundary =
      static_cast<std::size_t>(std::floor(beta * static_cast<double>(total)));

  for (ScoredPoint& p : pool.points) {
    p.selected = false;
    p.reason = SelectReason::kNone;
  }

  // Lowest scores first; stable on ties via the pool index.
  std::vector<std::size_t> order(n_pool);
  for (std::size_t i = 0; i < n_pool; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = pool.points[a].score;
    const double sb = pool.points[b].score;
    if (sa != sb) return sa < sb;
    return pool.points[a].index < pool.points[b].index;
  });

  Selection sel;
  sel.indices.reserve(total);
  sel.pseudo_labels.reserve(total);
  for (std::size_t i = 0; i < n_boundary; ++i) {
    ScoredPoint& p = pool.points[order[i]];
    p.selected = true;
    p.reason = SelectReason::kBoundary;
    sel.indices.push_back(p.index);
    sel.pseudo_labels.push_back(p.pseudo_label);
  }
  sel.boundary_count = n_boundary;

  // Uniform fill without replacement from the complement.
  std::vector<std::size_t> complement(order.begin() + n_boundary, order.end());
  Rng rng(seed);
  const std::size_t n_fill = total - n_boundary;
  for (std::size_t i = 0; i < n_fill; ++i) {
    const std::size_t j = i + rng.below(complement.size() - i);
    std::swap(complement[i], complement[j]);
    ScoredPoint& p = pool.points[complement[i]];
    p.selected = true;
    p.reason = SelectReason::kRandomFill;
    sel.indices.push_back(p.index);
    sel.pseudo_labels.push_back(p.pseudo_label);
  }
  return sel;
}

void write_manifest_csv(const ScoredPool& pool, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("write_manifest_csv: cannot open '" + path + "'");
  f.precision(17);
  f << "index,pseudo_label,score,method,reason\n";
  for (const ScoredPoint& p : pool.points) {
    const char* reason = p.reason == SelectReason::kBoundary ? "boundary"
                         : p.reason == SelectReason::kRandomFill
                             ? "random-fill"
                             : "none";
    f << p.index << ',' << p.pseudo_label << ',' << p.score << ','
      << selection_method_name(pool.method) << ',' << reason << '\n';
  }
  if (!f) throw Error("write_manifest_csv: write failed for '" + path + "'");
}

}  // namespace ssat
