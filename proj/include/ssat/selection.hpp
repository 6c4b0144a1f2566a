#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssat/clustering.hpp"
#include "ssat/data.hpp"
#include "ssat/mlp.hpp"

namespace ssat {

enum class SelectionMethod { kRandom, kPcs, kLcsKm, kLcsGmm };

SelectionMethod parse_selection_method(const std::string& name);
const char* selection_method_name(SelectionMethod m);

struct SelectionConfig {
  SelectionMethod method = SelectionMethod::kLcsKm;
  double alpha = 0.1;  // selected fraction of the pool, in (0, 1]
  double beta = 0.6;   // boundary fraction of the selection, in [0, 1]
  std::size_t k = 0;   // cluster count; 0 means "use the class count"
  std::uint64_t seed = 0;

  void validate() const;
};

enum class SelectReason { kNone, kBoundary, kRandomFill };

struct ScoredPoint {
  std::size_t index = 0;  // position in the unlabeled pool
  int pseudo_label = 0;
  double score = 0.0;  // ascending = more boundary-adjacent
  bool selected = false;
  SelectReason reason = SelectReason::kNone;
};

struct ScoredPool {
  SelectionMethod method = SelectionMethod::kRandom;
  std::vector<ScoredPoint> points;
  std::optional<KMeansModel> kmeans;  // set for lcs-km
  std::optional<GmmModel> gmm;        // set for lcs-gmm
};

// Scores every pool point under the intermediate model: pcs uses prediction
// confidence, lcs-km the centroid-distance gap over pool latents, lcs-gmm
// the posterior gap, random a seeded uniform draw. Pseudo-labels are
// recorded for every point.
ScoredPool compute_scores(const Dataset& pool, const MlpParams& intermediate,
                          SelectionMethod method, std::size_t k,
                          std::uint64_t seed);

struct Selection {
  std::vector<std::size_t> indices;  // into the pool, boundary picks first
  std::vector<int> pseudo_labels;    // aligned with indices
  std::size_t boundary_count = 0;
};

// Keeps floor(alpha * n) points: the floor(beta * total) lowest scores
// (ties by index), then a seeded uniform fill from the complement.
Selection select_subset(ScoredPool& pool, double alpha, double beta,
                        std::uint64_t seed);

void write_manifest_csv(const ScoredPool& pool, const std::string& path);

}  // namespace ssat
