#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssat/tensor.hpp"

namespace ssat {

enum class Split { kLabeled, kUnlabeled, kTest };

const char* split_name(Split s);

// Feature rows with optional class labels. For the unlabeled split the
// ground-truth labels (when known) stay hidden behind ablation_labels().
class Dataset {
 public:
  Dataset() = default;
  Dataset(Tensor features, std::vector<int> labels, std::size_t class_count,
          Split split);

  const Tensor& features() const { return features_; }
  std::size_t size() const { return features_.rows; }
  std::size_t dim() const { return features_.cols; }
  std::size_t class_count() const { return class_count_; }
  Split split() const { return split_; }
  bool has_labels() const { return !labels_.empty(); }

  // Labels for labeled/test splits; throws for the unlabeled split.
  const std::vector<int>& labels() const;
  int label(std::size_t i) const { return labels().at(i); }

  // Ground-truth labels of unlabeled data, for ablations only.
  const std::vector<int>& ablation_labels() const;

  Tensor row(std::size_t i) const { return features_.extract_row(i); }
  Dataset subset(const std::vector<std::size_t>& indices, Split split) const;

 private:
  Tensor features_;
  std::vector<int> labels_;
  std::size_t class_count_ = 0;
  Split split_ = Split::kLabeled;
};

enum class SyntheticKind { kGaussians, kRings, kMoons };

SyntheticKind parse_synthetic_kind(const std::string& name);
const char* synthetic_kind_name(SyntheticKind kind);

// Balanced 2-D generators, min-max scaled into the unit square.
// overlap in [0, 1] widens the class-conditional noise.
Dataset gen_synthetic(SyntheticKind kind, std::size_t n, std::size_t classes,
                      double overlap, std::uint64_t seed);

// Scales every feature column into [0, 1]; constant columns map to 0.5.
void minmax_normalize(Tensor& features);
bool in_unit_box(const Tensor& features);

// Header "f0,...,f{d-1}[,label]"; labels re-indexed densely by first
// appearance. Parse problems raise errors that carry the line number.
Dataset load_csv(const std::string& path, bool has_label);
void save_csv(const Dataset& data, const std::string& path);

struct SplitResult {
  Dataset labeled;
  Dataset unlabeled;
  Dataset test;
};

// Disjoint seeded partition; unlabeled ground truth is retained but hidden.
SplitResult split_dataset(const Dataset& data, std::size_t n_labeled,
                          std::size_t n_test, std::uint64_t seed);

}  // namespace ssat
