#pragma once
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace unem {

enum class FeatureKind { raw, simplex };

struct SplitRange {
  std::size_t begin = 0;  // first sample
  std::size_t end = 0;    // one past the last sample
  std::string tag;        // "base", "val", "test", ...

  bool operator==(const SplitRange&) const = default;
};

// Extracted feature vectors with integer labels. Samples of one split are
// contiguous.
struct FeatureBundle {
  std::size_t n_samples = 0;
  std::size_t dim = 0;
  std::size_t n_classes = 0;
  std::vector<std::string> class_names;
  std::vector<SplitRange> splits;
  FeatureKind kind = FeatureKind::raw;
  std::vector<float> features;   // n_samples x dim, row-major
  std::vector<std::uint32_t> labels;

  std::span<const float> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
  const SplitRange* find_split(const std::string& tag) const {
    for (const auto& s : splits)
      if (s.tag == tag) return &s;
    return nullptr;
  }

  bool operator==(const FeatureBundle&) const = default;
};

}  // namespace unem
