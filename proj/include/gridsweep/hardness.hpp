#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace gridsweep {

// A task's hardness: a tuple of integer parameter magnitudes correlated with
// runtime. Hardnesses are ordered by componentwise dominance; all hardnesses
// within one experiment have the same length.
class Hardness {
 public:
  Hardness() = default;
  explicit Hardness(std::vector<int64_t> components)
      : components_(std::move(components)) {}

  const std::vector<int64_t>& components() const { return components_; }
  std::size_t size() const { return components_.size(); }
  bool empty() const { return components_.empty(); }

  bool operator==(const Hardness& other) const = default;
  // Lexicographic order; used only as a deterministic tie-break, not as the
  // dominance relation.
  bool operator<(const Hardness& other) const {
    return components_ < other.components_;
  }

  std::string to_string() const;

 private:
  std::vector<int64_t> components_;
};

// Serialized as a bare integer array.
inline void to_json(nlohmann::json& j, const Hardness& h) {
  j = h.components();
}
inline void from_json(const nlohmann::json& j, Hardness& h) {
  h = Hardness(j.get<std::vector<int64_t>>());
}

// True iff every component of a >= the corresponding component of b, i.e.
// a is as hard or harder than b. Throws std::invalid_argument on length
// mismatch.
bool dominates(const Hardness& a, const Hardness& b);

// The set of minimal timed-out hardnesses, kept reduced: no stored element
// dominates another. Sufficient to decide pruning for any hardness.
class MinAntichain {
 public:
  MinAntichain() = default;

  // Inserts h, keeping only minimal elements: h is stored iff it dominates no
  // current element; storing h removes every current element that dominates
  // it. Returns true if h was stored. Idempotent.
  bool insert(const Hardness& h);

  // True iff some stored element is dominated by h (h would be pruned).
  bool prunes(const Hardness& h) const;

  const std::vector<Hardness>& elements() const { return elements_; }
  std::size_t size() const { return elements_.size(); }
  bool empty() const { return elements_.empty(); }

  bool operator==(const MinAntichain& other) const;

 private:
  std::vector<Hardness> elements_;
};

}  // namespace gridsweep
