#include "gridsweep/hardness.hpp"

#include <algorithm>
#include <stdexcept>

namespace gridsweep {

std::string Hardness::to_string() const {
  std::string out = "(";
  for (std::size_t i = 0; i < components_.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(components_[i]);
  }
  out += ")";
  return out;
}

bool dominates(const Hardness& a, const Hardness& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("hardness length mismatch: " + a.to_string() +
                                " vs " + b.to_string());
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.components()[i] < b.components()[i]) return false;
  }
  return true;
}

bool MinAntichain::insert(const Hardness& h) {
  for (const Hardness& e : elements_) {
    if (dominates(h, e)) return false;  // h is not minimal (or already present)
  }
  std::erase_if(elements_, [&](const Hardness& e) { return dominates(e, h); });
  elements_.push_back(h);
  return true;
}

bool MinAntichain::prunes(const Hardness& h) const {
  return std::any_of(elements_.begin(), elements_.end(),
                     [&](const Hardness& e) { return dominates(h, e); });
}

bool MinAntichain::operator==(const MinAntichain& other) const {
  if (elements_.size() != other.elements_.size()) return false;
  for (const Hardness& e : elements_) {
    if (std::find(other.elements_.begin(), other.elements_.end(), e) ==
        other.elements_.end()) {
      return false;
    }
  }
  return true;
}

}  // namespace gridsweep
