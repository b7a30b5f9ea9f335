#pragma once

#include <cstddef>
#include <vector>

#include "metaepi/diffcore.hpp"

namespace metaepi {

// Labeled embeddings fed to an objective. `labels` hold global class ids;
// `classes` restricts scoring to a task's classes, mapping task-local index to
// global id. An empty `classes` scores against every prototype.
struct Batch {
  Matrix embeddings;  // n x D
  std::vector<int> labels;
  std::vector<int> classes;

  std::size_t size() const noexcept { return labels.size(); }
  // Number of score columns given `total_classes` prototypes.
  std::size_t width(std::size_t total_classes) const {
    return classes.empty() ? total_classes : classes.size();
  }
  // Label of row i as a score column index. Throws DimensionError if the label
  // is not among `classes`.
  int local_label(std::size_t i) const;
  std::vector<int> local_labels() const;
};

}  // namespace metaepi
