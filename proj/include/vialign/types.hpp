#pragma once

#include <stdexcept>
#include <string>

namespace vialign {

enum class Activation { Relu };

enum class TaskKind { Regression, Classification };

enum class Split { Train, Test };

// Isotropic zero-mean Gaussian prior N(0, variance * I) over all weights
// and biases.
struct Prior {
  double variance = 1.0;

  void validate() const {
    if (!(variance > 0.0)) {
      throw std::invalid_argument("prior variance must be positive");
    }
  }
};

inline std::string to_string(TaskKind t) {
  return t == TaskKind::Regression ? "regression" : "classification";
}

inline std::string to_string(Split s) {
  return s == Split::Train ? "train" : "test";
}

}  // namespace vialign
