#pragma once

#include <cstdint>
#include <vector>

#include "mmtta/types.hpp"

namespace mmtta {

enum class CorruptionTarget { None, M1, M2, Both };
enum class CorruptionKind { AdditiveGaussian, MeanShift, Scale };

/// Shift applied to the target modality only:
///   additive-gaussian  x += severity * n,  n ~ N(0, I)
///   mean-shift         x += severity * (1,...,1)/sqrt(d)
///   scale              x *= (1 + severity)
struct Corruption {
  CorruptionTarget target = CorruptionTarget::None;
  CorruptionKind kind = CorruptionKind::AdditiveGaussian;
  double severity = 0.0;
};

struct ClassConditional {
  Vector mean_m1;
  Matrix cov_m1;
  Vector mean_m2;
  Matrix cov_m2;
};

struct ScenarioSpec {
  int num_classes = 0;
  Index raw_dim_m1 = 0;
  Index raw_dim_m2 = 0;
  std::vector<double> class_prior;  // empty means uniform
  std::vector<ClassConditional> classes;
  std::uint64_t samples = 0;
  Corruption corruption;
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

struct Sample {
  int label = 0;
  Vector x_m1;
  Vector x_m2;
};

/// Samples are a pure function of (spec, index): each index owns independent
/// random streams for the clean draw and for the corruption noise, so changing
/// the severity never perturbs the clean features or the other modality.
class ScenarioGenerator {
 public:
  explicit ScenarioGenerator(ScenarioSpec spec);

  const ScenarioSpec& spec() const { return spec_; }
  Sample sample(std::uint64_t index) const;
  /// All `spec.samples` samples, generated in parallel.
  std::vector<Sample> generate_all() const;

 private:
  ScenarioSpec spec_;
  std::vector<double> cumulative_prior_;
  std::vector<Matrix> chol_m1_;
  std::vector<Matrix> chol_m2_;
};

std::vector<Sample> generate(const ScenarioSpec& spec);

struct RandomScenarioOptions {
  int num_classes = 3;
  Index raw_dim = 8;
  double separation = 2.0;    // scale of the class-mean draw
  double within_scale = 0.5;  // typical within-class standard deviation
  bool shared_means = true;   // both modalities share class prototypes
  std::uint64_t class_seed = 1;
};

/// Fills means and distinct per-class covariances from `options.class_seed`.
std::vector<ClassConditional> random_classes(const RandomScenarioOptions& options);

ScenarioSpec make_random_scenario(const RandomScenarioOptions& options, std::uint64_t samples,
                                  std::uint64_t seed, Corruption corruption = {});

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream);

}  // namespace mmtta
