#include "mmtta/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "mmtta/errors.hpp"

namespace mmtta {
namespace {

constexpr std::uint64_t kCleanStream = 0x436c65616e;    // "Clean"
constexpr std::uint64_t kCorruptStream = 0x436f7272;    // "Corr"
constexpr std::uint64_t kClassStream = 0x436c617373;    // "Class"

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Vector normal_vector(std::mt19937_64& rng, Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

void check_gaussian(const Vector& mean, const Matrix& cov, Index dim, const std::string& field) {
  if (mean.size() != dim) throw ValidationError(field + ".mean", "wrong length");
  if (cov.rows() != dim || cov.cols() != dim) throw ValidationError(field + ".cov", "wrong shape");
  if (!mean.allFinite() || !cov.allFinite()) throw ValidationError(field, "non-finite entry");
  if (!cov.isApprox(cov.transpose(), 1e-12)) throw ValidationError(field + ".cov", "not symmetric");
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw ValidationError(field + ".cov", "degenerate covariance (not positive definite)");
  }
}

bool corrupts(CorruptionTarget target, Perspective modality) {
  switch (target) {
    case CorruptionTarget::None:
      return false;
    case CorruptionTarget::Both:
      return true;
    case CorruptionTarget::M1:
      return modality == Perspective::M1;
    case CorruptionTarget::M2:
      return modality == Perspective::M2;
  }
  return false;
}

void apply_corruption(const Corruption& c, Vector& x, std::mt19937_64& rng) {
  switch (c.kind) {
    case CorruptionKind::AdditiveGaussian:
      x += c.severity * normal_vector(rng, x.size());
      break;
    case CorruptionKind::MeanShift:
      x.array() += c.severity / std::sqrt(static_cast<double>(x.size()));
      break;
    case CorruptionKind::Scale:
      x *= 1.0 + c.severity;
      break;
  }
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  return splitmix64(splitmix64(splitmix64(seed) ^ index) ^ stream);
}

void ScenarioSpec::validate() const {
  if (num_classes < 1) throw ValidationError("num_classes", "must be >= 1");
  if (raw_dim_m1 < 1) throw ValidationError("raw_dim_m1", "must be >= 1");
  if (raw_dim_m2 < 1) throw ValidationError("raw_dim_m2", "must be >= 1");
  if (!class_prior.empty()) {
    if (static_cast<int>(class_prior.size()) != num_classes) {
      throw ValidationError("class_prior", "length must equal num_classes");
    }
    double sum = 0.0;
    for (double p : class_prior) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("class_prior", "negative entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("class_prior", "must sum to 1");
  }
  if (static_cast<int>(classes.size()) != num_classes) {
    throw ValidationError("classes", "need one entry per class");
  }
  for (int c = 0; c < num_classes; ++c) {
    const std::string base = "classes[" + std::to_string(c) + "]";
    check_gaussian(classes[c].mean_m1, classes[c].cov_m1, raw_dim_m1, base + ".m1");
    check_gaussian(classes[c].mean_m2, classes[c].cov_m2, raw_dim_m2, base + ".m2");
  }
  if (!(corruption.severity >= 0.0) || !std::isfinite(corruption.severity)) {
    throw ValidationError("corruption.severity", "must be a finite value >= 0");
  }
}

ScenarioGenerator::ScenarioGenerator(ScenarioSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  double acc = 0.0;
  for (int c = 0; c < spec_.num_classes; ++c) {
    acc += spec_.class_prior.empty() ? 1.0 / spec_.num_classes : spec_.class_prior[c];
    cumulative_prior_.push_back(acc);
  }
  cumulative_prior_.back() = 1.0;
  for (const auto& k : spec_.classes) {
    chol_m1_.push_back(Eigen::LLT<Matrix>(k.cov_m1).matrixL());
    chol_m2_.push_back(Eigen::LLT<Matrix>(k.cov_m2).matrixL());
  }
}

Sample ScenarioGenerator::sample(std::uint64_t index) const {
  std::mt19937_64 clean(mix_seed(spec_.seed, index, kCleanStream));
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(clean);
  const int label = static_cast<int>(
      std::upper_bound(cumulative_prior_.begin(), cumulative_prior_.end(), u) -
      cumulative_prior_.begin());

  Sample s;
  s.label = std::min(label, spec_.num_classes - 1);
  const ClassConditional& k = spec_.classes[s.label];
  s.x_m1 = k.mean_m1 + chol_m1_[s.label] * normal_vector(clean, spec_.raw_dim_m1);
  s.x_m2 = k.mean_m2 + chol_m2_[s.label] * normal_vector(clean, spec_.raw_dim_m2);

  const Corruption& c = spec_.corruption;
  if (c.severity != 0.0 && c.target != CorruptionTarget::None) {
    // one noise stream per modality
    std::mt19937_64 noise_m1(mix_seed(spec_.seed, index, kCorruptStream));
    std::mt19937_64 noise_m2(mix_seed(spec_.seed, index, kCorruptStream + 1));
    if (corrupts(c.target, Perspective::M1)) apply_corruption(c, s.x_m1, noise_m1);
    if (corrupts(c.target, Perspective::M2)) apply_corruption(c, s.x_m2, noise_m2);
  }
  return s;
}

std::vector<Sample> ScenarioGenerator::generate_all() const {
  const auto n = static_cast<std::int64_t>(spec_.samples);
  std::vector<Sample> out(spec_.samples);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[i] = sample(static_cast<std::uint64_t>(i));
  return out;
}

std::vector<Sample> generate(const ScenarioSpec& spec) { return ScenarioGenerator(spec).generate_all(); }

std::vector<ClassConditional> random_classes(const RandomScenarioOptions& o) {
  if (o.num_classes < 1 || o.raw_dim < 1) throw ValidationError("random", "empty scenario shape");
  std::mt19937_64 rng(mix_seed(o.class_seed, 0, kClassStream));
  const Index d = o.raw_dim;
  const double dd = static_cast<double>(d);

  auto random_cov = [&] {
    const Matrix r = Eigen::Map<const Matrix>(normal_vector(rng, d * d).data(), d, d);
    const Matrix spread = r * r.transpose() / dd;
    Matrix cov = o.within_scale * o.within_scale *
                 (0.3 * Matrix::Identity(d, d) + 0.7 * spread);
    return Matrix(0.5 * (cov + cov.transpose()));
  };

  std::vector<ClassConditional> out(o.num_classes);
  for (auto& k : out) {
    k.mean_m1 = o.separation * normal_vector(rng, d) / std::sqrt(dd);
    k.mean_m2 = o.shared_means ? k.mean_m1 : Vector(o.separation * normal_vector(rng, d) / std::sqrt(dd));
    k.cov_m1 = random_cov();
    k.cov_m2 = random_cov();
  }
  return out;
}

ScenarioSpec make_random_scenario(const RandomScenarioOptions& options, std::uint64_t samples,
                                  std::uint64_t seed, Corruption corruption) {
  ScenarioSpec spec;
  spec.num_classes = options.num_classes;
  spec.raw_dim_m1 = options.raw_dim;
  spec.raw_dim_m2 = options.raw_dim;
  spec.classes = random_classes(options);
  spec.samples = samples;
  spec.seed = seed;
  spec.corruption = corruption;
  spec.validate();
  return spec;
}

}  // namespace mmtta
