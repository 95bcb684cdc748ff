#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "mmtta/asymmetry.hpp"
#include "mmtta/fusion_scoring.hpp"
#include "mmtta/streaming_update.hpp"
#include "mmtta/synth_data.hpp"

namespace mmtta {

/// Stand-in differentiable model. Per modality m:
///   z_m = ln_scale_m * standardize(proj_m x_m) + ln_shift_m
/// then z_F = fusion [z_m1; z_m2] and logits = head(z_F).
/// proj_m and head are frozen; ln_* and fusion adapt.
struct ToyEncoderParams {
  Matrix proj_m1;  // k x d_raw1, frozen
  Matrix proj_m2;  // k x d_raw2, frozen
  Vector ln_scale_m1;
  Vector ln_shift_m1;
  Vector ln_scale_m2;
  Vector ln_shift_m2;
  Matrix fusion;  // d x 2k
  HeadParams head;  // frozen

  Index latent_dim() const { return proj_m1.rows(); }
  Index fused_dim() const { return fusion.rows(); }
  /// Number of adaptable scalars (fusion + both LayerNorm affines).
  Index adaptable_size() const;
};

/// Gradients for the adaptable groups, shaped like ToyEncoderParams.
struct ParamGrads {
  Matrix fusion;
  Vector ln_scale_m1;
  Vector ln_shift_m1;
  Vector ln_scale_m2;
  Vector ln_shift_m2;

  static ParamGrads zeros_like(const ToyEncoderParams& p);
  ParamGrads& operator+=(const ParamGrads& other);
  bool all_finite() const;
};

/// Flattened adaptable parameters, in the order fusion (column-major),
/// ln_scale_m1, ln_shift_m1, ln_scale_m2, ln_shift_m2.
Vector pack_adaptable(const ToyEncoderParams& p);
void unpack_adaptable(const Vector& flat, ToyEncoderParams& p);
Vector pack_grads(const ParamGrads& g);

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  Vector m;
  Vector v;
};

AdamState make_adam(Index size, double lr);
/// One bias-corrected Adam step in place.
void adam_update(AdamState& state, Vector& params, const Vector& grad);

enum class ResponsibilitySource { Source, Fused };
enum class SklPosteriors { Gda, Head };

struct AdaptationConfig {
  Index batch_size = 16;
  double lambda = 1.0;
  double w_c = 0.01;
  double w_g = 1.0;
  double w_ra = 1.0;
  double w_bal = 1.0;
  double alpha = 0.9;
  double tau = 0.05;
  double eps_shrink = kDefaultShrinkage;
  double lr = 1e-4;
  ResponsibilitySource responsibility_source = ResponsibilitySource::Source;
  BalanceSign bal_sign = BalanceSign::Literal;
  SklPosteriors skl_posteriors = SklPosteriors::Gda;
  std::uint64_t seed = 0;

  // toy encoder and source pre-fit
  Index latent_dim = 8;
  double projection_jitter = 0.1;
  std::uint64_t source_samples = 2000;
  int prefit_epochs = 300;
  double prefit_lr = 0.5;

  void validate() const;
  UpdateConfig update_config() const;
};

/// Intermediate values of a forward pass needed for backpropagation.
struct ForwardCache {
  RowMatrix standardized_m1;
  RowMatrix standardized_m2;
  RowMatrix concat;  // [z_m1, z_m2], B x 2k
};

/// Features and source logits for a raw batch. GDA fields are left empty.
BatchView forward(const RowMatrix& x_m1, const RowMatrix& x_m2, const ToyEncoderParams& params,
                  ForwardCache* cache = nullptr);

using ModelSet = std::array<PerspectiveModel, 3>;

/// Fills GDA scores and posteriors for all three perspectives.
void score_views(BatchView& view, const ModelSet& models);

enum LossId { kLossRa = 0, kLossBal = 1, kLossC = 2, kLossG = 3 };

struct LossValues {
  double ra = 0.0;
  double bal = 0.0;
  double c = 0.0;
  double g = 0.0;
  double total = 0.0;
};

struct RoutedGradients {
  LossValues losses;
  ParamGrads total;
  /// Weighted contribution of each loss (indexed by LossId) to each group.
  std::array<ParamGrads, 4> by_loss;
  ReliabilityPartition partition;
};

/// Partition used for rectification: GDA posteriors by default, head
/// posteriors on the uni-modal features when configured.
ReliabilityPartition partition_for(const BatchView& view, const ToyEncoderParams& params,
                                   const AdaptationConfig& config);

/// Evaluates the four losses on a scored batch and routes their gradients:
/// L_ra, L_bal and L_g reach only the fusion map, L_c reaches only the
/// LayerNorm affine of each anchor's own modality. Throws NumericalError
/// naming the loss when a value or gradient is non-finite.
RoutedGradients routed_gradients(const BatchView& view, const ForwardCache& cache,
                                 const ReliabilityPartition& partition,
                                 const ToyEncoderParams& params, const AdaptationConfig& config);

struct AdaptationState {
  ToyEncoderParams params;
  ModelSet models;
  AdamState adam;
};

struct RawBatch {
  RowMatrix x_m1;
  RowMatrix x_m2;
  std::vector<int> labels;
};

RawBatch make_batch(const std::vector<Sample>& samples);

struct BatchMetrics {
  std::uint64_t batch = 0;
  std::uint64_t size = 0;
  LossValues losses;
  std::uint64_t correct_fused = 0;
  std::uint64_t correct_source = 0;
  std::uint64_t correct_gda = 0;
  std::uint64_t n_m1 = 0;
  std::uint64_t n_m2 = 0;

  double acc_fused() const;
  double acc_source() const;
  double acc_gda() const;
};

/// One adaptation step: forward, GDA scoring, bank updates, partition, losses,
/// routed gradients, Adam. Metrics come from the pre-update forward pass.
BatchMetrics step(const RawBatch& batch, AdaptationState& state, const AdaptationConfig& config,
                  std::uint64_t batch_index);

/// Seeded frozen projections, identity LayerNorm affines and an averaging fusion map.
ToyEncoderParams make_encoder(Index raw_dim_m1, Index raw_dim_m2, int num_classes,
                              const AdaptationConfig& config);

/// Softmax regression of the head on fused features of labeled clean data.
HeadParams prefit_head(const ToyEncoderParams& encoder, const std::vector<Sample>& data,
                       int num_classes, const AdaptationConfig& config);

/// Builds the encoder, pre-fits the head on `source` data and initializes
/// the three banks and Adam.
AdaptationState prepare_source_model(const ScenarioSpec& source, const AdaptationConfig& config);

/// Pull-based single-pass sample stream.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::optional<Sample> next() = 0;
  virtual std::uint64_t samples_read() const = 0;
};

class VectorSource : public SampleSource {
 public:
  explicit VectorSource(const std::vector<Sample>& samples) : samples_(samples) {}
  std::optional<Sample> next() override;
  std::uint64_t samples_read() const override { return pos_; }

 private:
  const std::vector<Sample>& samples_;
  std::uint64_t pos_ = 0;
};

struct RunAggregates {
  std::uint64_t batches = 0;
  std::uint64_t samples = 0;
  double acc_source = 0.0;
  double acc_gda = 0.0;
  double acc_fused = 0.0;
  LossValues mean_losses;
  std::uint64_t n_m1 = 0;
  std::uint64_t n_m2 = 0;
};

struct RunReport {
  std::vector<BatchMetrics> batches;
  RunAggregates aggregates;
  double wall_seconds = 0.0;
  AdaptationState final_state;
};

/// Consumes `source` once in batches of config.batch_size (ragged tail kept).
RunReport run_stream(SampleSource& source, AdaptationState state, const AdaptationConfig& config,
                     const std::function<void(const BatchMetrics&)>& on_batch = {});

}  // namespace mmtta
