#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmpnet/adamw.hpp"
#include "fmpnet/downsampler.hpp"
#include "fmpnet/pnet_lite.hpp"
#include "fmpnet/rf_synth.hpp"
#include "fmpnet/tf_engine.hpp"

namespace fmpnet {

struct EpochLog {
  int phase = 0;  // 1 = joint attention training (AMD only), 2 = final network
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainConfig {
  int epochs = 15;
  int batch_size = 8;
  double lr = 1e-3;
  int halve_every = 2;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  /// AMD phase 1 steps the attention conv with its own AdamW state at lr * attention_lr_scale.
  double attention_lr_scale = 0.1;
  StftConfig stft;
  std::function<void(const EpochLog&)> on_epoch;
};

void validate(const TrainConfig& cfg);

struct TrainResult {
  PnetLite<float> model;
  AdamWState<float> optimizer;
  std::optional<RowIndexFile> row_index;
  std::optional<SpatialAttention<float>> attention;
  std::vector<int> input_shape;
  std::vector<EpochLog> log;
};

/// Non-AMD: preprocess and train once. AMD: joint attention training, discard
/// tracking on `val`, then a fresh network trained on the replayed row index.
TrainResult train_pipeline(const Dataset& train, const Dataset& val, const DownsampleSpec& spec,
                           const TrainConfig& cfg);

struct Posterior {
  std::vector<double> probs;
  int frame_id = 0;
};

Posterior predict_posterior(const PnetLite<float>& model, const IqFrame& frame, const DownsampleSpec& spec,
                            const RowIndexFile* idx = nullptr, const StftConfig& stft_cfg = {},
                            int frame_id = 0);

struct PositionEstimate {
  double x = 0.0;
  double y = 0.0;
  int top_class = 0;
};

/// Probability-weighted centroid of the top_k most likely cells (renormalized).
PositionEstimate weighted_position(const Posterior& post, const GridMap& grid, int top_k = 3);

/// Product of posteriors under a uniform prior, computed in the log domain.
Posterior bayes_fuse(std::span<const Posterior> posteriors);

struct SampleError {
  int frame_id = 0;
  int true_class = 0;
  int top_class = 0;
  double true_x = 0.0;
  double true_y = 0.0;
  double est_x = 0.0;
  double est_y = 0.0;
  double error = 0.0;
};

struct CdfPoint {
  double threshold = 0.0;
  double probability = 0.0;
};

struct EvalReport {
  double mde = 0.0;
  double std = 0.0;
  double accuracy = 0.0;
  std::vector<CdfPoint> cdf;
  std::vector<SampleError> samples;
};

/// Mean distance error and its population standard deviation.
struct DistanceStats {
  double mde = 0.0;
  double std = 0.0;
};
DistanceStats distance_stats(std::span<const double> errors);

/// P(error <= t) on `points` thresholds spaced uniformly over [0, max error].
std::vector<CdfPoint> empirical_cdf(std::span<const double> errors, int points = 101);

EvalReport make_report(std::vector<SampleError> samples, int cdf_points = 101);

struct EvalConfig {
  int top_k = 3;
  int fuse_window = 1;
  int cdf_points = 101;
  const RowIndexFile* row_index = nullptr;
  StftConfig stft;
};

/// With fuse_window > 1 each frame's posterior is fused with up to
/// fuse_window - 1 preceding frames recorded at the same location.
EvalReport evaluate(const PnetLite<float>& model, const Dataset& test, const DownsampleSpec& spec,
                    const GridMap& grid, const EvalConfig& cfg = {});

std::string samples_csv(const EvalReport& r);
std::string summary_json(const EvalReport& r);
std::string cdf_csv(const EvalReport& r);

}  // namespace fmpnet
