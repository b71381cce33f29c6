#include "fmpnet/positioning.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fmpnet/errors.hpp"
#include "fmpnet/layers.hpp"
#include "fmpnet/parallel.hpp"

namespace fmpnet {
namespace {

std::vector<Tensor<float>> preprocess_all(const Dataset& d, const DownsampleSpec& spec, const StftConfig& stft_cfg,
                                          const RowIndexFile* idx) {
  std::vector<Tensor<float>> out(d.frames.size());
  parallel_for(out.size(), [&](std::size_t i) { out[i] = to_tensor<float>(preprocess(d.frames[i], spec, stft_cfg, idx)); });
  return out;
}

struct PhaseInputs {
  const std::vector<Tensor<float>>& features;
  const std::vector<int>& labels;
};

// Runs one full training schedule. `attention` non-null selects joint AMD training.
void run_phase(int phase, PnetLite<float>& model, AdamWState<float>& opt, SpatialAttention<float>* attention,
               int factor, const PhaseInputs& in, const TrainConfig& cfg, std::vector<EpochLog>& log) {
  std::vector<Tensor<float>*> params = model.parameter_tensors();
  std::vector<Tensor<float>*> att_params;
  if (attention) att_params = attention->parameter_tensors();
  for (auto* p : params) p->zero_grad();
  for (auto* p : att_params) p->zero_grad();

  opt = AdamWState<float>{};
  opt.config.weight_decay = cfg.weight_decay;
  AdamWState<float> att_opt;
  att_opt.config.weight_decay = cfg.weight_decay;
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x5AFF1EULL, static_cast<std::uint64_t>(phase)));
  std::vector<std::size_t> order(in.features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.config.lr = cfg.lr * std::pow(0.5, epoch / cfg.halve_every);
    att_opt.config.lr = opt.config.lr * cfg.attention_lr_scale;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    int step = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const float scale = 1.0f / static_cast<float>(end - start);
      for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
      for (auto* p : att_params) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        PnetLite<float>::SampleResult r;
        if (attention) {
          const auto fwd = amd_forward(in.features[i], *attention, factor);
          Tensor<float> dx;
          r = model.accumulate_gradients(fwd.input, in.labels[i], scale, &dx);
          amd_backward(*attention, in.features[i], fwd, dx);
        } else {
          r = model.accumulate_gradients(in.features[i], in.labels[i], scale);
        }
        if (!std::isfinite(r.loss))
          throw TrainingError("non-finite loss in phase " + std::to_string(phase) + ", epoch " +
                              std::to_string(epoch + 1) + ", step " + std::to_string(step));
        loss_sum += r.loss;
        correct += r.predicted == in.labels[i];
      }
      try {
        adamw_step<float>(params, opt);
        if (attention) adamw_step<float>(att_params, att_opt);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " (phase " + std::to_string(phase) + ", epoch " +
                            std::to_string(epoch + 1) + ", step " + std::to_string(step) + ")");
      }
    }
    EpochLog entry{phase, epoch + 1, opt.config.lr, loss_sum / order.size(),
                   static_cast<double>(correct) / order.size()};
    log.push_back(entry);
    if (cfg.on_epoch) cfg.on_epoch(entry);
  }
}

void check_compatible(const Dataset& a, const Dataset& b) {
  if (a.frame_length != b.frame_length || a.grid.num_classes() != b.grid.num_classes())
    throw ArgumentError("train and validation sets disagree on frame length or class count");
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ArgumentError("batch size must be >= 1");
  if (!(cfg.lr >= 0.0)) throw ArgumentError("learning rate must be >= 0");
  if (cfg.halve_every < 1) throw ArgumentError("halve-every must be >= 1");
  if (!(cfg.attention_lr_scale >= 0.0)) throw ArgumentError("attention lr scale must be >= 0");
  if (!(cfg.weight_decay >= 0.0)) throw ArgumentError("weight decay must be >= 0");
  validate(cfg.stft);
}

TrainResult train_pipeline(const Dataset& train, const Dataset& val, const DownsampleSpec& spec,
                           const TrainConfig& cfg) {
  validate(cfg);
  validate(spec);
  if (train.frames.empty()) throw ArgumentError("training set is empty");
  check_compatible(train, val);
  const int classes = train.grid.num_classes();

  std::vector<int> labels(train.frames.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = train.frames[i].label;

  TrainResult result;
  result.input_shape = model_input_shape(spec, train.frame_length, cfg.stft);

  if (spec.method != Method::amd) {
    const auto features = preprocess_all(train, spec, cfg.stft, nullptr);
    result.model = PnetLite<float>(classes, mix_seed(cfg.seed, 0x1417ULL, 2));
    result.model.check_input(features.front().shape);
    run_phase(2, result.model, result.optimizer, nullptr, spec.factor, {features, labels}, cfg, result.log);
    return result;
  }

  // phase 1: attention selects rows per sample, trained jointly with a throwaway network
  auto features = preprocess_all(train, spec, cfg.stft, nullptr);
  auto attention = SpatialAttention<float>::initialized(mix_seed(cfg.seed, 0xA77EULL));
  {
    PnetLite<float> joint(classes, mix_seed(cfg.seed, 0x1417ULL, 1));
    AdamWState<float> joint_opt;
    run_phase(1, joint, joint_opt, &attention, spec.factor, {features, labels}, cfg, result.log);
  }

  if (val.frames.empty()) throw ArgumentError("track_discards: empty validation set");
  std::vector<std::vector<int>> kept(val.frames.size());
  parallel_for(kept.size(), [&](std::size_t i) {
    const auto x = to_tensor<float>(preprocess(val.frames[i], spec, cfg.stft, nullptr));
    kept[i] = attention_kept_rows(x, attention, spec.factor);
  });
  const auto index = select_rows_by_discards(kept, cfg.stft.fft_size, spec.factor);

  // phase 2: attention-free retraining on the replayed rows
  for (auto& f : features) f = gather_rows(f, index.kept_rows);
  result.model = PnetLite<float>(classes, mix_seed(cfg.seed, 0x1417ULL, 2));
  run_phase(2, result.model, result.optimizer, nullptr, spec.factor, {features, labels}, cfg, result.log);
  result.row_index = index;
  result.attention = attention;
  return result;
}

Posterior predict_posterior(const PnetLite<float>& model, const IqFrame& frame, const DownsampleSpec& spec,
                            const RowIndexFile* idx, const StftConfig& stft_cfg, int frame_id) {
  if (spec.method == Method::amd && idx == nullptr)
    throw InferenceError("amd inference requires a row index file");
  const auto x = to_tensor<float>(preprocess(frame, spec, stft_cfg, idx));
  model.check_input(x.shape);
  const auto logits = model.forward(x);
  std::vector<double> wide(logits.begin(), logits.end());
  return {softmax(std::span<const double>(wide)), frame_id};
}

PositionEstimate weighted_position(const Posterior& post, const GridMap& grid, int top_k) {
  if (top_k < 1) throw ArgumentError("weighted_position: top_k must be >= 1");
  if (static_cast<int>(post.probs.size()) != grid.num_classes())
    throw ArgumentError("weighted_position: posterior length does not match grid");
  std::vector<int> order(post.probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return post.probs[a] > post.probs[b]; });
  const int k = std::min<int>(top_k, static_cast<int>(order.size()));
  double mass = 0.0;
  for (int i = 0; i < k; ++i) mass += post.probs[order[i]];
  PositionEstimate est;
  est.top_class = order.front();
  if (!(mass > 0.0)) {
    est.x = grid.at(est.top_class).x;
    est.y = grid.at(est.top_class).y;
    return est;
  }
  for (int i = 0; i < k; ++i) {
    const double w = post.probs[order[i]] / mass;
    est.x += w * grid.at(order[i]).x;
    est.y += w * grid.at(order[i]).y;
  }
  return est;
}

Posterior bayes_fuse(std::span<const Posterior> posteriors) {
  if (posteriors.empty()) throw ArgumentError("bayes_fuse: empty posterior list");
  const std::size_t c = posteriors.front().probs.size();
  std::vector<double> log_sum(c, 0.0);
  for (const auto& p : posteriors) {
    if (p.probs.size() != c) throw ArgumentError("bayes_fuse: posteriors disagree on class count");
    for (std::size_t i = 0; i < c; ++i) log_sum[i] += std::log(p.probs[i] + 1e-12);
  }
  Posterior out;
  out.frame_id = posteriors.back().frame_id;
  out.probs = softmax(std::span<const double>(log_sum));
  return out;
}

DistanceStats distance_stats(std::span<const double> errors) {
  if (errors.empty()) throw ArgumentError("distance_stats: no errors");
  const double m = static_cast<double>(errors.size());
  DistanceStats s;
  for (double e : errors) s.mde += e;
  s.mde /= m;
  double var = 0.0;
  for (double e : errors) var += (e - s.mde) * (e - s.mde);
  s.std = std::sqrt(var / m);
  return s;
}

std::vector<CdfPoint> empirical_cdf(std::span<const double> errors, int points) {
  if (errors.empty()) throw ArgumentError("empirical_cdf: no errors");
  if (points < 2) throw ArgumentError("empirical_cdf: need at least two threshold points");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  const double top = sorted.back();
  if (top <= 0.0) return {{0.0, 1.0}};
  std::vector<CdfPoint> cdf(points);
  for (int j = 0; j < points; ++j) {
    const double t = j == points - 1 ? top : top * j / (points - 1);
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    cdf[j] = {t, static_cast<double>(n) / static_cast<double>(sorted.size())};
  }
  return cdf;
}

EvalReport make_report(std::vector<SampleError> samples, int cdf_points) {
  EvalReport r;
  std::vector<double> errors;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    errors.push_back(s.error);
    correct += s.top_class == s.true_class;
  }
  const auto stats = distance_stats(errors);
  r.mde = stats.mde;
  r.std = stats.std;
  r.cdf = empirical_cdf(errors, cdf_points);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  r.samples = std::move(samples);
  return r;
}

EvalReport evaluate(const PnetLite<float>& model, const Dataset& test, const DownsampleSpec& spec,
                    const GridMap& grid, const EvalConfig& cfg) {
  if (test.frames.empty()) throw ArgumentError("evaluate: empty test set");
  if (cfg.fuse_window < 1) throw ArgumentError("evaluate: fuse window must be >= 1");
  if (grid.num_classes() != model.num_classes())
    throw InferenceError("evaluate: grid has " + std::to_string(grid.num_classes()) + " cells, model has " +
                         std::to_string(model.num_classes()) + " classes");

  std::vector<Posterior> posts(test.frames.size());
  parallel_for(posts.size(), [&](std::size_t i) {
    posts[i] = predict_posterior(model, test.frames[i], spec, cfg.row_index, cfg.stft, static_cast<int>(i));
  });

  std::map<int, std::vector<std::size_t>> history;
  std::vector<SampleError> samples;
  samples.reserve(posts.size());
  for (std::size_t i = 0; i < posts.size(); ++i) {
    const int label = test.frames[i].label;
    auto& seen = history[label];
    seen.push_back(i);
    Posterior post = posts[i];
    if (cfg.fuse_window > 1) {
      std::vector<Posterior> window;
      const std::size_t from = seen.size() > static_cast<std::size_t>(cfg.fuse_window) ? seen.size() - cfg.fuse_window : 0;
      for (std::size_t j = from; j < seen.size(); ++j) window.push_back(posts[seen[j]]);
      post = bayes_fuse(window);
    }
    const auto est = weighted_position(post, grid, cfg.top_k);
    const auto& truth = grid.at(label);
    SampleError s;
    s.frame_id = static_cast<int>(i);
    s.true_class = label;
    s.top_class = est.top_class;
    s.true_x = truth.x;
    s.true_y = truth.y;
    s.est_x = est.x;
    s.est_y = est.y;
    s.error = std::hypot(est.x - truth.x, est.y - truth.y);
    samples.push_back(s);
  }
  return make_report(std::move(samples), cfg.cdf_points);
}

std::string samples_csv(const EvalReport& r) {
  std::ostringstream ss;
  ss << std::setprecision(17);
  ss << "frame_id,true_x,true_y,est_x,est_y,error\n";
  for (const auto& s : r.samples)
    ss << s.frame_id << ',' << s.true_x << ',' << s.true_y << ',' << s.est_x << ',' << s.est_y << ',' << s.error
       << '\n';
  return ss.str();
}

std::string summary_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mde"] = r.mde;
  j["std"] = r.std;
  j["accuracy"] = r.accuracy;
  j["samples"] = r.samples.size();
  auto cdf = nlohmann::ordered_json::array();
  for (const auto& p : r.cdf) cdf.push_back({{"t", p.threshold}, {"p", p.probability}});
  j["cdf"] = cdf;
  return j.dump(2);
}

std::string cdf_csv(const EvalReport& r) {
  std::ostringstream ss;
  ss << std::setprecision(17) << "threshold,probability\n";
  for (const auto& p : r.cdf) ss << p.threshold << ',' << p.probability << '\n';
  return ss.str();
}

}  // namespace fmpnet
