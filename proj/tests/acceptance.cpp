// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   fmpnet_acceptance [--only NAME] [--workdir DIR]

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "commands.hpp"
#include "fmpnet/adamw.hpp"
#include "fmpnet/dataset_io.hpp"
#include "fmpnet/downsampler.hpp"
#include "fmpnet/layers.hpp"
#include "fmpnet/pnet_lite.hpp"
#include "fmpnet/positioning.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace fmpnet;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// ---------------------------------------------------------------------------
Outcome operator_oracles() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(64, 4096), rows(16, 64), cols(8, 48);
  const int factors[] = {1, 2, 4, 8, 16};
  constexpr int kTensors = 100;
  int checks = 0;
  double worst_avg = 0.0;

  for (int i = 0; i < kTensors; ++i) {
    const auto x = oracle::random_iq(rng, len(rng));
    for (int d : factors) {
      o.require(dd_iq(x, d) == oracle::dd(x, d), "dd");
      const auto a = ad_iq(x, d);
      const auto want = oracle::ad(x, d);
      double err = a.size() == want.size() ? 0.0 : INFINITY;
      for (std::size_t j = 0; j < a.size() && j < want.size(); ++j) err = std::max(err, std::abs(a[j] - want[j]));
      worst_avg = std::max(worst_avg, err);
      checks += 2;
    }
  }

  for (int i = 0; i < kTensors; ++i) {
    const auto t = oracle::random_tf(rng, rows(rng), cols(rng));
    for (int d : factors) {
      for (bool time : {true, false}) {
        if ((time ? t.q : t.p) < d) continue;
        const Axis axis = time ? Axis::time : Axis::frequency;
        const auto m = pool_tf(t, PoolMode::max, axis, d);
        o.require(m.data == oracle::pool(t, true, time, d).data, "mpd");
        const auto a = pool_tf(t, PoolMode::avg, axis, d);
        worst_avg = std::max(worst_avg, oracle::max_abs_diff(a.data, oracle::pool(t, false, time, d).data));
        checks += 2;
      }
    }
  }

  double worst_att = 0.0;
  for (int i = 0; i < kTensors; ++i) {
    const auto t = oracle::random_tf(rng, rows(rng), cols(rng));
    SpatialAttention<double> att;
    att.kernel = oracle::random_tensor<double>(rng, {1, 2, 7, 7}, 0.5);
    att.bias.values[0] = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    const auto q1 = attention_map(t, att);
    worst_att = std::max(worst_att, oracle::max_abs_diff(q1.data, oracle::attention(t, att.kernel, att.bias.values[0])));
    for (int d : factors) {
      const int k = t.p / d;
      const auto sel = amd_select_rows(t, q1, d);
      const auto want = oracle::top_rows(q1.data, t.p, t.q, k);
      o.require(sel.kept_rows == want, "amd rows");
      o.require(sel.tensor.data == oracle::gather(t, want).data, "amd gather");
      const RowIndexFile idx{t.p, d, want};
      o.require(apply_row_index(t, idx).data == oracle::gather(t, want).data, "row index replay");
      checks += 3;
    }
  }
  o.require(worst_avg <= 1e-12, "averaging error > 1e-12");
  o.require(worst_att <= 1e-12, "attention map error > 1e-12");
  const double secs = seconds_since(t0);
  o.require(secs < 10.0, "runtime >= 10 s");
  o.detail << kTensors << " random inputs per method, D in {1,2,4,8,16}, " << checks << " comparisons; max avg err "
           << worst_avg << ", max attention err " << worst_att << ", " << std::setprecision(3) << secs << " s";
  return o;
}

// ---------------------------------------------------------------------------
Outcome stft_oracle() {
  Outcome o;
  std::mt19937_64 rng(77);
  StftConfig cfg;
  cfg.padded = false;
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = oracle::random_iq(rng, 1024);
    const auto s = stft(x, cfg);
    for (int t = 0; t < s.cols; ++t) {
      const auto col = oracle::stft_column(x, cfg.fft_size, cfg.hop(), t);
      for (int r = 0; r < s.rows; ++r) worst = std::max(worst, std::abs(s(r, t) - col[r]));
    }
  }
  o.require(worst < 1e-6, "max abs error >= 1e-6");
  const auto frame = oracle::random_iq(rng, 16384);
  const auto t = to_tf_tensor(stft(frame));
  o.require(t.p == 256 && t.q == 257, "default shape is not (2,256,257)");
  o.detail << "5 random 1024-sample frames, max abs err " << worst << "; L=16384 -> (2," << t.p << "," << t.q << ")";
  return o;
}

// ---------------------------------------------------------------------------
Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(99);
  double worst = 0.0;
  int shapes = 0;
  auto note = [&](double e) { worst = std::max(worst, e); };

  struct ConvShape {
    int c, h, w, out, k, stride, pad;
  };
  const ConvShape conv_shapes[] = {{2, 9, 9, 1, 7, 1, 3}, {2, 8, 11, 16, 3, 2, 1}, {16, 7, 6, 32, 3, 2, 1},
                                   {3, 5, 5, 4, 1, 1, 0}, {4, 10, 9, 3, 3, 1, 1},  {1, 12, 12, 2, 5, 3, 2}};
  for (const auto& s : conv_shapes) {
    auto x = oracle::random_tensor<double>(rng, {s.c, s.h, s.w});
    auto k = oracle::random_tensor<double>(rng, {s.out, s.c, s.k, s.k});
    auto b = oracle::random_tensor<double>(rng, {s.out});
    const auto r = oracle::random_tensor<double>(rng, conv2d_forward(x, k, std::span<const double>(b.values), s.stride, s.pad).shape);
    auto loss = [&] { return dot(conv2d_forward(x, k, std::span<const double>(b.values), s.stride, s.pad).values, r.values); };
    const auto g = conv2d_backward(x, k, s.stride, s.pad, r);
    note(oracle::rel_error(g.input.values, oracle::numeric_grad(x.values, loss)));
    note(oracle::rel_error(g.kernel.values, oracle::numeric_grad(k.values, loss)));
    note(oracle::rel_error(g.bias, oracle::numeric_grad(b.values, loss)));
    ++shapes;
  }

  for (int i = 0; i < 5; ++i, ++shapes) {
    auto x = oracle::random_tensor<double>(rng, {i + 1, 3 + i, 4 + 2 * i});
    const auto r = oracle::random_tensor<double>(rng, x.shape);
    auto relu_loss = [&] { return dot(relu_forward(x).values, r.values); };
    note(oracle::rel_error(relu_backward(x, r).values, oracle::numeric_grad(x.values, relu_loss)));

    const auto rg = oracle::random_tensor<double>(rng, {x.dim(0)});
    auto gap_loss = [&] { return dot(global_avg_pool_forward(x).values, rg.values); };
    note(oracle::rel_error(global_avg_pool_backward(x.shape, rg).values, oracle::numeric_grad(x.values, gap_loss)));

    auto v = oracle::random_tensor<double>(rng, {4 + 5 * i});
    auto w = oracle::random_tensor<double>(rng, {2 + 3 * i, 4 + 5 * i});
    auto b = oracle::random_tensor<double>(rng, {2 + 3 * i});
    const auto rf = oracle::random_tensor<double>(rng, {2 + 3 * i});
    auto fc_loss = [&] { return dot(fully_connected_forward(v, w, std::span<const double>(b.values)).values, rf.values); };
    const auto fg = fully_connected_backward(v, w, rf);
    note(oracle::rel_error(fg.input.values, oracle::numeric_grad(v.values, fc_loss)));
    note(oracle::rel_error(fg.weight.values, oracle::numeric_grad(w.values, fc_loss)));
    note(oracle::rel_error(fg.bias, oracle::numeric_grad(b.values, fc_loss)));

    auto logits = oracle::random_tensor<double>(rng, {2 + 3 * i}, 3.0).values;
    const int label = i % (2 + 3 * i);
    auto ce_loss = [&] { return softmax_cross_entropy<double>(logits, label).loss; };
    note(oracle::rel_error(softmax_cross_entropy<double>(logits, label).grad, oracle::numeric_grad(logits, ce_loss)));
  }

  const std::pair<int, int> att_shapes[] = {{8, 6}, {12, 9}, {16, 5}, {10, 10}, {20, 7}};
  int trial = 0;
  for (const auto& [p, q] : att_shapes) {
    const int factor = 1 << (trial++ % 3);
    const auto x = oracle::random_tensor<double>(rng, {2, p, q});
    SpatialAttention<double> att;
    att.kernel = oracle::random_tensor<double>(rng, {1, 2, 7, 7}, 0.3);
    const auto fwd = amd_forward(x, att, factor);
    const auto r = oracle::random_tensor<double>(rng, fwd.input.shape);
    bool stable = true;
    auto loss = [&] {
      const auto f = amd_forward(x, att, factor);
      stable &= f.kept_rows == fwd.kept_rows;
      return dot(f.input.values, r.values);
    };
    att.kernel.zero_grad();
    att.bias.zero_grad();
    amd_backward(att, x, fwd, r);
    const auto gk = att.kernel.grad;
    const auto gb = att.bias.grad;
    note(oracle::rel_error(gk, oracle::numeric_grad(att.kernel.values, loss)));
    note(oracle::rel_error(gb, oracle::numeric_grad(att.bias.values, loss)));
    o.require(stable, "row selection changed under perturbation");
    ++shapes;
  }

  const std::vector<int> net_shapes[] = {{2, 8, 8}, {2, 9, 13}, {2, 16, 12}, {2, 12, 17}, {2, 8, 20}};
  trial = 0;
  for (const auto& shape : net_shapes) {
    PnetLite<double> net(3 + trial, 500 + trial);
    auto x = oracle::random_tensor<double>(rng, shape);
    const int label = trial % (3 + trial);
    ++trial;
    auto loss = [&] { return softmax_cross_entropy<double>(net.forward(x), label).loss; };
    net.zero_grad();
    Tensor<double> dx;
    net.accumulate_gradients(x, label, 1.0, &dx);
    note(oracle::rel_error(dx.values, oracle::numeric_grad(x.values, loss)));
    for (auto& p : net.parameters()) {
      const auto analytic = p.tensor->grad;
      note(oracle::rel_error(analytic, oracle::numeric_grad(p.tensor->values, loss)));
    }
    ++shapes;
  }

  o.require(worst < 1e-4, "relative error >= 1e-4");
  const double secs = seconds_since(t0);
  o.require(secs < 60.0, "runtime >= 60 s");
  o.detail << "conv, relu, gap, fc, softmax-CE, attention conv, full network; " << shapes
           << " shape groups (>=5 per layer); max rel err " << worst << ", " << std::setprecision(3) << secs << " s";
  return o;
}

// ---------------------------------------------------------------------------
Outcome adamw_single_step() {
  Outcome o;
  double worst = 0.0;
  auto step = [](std::vector<double> theta, std::vector<double> grad, AdamWConfig cfg) {
    Tensor<double> t({static_cast<int>(theta.size())}, std::move(theta));
    t.grad = std::move(grad);
    AdamWState<double> st;
    st.config = cfg;
    std::vector<Tensor<double>*> ps{&t};
    adamw_step<double>(ps, st);
    return t.values;
  };
  // theta 0, g 1, defaults: m_hat = v_hat = 1, decay term is zero
  worst = std::max(worst, std::abs(step({0.0}, {1.0}, {})[0] - (-1e-3 / (1.0 + 1e-8))));
  // g 0 and no decay: unchanged
  AdamWConfig no_decay;
  no_decay.weight_decay = 0.0;
  const auto same = step({1.5, -2.0}, {0.0, 0.0}, no_decay);
  worst = std::max(worst, std::max(std::abs(same[0] - 1.5), std::abs(same[1] + 2.0)));
  // g 0 with decay 0.01: shrinks by lr * 0.01 * theta
  const auto shrunk = step({2.0, -4.0}, {0.0, 0.0}, {});
  worst = std::max(worst, std::abs(shrunk[0] - (2.0 - 1e-3 * 0.01 * 2.0)));
  worst = std::max(worst, std::abs(shrunk[1] - (-4.0 + 1e-3 * 0.01 * 4.0)));
  o.require(worst <= 1e-12, "deviation > 1e-12");
  o.detail << "3 hand-computed cases, max deviation " << worst;
  return o;
}

// ---------------------------------------------------------------------------
double station_row_coverage(const World& world, const std::vector<int>& kept, int fft_size) {
  const double half_bin = world.fs / (2.0 * fft_size);
  std::vector<int> band_rows;
  for (int r = 0; r < fft_size; ++r) {
    const double f = row_frequency_hz(r, fft_size, world.fs);
    for (const auto& st : world.stations) {
      const double edge = st.deviation_hz + st.message_bandwidth_hz;
      if (f + half_bin >= st.carrier_offset_hz - edge && f - half_bin <= st.carrier_offset_hz + edge) {
        band_rows.push_back(r);
        break;
      }
    }
  }
  int hit = 0;
  for (int r : band_rows) hit += std::binary_search(kept.begin(), kept.end(), r);
  return band_rows.empty() ? 0.0 : static_cast<double>(hit) / band_rows.size();
}

Outcome end_to_end() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = make_grid(4, 4, 1.0);
  const auto world = make_world(grid.num_classes(), 7, WorldOptions{});
  const auto splits = build_dataset(world, grid, {100, 20, 50}, 10.0, mix_seed(7, 0xDA7AULL));
  std::cout << "  info: synthesized 1600/320/800 frames in " << std::setprecision(3) << seconds_since(t0) << " s\n"
            << std::flush;

  TrainConfig base_cfg;
  base_cfg.lr = 3e-3;
  base_cfg.epochs = 15;
  base_cfg.halve_every = 5;
  base_cfg.seed = 1;
  TrainConfig amd_cfg = base_cfg;
  amd_cfg.epochs = 8;
  amd_cfg.halve_every = 3;

  auto run = [&](const DownsampleSpec& spec, const TrainConfig& cfg) {
    const auto t1 = std::chrono::steady_clock::now();
    auto trained = train_pipeline(splits.train, splits.val, spec, cfg);
    EvalConfig ec;
    ec.row_index = trained.row_index ? &*trained.row_index : nullptr;
    auto report = evaluate(trained.model, splits.test, spec, grid, ec);
    std::cout << "  info: " << describe(spec) << " input " << shape_string(trained.input_shape) << ": accuracy "
              << report.accuracy << ", MDE " << report.mde << ", STD " << report.std << " ("
              << seconds_since(t1) << " s)\n"
              << std::flush;
    return std::pair{std::move(trained), std::move(report)};
  };

  const auto [base_model, base] = run({}, base_cfg);
  o.require(base.accuracy >= 0.95, "(a) accuracy < 95%");
  o.require(base.mde <= 0.2, "(a) MDE > 0.2");
  o.detail << "(a) D=1 accuracy " << base.accuracy << ", MDE " << base.mde << ";";

  double coverage = 0.0;
  o.detail << " (b)";
  for (int d : {2, 4, 8}) {
    const auto [amd_model, r] = run({Method::amd, d, Axis::frequency}, amd_cfg);
    o.require(r.mde <= 2.0 * base.mde, "(b) AMD D=" + std::to_string(d) + " MDE above 2x baseline");
    o.detail << " D=" << d << " MDE " << r.mde;
    if (d == 4) coverage = station_row_coverage(world, amd_model.row_index->kept_rows, 256);
  }
  o.require(coverage >= 0.8, "(c) station subband coverage < 80%");
  o.detail << " (limit " << 2.0 * base.mde << "); (c) D=4 kept rows cover " << coverage * 100.0
           << "% of station subband rows;";

  const double secs = seconds_since(t0);
  o.require(secs < 900.0, "runtime >= 15 min");
  o.detail << " total " << secs << " s";
  return o;
}

// ---------------------------------------------------------------------------
Outcome complexity_scaling() {
  Outcome o;
  const auto base = count_flops_params(16, model_input_shape({}, 16384));
  o.detail << "AMD:";
  for (int d : {2, 4, 8, 16}) {
    const auto r = count_flops_params(16, model_input_shape({Method::amd, d, Axis::frequency}, 16384));
    const double ratio = static_cast<double>(r.flops) / base.flops;
    o.require(r.params == base.params, "params change at D=" + std::to_string(d));
    o.require(ratio >= 0.8 / d && ratio <= 1.3 / d, "FLOP ratio out of range at D=" + std::to_string(d));
    if (d == 16) o.require(1.0 - ratio >= 0.9, "D=16 reduction < 90%");
    o.detail << " D=" << d << " ratio " << std::setprecision(4) << ratio;
    if (d == 16) o.detail << " (reduction " << (1.0 - ratio) * 100.0 << "%)";
  }
  o.detail << "; params " << base.params << " at every D";

  for (const DownsampleSpec s : {DownsampleSpec{Method::dd, 16, Axis::time}, DownsampleSpec{Method::mpd, 16, Axis::time},
                                 DownsampleSpec{Method::apd, 16, Axis::frequency}}) {
    const auto r = count_flops_params(16, model_input_shape(s, 16384));
    std::cout << "  info: " << describe(s) << " FLOP ratio x D = " << std::setprecision(4)
              << static_cast<double>(r.flops) / base.flops * 16 << "\n";
  }
  return o;
}

// ---------------------------------------------------------------------------
Outcome metric_units() {
  Outcome o;
  const std::vector<double> e{0.0, 2.0};
  const auto s = distance_stats(e);
  o.require(s.mde == 1.0 && s.std == 1.0, "{0,2} -> MDE 1, STD 1");

  const std::vector<double> perfect(4, 0.0);
  const auto p = distance_stats(perfect);
  const auto pc = empirical_cdf(perfect, 11);
  o.require(p.mde == 0.0 && p.std == 0.0, "perfect -> 0, 0");
  o.require(pc.front().threshold == 0.0 && pc.front().probability == 1.0, "perfect CDF jumps to 1 at 0");

  const std::vector<double> hand{1.0, 2.0, 3.0, 4.0};
  const auto hc = empirical_cdf(hand, 5);
  const double want[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  for (int i = 0; i < 5; ++i) o.require(hc[i].probability == want[i] && hc[i].threshold == i, "hand CDF");

  std::mt19937_64 rng(5);
  std::exponential_distribution<double> ex(2.0);
  std::vector<double> r(500);
  for (auto& v : r) v = ex(rng);
  const auto cdf = empirical_cdf(r, 101);
  bool monotone = true;
  for (std::size_t i = 1; i < cdf.size(); ++i) monotone &= cdf[i].probability >= cdf[i - 1].probability;
  o.require(monotone, "CDF not monotone");
  o.require(cdf.back().probability == 1.0, "CDF does not end at 1");
  o.require(cdf.back().threshold == *std::max_element(r.begin(), r.end()), "CDF does not reach max error");
  o.detail << "{0,2} -> MDE " << s.mde << " STD " << s.std << "; perfect and hand CDFs exact; random CDF monotone, ends at "
           << cdf.back().probability;
  return o;
}

// ---------------------------------------------------------------------------
Outcome determinism(const fs::path& workdir) {
  Outcome o;
  const char* files[] = {"train.fmds", "val.fmds", "test.fmds", "grid.json", "model.fmck",
                         "rows.json",  "train_log.csv", "eval/samples.csv", "eval/summary.json", "eval/cdf.csv"};
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* tag : {"run1", "run2"}) {
    const auto dir = (workdir / tag).string();
    fs::remove_all(dir);
    std::ostringstream out, err;
    int code = cli::run({"synth", "--out", dir, "--grid", "2x2", "--per-class", "4,2,2", "--length", "4096", "--seed", "11"}, out, err);
    code = code ? code : cli::run({"train", "--data", dir, "--method", "amd", "--factor", "4", "--epochs", "2", "--seed", "5"}, out, err);
    code = code ? code : cli::run({"eval", "--data", dir}, out, err);
    o.require(code == 0, std::string(tag) + " exit code " + std::to_string(code) + ": " + err.str());
    std::map<std::string, std::string> bytes;
    for (const char* f : files)
      if (fs::exists(fs::path(dir) / f)) bytes[f] = read_text_file(fs::path(dir) / f);
    runs.push_back(std::move(bytes));
  }
  int identical = 0;
  for (const char* f : files) {
    const bool same = runs[0].count(f) && runs[1].count(f) && runs[0][f] == runs[1][f];
    o.require(same, std::string(f) + " differs or is missing");
    identical += same;
  }
  o.detail << "synth -> train (amd D=4) -> eval twice; " << identical << "/" << std::size(files)
           << " artifacts byte-identical";
  if (o.pass) {
    fs::remove_all(workdir / "run1");
    fs::remove_all(workdir / "run2");
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  fs::path workdir = fs::temp_directory_path() / "fmpnet_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) only = argv[++i];
    else if (a == "--workdir" && i + 1 < argc) workdir = argv[++i];
    else {
      std::cerr << "usage: fmpnet_acceptance [--only NAME] [--workdir DIR]\n";
      return 2;
    }
  }
  fs::create_directories(workdir);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"operator-oracles", operator_oracles},
      {"stft-oracle", stft_oracle},
      {"gradient-suite", gradient_suite},
      {"adamw-single-step", adamw_single_step},
      {"complexity-scaling", complexity_scaling},
      {"metric-unit-tests", metric_units},
      {"determinism", [&] { return determinism(workdir); }},
      {"end-to-end-positioning", end_to_end},
  };

  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && only != name) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << "\n" << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
