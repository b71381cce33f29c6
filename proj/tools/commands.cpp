#include "commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "fmpnet/checkpoint.hpp"
#include "fmpnet/dataset_io.hpp"
#include "fmpnet/downsampler.hpp"
#include "fmpnet/errors.hpp"
#include "fmpnet/positioning.hpp"
#include "fmpnet/rf_synth.hpp"

namespace fmpnet::cli {
namespace fs = std::filesystem;
namespace {

std::vector<int> parse_int_list(const std::string& s, char sep) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ArgumentError("cannot parse integer list '" + s + "'");
    }
  }
  return out;
}

struct SpecFlags {
  std::string method = "none";
  std::string axis;
  int factor = 1;

  DownsampleSpec resolve() const {
    DownsampleSpec spec;
    spec.method = parse_method(method);
    spec.factor = factor;
    if (spec.method == Method::amd) spec.axis = axis.empty() ? Axis::frequency : parse_axis(axis);
    else spec.axis = axis.empty() ? Axis::time : parse_axis(axis);
    validate(spec);
    return spec;
  }

  void add_to(CLI::App* app, bool with_defaults) {
    auto* m = app->add_option("--method", method, "none|dd|ad|mpd|apd|amd");
    app->add_option("--axis", axis, "time|frequency (mpd/apd; amd is frequency only)");
    auto* f = app->add_option("--factor", factor, "downsampling factor D");
    if (with_defaults) {
      m->capture_default_str();
      f->capture_default_str();
    }
  }
};

// Flags given on the command line win over keys in --config.
void apply_config_file(CLI::App& sub, const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i + 1 < args.size(); ++i)
    if (args[i] == "--config") path = args[i + 1];
  for (const auto& a : args)
    if (a.rfind("--config=", 0) == 0) path = a.substr(9);
  if (path.empty()) return;

  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config " + path + ": " + e.what());
  }
  if (!cfg.is_object()) throw FormatError("config " + path + ": top level must be an object");
  for (const auto& [key, value] : cfg.items()) {
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw ArgumentError("config " + path + ": unknown key '" + key + "'");
    }
    if (key == "config") throw ArgumentError("config files cannot nest --config");
    std::string text;
    if (value.is_string()) text = value.get<std::string>();
    else if (value.is_boolean()) text = value.get<bool>() ? "true" : "false";
    else if (value.is_number() || value.is_array()) text = value.dump();
    else throw ArgumentError("config " + path + ": unsupported value for '" + key + "'");
    if (value.is_array()) {
      text.clear();
      for (const auto& v : value) text += (text.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
    }
    opt->default_val(text);
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

// ---------------------------------------------------------------- synth
struct SynthArgs {
  std::string out;
  std::string grid = "4x4";
  double spacing = 1.0;
  std::string per_class = "100,20,50";
  double snr = 10.0;
  std::uint64_t seed = 7;
  int stations = 5;
  int length = kDefaultFrameLength;
  double fs = kDefaultFs;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto dims = parse_int_list(a.grid, 'x');
  if (dims.size() != 2 || dims[0] < 1 || dims[1] < 1) throw ArgumentError("--grid must look like 4x4");
  const auto counts = parse_int_list(a.per_class, ',');
  if (counts.size() != 3) throw ArgumentError("--per-class needs train,val,test counts");
  if (a.length < 256) throw ArgumentError("--length must be at least 256");

  WorldOptions opt;
  opt.stations = a.stations;
  opt.fs = a.fs;
  opt.frame_length = a.length;
  const auto grid = make_grid(dims[0], dims[1], a.spacing);
  const auto world = make_world(grid.num_classes(), a.seed, opt);
  const auto splits = build_dataset(world, grid, {counts[0], counts[1], counts[2]}, a.snr, mix_seed(a.seed, 0xDA7AULL));

  const fs::path dir(a.out);
  ensure_dir(dir);
  write_grid(dir / "grid.json", grid);
  for (const Dataset* d : {&splits.train, &splits.val, &splits.test}) {
    write_fmds(dir / (std::string(split_name(d->split)) + ".fmds"), *d);
    out << split_name(d->split) << ": " << d->frames.size() << " frames\n";
  }
  return kOk;
}

// ---------------------------------------------------------------- inspect
struct InspectArgs {
  std::string data;
};

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  const auto d = read_fmds(a.data);
  std::map<int, int> per_class;
  for (const auto& f : d.frames) ++per_class[f.label];
  double snr_sum = 0.0;
  for (const auto& f : d.frames) snr_sum += estimate_snr_db(f);
  out << "classes: " << d.grid.num_classes() << "\n"
      << "frame_length: " << d.frame_length << "\n"
      << "fs: " << d.fs << "\n"
      << "frames: " << d.frames.size() << "\n";
  out << "per_class:";
  for (const auto& [cls, n] : per_class) out << ' ' << cls << '=' << n;
  out << "\n";
  if (!d.frames.empty())
    out << std::fixed << std::setprecision(3) << "estimated_snr_db: " << snr_sum / d.frames.size() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train
struct TrainArgs {
  std::string data;
  std::string out;
  std::string index_out;
  std::string log;
  SpecFlags spec;
  int epochs = 15;
  int batch = 8;
  double lr = 1e-3;
  int halve_every = 2;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  bool save_optimizer = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto spec = a.spec.resolve();
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.lr = a.lr;
  cfg.halve_every = a.halve_every;
  cfg.weight_decay = a.weight_decay;
  cfg.seed = a.seed;
  validate(cfg);

  const fs::path dir(a.data);
  const auto grid = read_grid(dir / "grid.json");
  auto train = read_fmds(dir / "train.fmds");
  auto val = read_fmds(dir / "val.fmds");
  if (train.grid.num_classes() != grid.num_classes() || val.grid.num_classes() != grid.num_classes())
    throw FormatError("dataset class count does not match grid.json");
  train.grid = val.grid = grid;

  const fs::path ckpt = a.out.empty() ? dir / "model.fmck" : fs::path(a.out);
  const fs::path index_path = a.index_out.empty() ? dir / "rows.json" : fs::path(a.index_out);
  const fs::path log_path = a.log.empty() ? dir / "train_log.csv" : fs::path(a.log);

  const auto shape = model_input_shape(spec, train.frame_length, cfg.stft);
  out << "method: " << describe(spec) << "\n"
      << "input shape: " << shape_string(shape) << "\n"
      << "train frames: " << train.frames.size() << ", val frames: " << val.frames.size() << "\n"
      << "epochs: " << cfg.epochs << ", batch: " << cfg.batch_size << ", lr: " << cfg.lr
      << " (halved every " << cfg.halve_every << ")\n";

  std::ostringstream log;
  log << std::setprecision(10) << "phase,epoch,lr,loss,accuracy\n";
  cfg.on_epoch = [&](const EpochLog& e) {
    log << e.phase << ',' << e.epoch << ',' << e.lr << ',' << e.loss << ',' << e.accuracy << '\n';
    out << "phase " << e.phase << " epoch " << e.epoch << ": loss " << e.loss << ", accuracy " << e.accuracy << "\n";
  };
  auto result = train_pipeline(train, val, spec, cfg);

  Checkpoint ck{std::move(result.model), spec, cfg.stft.fft_size, std::nullopt};
  if (a.save_optimizer) ck.optimizer = result.optimizer;
  write_checkpoint(ckpt, ck);
  write_text_file(log_path, log.str());
  out << "checkpoint: " << ckpt.string() << "\n";
  if (result.row_index) {
    write_row_index(index_path, *result.row_index);
    out << "row index: " << index_path.string() << " (" << result.row_index->kept_rows.size() << " rows)\n";
  }
  return kOk;
}

// ---------------------------------------------------------------- eval
struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string index;
  std::string out_dir;
  SpecFlags spec;
  int top_k = 3;
  int fuse_window = 1;
  int cdf_points = 101;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, const CLI::App& sub) {
  const fs::path dir(a.data);
  const auto ck = read_checkpoint(a.checkpoint.empty() ? dir / "model.fmck" : fs::path(a.checkpoint));
  DownsampleSpec spec = ck.spec;
  if (sub.count("--method") || sub.count("--factor") || sub.count("--axis")) {
    SpecFlags flags = a.spec;
    if (!sub.count("--method")) flags.method = method_name(ck.spec.method);
    if (!sub.count("--factor")) flags.factor = ck.spec.factor;
    if (!sub.count("--axis")) flags.axis = axis_name(ck.spec.axis);
    const auto requested = flags.resolve();
    if (!(requested == ck.spec))
      throw InferenceError("requested " + describe(requested) + " but checkpoint was trained with " + describe(ck.spec));
  }

  const auto grid = read_grid(dir / "grid.json");
  auto test = read_fmds(dir / "test.fmds");
  if (test.grid.num_classes() != grid.num_classes()) throw FormatError("test set class count does not match grid.json");
  test.grid = grid;

  std::optional<RowIndexFile> index;
  if (spec.method == Method::amd) {
    const fs::path p = a.index.empty() ? dir / "rows.json" : fs::path(a.index);
    index = read_row_index(p);
  }
  EvalConfig cfg;
  cfg.top_k = a.top_k;
  cfg.fuse_window = a.fuse_window;
  cfg.cdf_points = a.cdf_points;
  cfg.stft.fft_size = ck.fft_size;
  cfg.row_index = index ? &*index : nullptr;
  const auto report = evaluate(ck.model, test, spec, grid, cfg);

  const fs::path out_dir = a.out_dir.empty() ? dir / "eval" : fs::path(a.out_dir);
  ensure_dir(out_dir);
  write_text_file(out_dir / "samples.csv", samples_csv(report));
  write_text_file(out_dir / "summary.json", summary_json(report) + "\n");
  write_text_file(out_dir / "cdf.csv", cdf_csv(report));
  out << "method: " << describe(spec) << "\n"
      << std::setprecision(6) << "MDE: " << report.mde << "\nSTD: " << report.std
      << "\naccuracy: " << report.accuracy << "\nreport: " << out_dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- bench
struct BenchArgs {
  SpecFlags spec{"amd", "", 1};
  std::string factors = "1,2,4,8,16";
  int classes = 16;
  int length = kDefaultFrameLength;
  int fft_size = 256;
  std::string out;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  const auto factors = parse_int_list(a.factors, ',');
  if (factors.empty()) throw ArgumentError("--factors is empty");
  StftConfig stft_cfg;
  stft_cfg.fft_size = a.fft_size;
  std::ostringstream csv;
  csv << "method,factor,input_shape,params,flops,flops_ratio\n";
  std::int64_t base = 0;
  for (int d : factors) {
    SpecFlags f = a.spec;
    f.factor = d;
    if (d == 1) f.method = "none";
    const auto spec = f.resolve();
    const auto shape = model_input_shape(spec, a.length, stft_cfg);
    const auto report = count_flops_params(a.classes, shape);
    if (base == 0) base = count_flops_params(a.classes, model_input_shape({}, a.length, stft_cfg)).flops;
    csv << method_name(spec.method) << ',' << d << ",\"" << shape_string(shape) << "\","
        << report.params << ',' << report.flops << ',' << std::setprecision(6)
        << static_cast<double>(report.flops) / static_cast<double>(base) << '\n';
  }
  out << csv.str();
  if (!a.out.empty()) write_text_file(a.out, csv.str());
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"FM fingerprint positioning with downsampled time-frequency inputs"};
  app.require_subcommand(1);
  std::string config_path;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic FM world and write FMDS1 datasets");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--grid", synth.grid, "grid size, e.g. 4x4")->capture_default_str();
  s->add_option("--spacing", synth.spacing, "grid spacing in meters")->capture_default_str();
  s->add_option("--per-class", synth.per_class, "frames per class: train,val,test")->capture_default_str();
  s->add_option("--snr", synth.snr, "SNR in dB")->capture_default_str();
  s->add_option("--seed", synth.seed, "world and dataset seed")->capture_default_str();
  s->add_option("--stations", synth.stations, "number of FM stations")->capture_default_str();
  s->add_option("--length", synth.length, "samples per frame")->capture_default_str();
  s->add_option("--fs", synth.fs, "sample rate in Hz")->capture_default_str();

  InspectArgs inspect;
  auto* i = app.add_subcommand("inspect", "summarize an FMDS1 file and estimate its SNR");
  i->add_option("--data", inspect.data, "FMDS1 file")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a classifier on DIR/train.fmds (+ DIR/val.fmds)");
  t->add_option("--data", train.data, "dataset directory written by synth")->required();
  train.spec.add_to(t, true);
  t->add_option("--epochs", train.epochs)->capture_default_str();
  t->add_option("--batch", train.batch)->capture_default_str();
  t->add_option("--lr", train.lr)->capture_default_str();
  t->add_option("--halve-every", train.halve_every, "halve the learning rate every N epochs")->capture_default_str();
  t->add_option("--weight-decay", train.weight_decay)->capture_default_str();
  t->add_option("--seed", train.seed)->capture_default_str();
  t->add_option("--out", train.out, "checkpoint path (default DIR/model.fmck)");
  t->add_option("--index-out", train.index_out, "row index path for amd (default DIR/rows.json)");
  t->add_option("--log", train.log, "per-epoch CSV (default DIR/train_log.csv)");
  t->add_flag("--save-optimizer", train.save_optimizer, "append AdamW state to the checkpoint");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on DIR/test.fmds");
  e->add_option("--data", eval.data, "dataset directory written by synth")->required();
  e->add_option("--checkpoint", eval.checkpoint, "checkpoint (default DIR/model.fmck)");
  e->add_option("--index", eval.index, "row index for amd (default DIR/rows.json)");
  e->add_option("--out-dir", eval.out_dir, "report directory (default DIR/eval)");
  eval.spec.add_to(e, false);
  e->add_option("--top-k", eval.top_k, "cells used for weighted positioning")->capture_default_str();
  e->add_option("--fuse-window", eval.fuse_window, "frames fused per estimate (1 disables)")->capture_default_str();
  e->add_option("--cdf-points", eval.cdf_points)->capture_default_str();

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "parameter and FLOP counts per downsampling factor");
  bench.spec.add_to(b, true);
  b->add_option("--factors", bench.factors)->capture_default_str();
  b->add_option("--classes", bench.classes)->capture_default_str();
  b->add_option("--length", bench.length, "IQ frame length")->capture_default_str();
  b->add_option("--fft-size", bench.fft_size)->capture_default_str();
  b->add_option("--out", bench.out, "also write the CSV here");

  for (auto* sub : {s, i, t, e, b}) sub->add_option("--config", config_path, "JSON file of option values");

  try {
    if (!args.empty()) {
      for (auto* sub : {s, i, t, e, b})
        if (sub->get_name() == args.front()) apply_config_file(*sub, args);
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::ParseError& pe) {
      const int code = app.exit(pe, out, err);
      return code == 0 ? kOk : kArgumentError;
    }
    if (*s) return cmd_synth(synth, out);
    if (*i) return cmd_inspect(inspect, out);
    if (*t) return cmd_train(train, out);
    if (*e) return cmd_eval(eval, out, *e);
    if (*b) return cmd_bench(bench, out);
    return kArgumentError;
  } catch (const ArgumentError& ex) {
    err << "argument error: " << ex.what() << "\n";
    return kArgumentError;
  } catch (const ConfigError& ex) {
    err << "configuration error: " << ex.what() << "\n";
    return kArgumentError;
  } catch (const FormatError& ex) {
    err << "format error: " << ex.what() << "\n";
    return kFormatError;
  } catch (const TrainingError& ex) {
    err << "training error: " << ex.what() << "\n";
    return kRuntimeError;
  } catch (const InferenceError& ex) {
    err << "inference error: " << ex.what() << "\n";
    return kRuntimeError;
  } catch (const IoError& ex) {
    err << "I/O error: " << ex.what() << "\n";
    return kIoError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kIoError;
  }
}

}  // namespace fmpnet::cli
