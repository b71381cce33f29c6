#include <doctest.h>

#include <filesystem>
#include <json.hpp>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "fmpnet/dataset_io.hpp"
#include "fmpnet/downsampler.hpp"

namespace fs = std::filesystem;
using fmpnet::read_text_file;
using fmpnet::write_text_file;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = fmpnet::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// One small world shared by the test cases below.
const fs::path& data_dir() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "fmpnet_cli_test";
    fs::remove_all(d);
    const auto r = cli({"synth", "--out", d.string(), "--grid", "2x1", "--per-class", "2,1,2", "--seed", "3"});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("synth writes three splits and a grid") {
  const auto d = fs::temp_directory_path() / "fmpnet_cli_synth";
  fs::remove_all(d);
  const auto r = cli({"synth", "--out", d.string(), "--grid", "2x2", "--per-class", "2,1,1", "--length", "1024"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("train: 8 frames") != std::string::npos);
  CHECK(r.out.find("val: 4 frames") != std::string::npos);
  CHECK(r.out.find("test: 4 frames") != std::string::npos);
  for (const char* f : {"train.fmds", "val.fmds", "test.fmds", "grid.json"}) CHECK(fs::exists(d / f));

  const auto first = read_text_file(d / "train.fmds");
  REQUIRE(cli({"synth", "--out", d.string(), "--grid", "2x2", "--per-class", "2,1,1", "--length", "1024"}).code == 0);
  CHECK(read_text_file(d / "train.fmds") == first);

  const auto i = cli({"inspect", "--data", (d / "val.fmds").string()});
  CHECK(i.code == 0);
  CHECK(i.out.find("frames: 4") != std::string::npos);
  CHECK(i.out.find("per_class: 0=1 1=1 2=1 3=1") != std::string::npos);
  CHECK(i.out.find("estimated_snr_db") != std::string::npos);
  fs::remove_all(d);
}

TEST_CASE("inspect reports the SNR of a 0 dB dataset") {
  const auto d = fs::temp_directory_path() / "fmpnet_cli_snr0";
  fs::remove_all(d);
  REQUIRE(cli({"synth", "--out", d.string(), "--grid", "2x1", "--per-class", "1,1,4", "--snr", "0"}).code == 0);
  const auto i = cli({"inspect", "--data", (d / "test.fmds").string()});
  REQUIRE(i.code == 0);
  const auto pos = i.out.find("estimated_snr_db: ");
  REQUIRE(pos != std::string::npos);
  const double snr = std::stod(i.out.substr(pos + 18));
  CHECK(std::abs(snr) < 0.5);
  fs::remove_all(d);
}

TEST_CASE("argument errors exit with 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"synth"}).code == 2);
  CHECK(cli({"synth", "--out", "x", "--grid", "4by4"}).code == 2);
  CHECK(cli({"train", "--data", data_dir().string(), "--method", "wavelet"}).code == 2);
  CHECK(cli({"train", "--data", data_dir().string(), "--method", "amd", "--axis", "time", "--factor", "4"}).code == 2);
  CHECK(cli({"synth", "--help"}).code == 0);
}

TEST_CASE("train with zero epochs fails without writing a checkpoint") {
  const auto ck = data_dir() / "zero.fmck";
  const auto r = cli({"train", "--data", data_dir().string(), "--epochs", "0", "--out", ck.string()});
  CHECK(r.code == 2);
  CHECK_FALSE(fs::exists(ck));
}

TEST_CASE("train logs the model input shape") {
  const auto ck = data_dir() / "dd16.fmck";
  const auto r = cli({"train", "--data", data_dir().string(), "--method", "dd", "--factor", "16", "--epochs", "1",
                      "--out", ck.string(), "--log", (data_dir() / "dd16.csv").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("input shape: (2,256,17)") != std::string::npos);
  CHECK(fs::exists(ck));
  const auto log = lines(read_text_file(data_dir() / "dd16.csv"));
  REQUIRE(log.size() == 2);
  CHECK(log[0] == "phase,epoch,lr,loss,accuracy");
}

TEST_CASE("amd train, eval and determinism") {
  const auto dir = data_dir().string();
  auto train = [&](const std::string& tag) {
    return cli({"train", "--data", dir, "--method", "amd", "--factor", "8", "--epochs", "1", "--out",
                dir + "/amd" + tag + ".fmck", "--index-out", dir + "/rows" + tag + ".json", "--log",
                dir + "/log" + tag + ".csv"});
  };
  REQUIRE(train("a").code == 0);
  REQUIRE(train("b").code == 0);
  CHECK(read_text_file(dir + "/amda.fmck") == read_text_file(dir + "/amdb.fmck"));
  CHECK(read_text_file(dir + "/rowsa.json") == read_text_file(dir + "/rowsb.json"));
  const auto idx = fmpnet::read_row_index(dir + "/rowsa.json");
  CHECK(idx.kept_rows.size() == 32);
  CHECK(read_text_file(dir + "/rowsa.json").rfind("{\"fft_size\":256,\"factor\":8,\"kept_rows\":[", 0) == 0);

  auto eval = [&](const std::string& out) {
    return cli({"eval", "--data", dir, "--checkpoint", dir + "/amda.fmck", "--index", dir + "/rowsa.json",
                "--out-dir", dir + "/" + out});
  };
  REQUIRE(eval("eval1").code == 0);
  REQUIRE(eval("eval2").code == 0);
  for (const char* f : {"samples.csv", "summary.json", "cdf.csv"})
    CHECK(read_text_file(dir + "/eval1/" + f) == read_text_file(dir + "/eval2/" + f));

  const auto summary = nlohmann::json::parse(read_text_file(dir + "/eval1/summary.json"));
  const auto rows = lines(read_text_file(dir + "/eval1/samples.csv"));
  REQUIRE(rows.size() == 5);
  double sum = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) sum += std::stod(rows[i].substr(rows[i].rfind(',') + 1));
  CHECK(std::abs(summary["mde"].get<double>() - sum / 4) < 1e-12);

  const auto cdf = lines(read_text_file(dir + "/eval1/cdf.csv"));
  CHECK(cdf[0] == "threshold,probability");
  double prev = -1.0;
  for (std::size_t i = 1; i < cdf.size(); ++i) {
    const double p = std::stod(cdf[i].substr(cdf[i].find(',') + 1));
    CHECK(p >= prev);
    prev = p;
  }
  CHECK(prev == 1.0);

  SUBCASE("spec mismatch is an inference error") {
    const auto r = cli({"eval", "--data", dir, "--checkpoint", dir + "/amda.fmck", "--index", dir + "/rowsa.json",
                        "--factor", "4", "--out-dir", dir + "/bad"});
    CHECK(r.code == 4);
    CHECK(r.err.find("inference error") != std::string::npos);
  }
  SUBCASE("missing index is an I/O error") {
    CHECK(cli({"eval", "--data", dir, "--checkpoint", dir + "/amda.fmck", "--index", dir + "/nope.json"}).code == 1);
  }
}

TEST_CASE("corrupt dataset header exits with 3 and names the field") {
  const auto d = fs::temp_directory_path() / "fmpnet_cli_corrupt";
  fs::remove_all(d);
  fs::create_directories(d);
  for (const char* f : {"train.fmds", "val.fmds", "grid.json"}) fs::copy_file(data_dir() / f, d / f);
  auto bytes = read_text_file(d / "train.fmds");
  bytes[6] = 0;
  bytes[7] = 0;
  write_text_file(d / "train.fmds", bytes);
  const auto r = cli({"train", "--data", d.string(), "--epochs", "1"});
  CHECK(r.code == 3);
  CHECK(r.err.find("field C") != std::string::npos);
  CHECK(cli({"inspect", "--data", (d / "train.fmds").string()}).code == 3);
  fs::remove_all(d);
}

TEST_CASE("unwritable output is an I/O error") {
  const auto r = cli({"synth", "--out", "/proc/fmpnet/nope", "--grid", "1x2", "--per-class", "1,1,1", "--length", "512"});
  CHECK(r.code == 1);
}

TEST_CASE("bench") {
  const auto r = cli({"bench"});
  REQUIRE(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == "method,factor,input_shape,params,flops,flops_ratio");
  std::set<std::string> params;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::vector<std::string> cols;
    std::string cell;
    bool quoted = false;
    for (char ch : rows[i]) {
      if (ch == '"') quoted = !quoted;
      else if (ch == ',' && !quoted) {
        cols.push_back(cell);
        cell.clear();
      } else cell += ch;
    }
    cols.push_back(cell);
    REQUIRE(cols.size() == 6);
    params.insert(cols[3]);
    if (cols[1] == "16") {
      const double ratio = std::stod(cols[5]);
      CHECK(ratio >= 0.8 / 16);
      CHECK(ratio <= 1.3 / 16);
    }
  }
  CHECK(params.size() == 1);
  CHECK(lines(cli({"bench", "--factors", "2,4", "--method", "mpd", "--axis", "time"}).out).size() == 3);
}

TEST_CASE("config file values apply and flags override them") {
  const auto d = fs::temp_directory_path() / "fmpnet_cli_config";
  fs::remove_all(d);
  fs::create_directories(d);
  write_text_file(d / "bench.json", R"({"factors": [2, 4, 8], "classes": 4})");
  const auto a = cli({"bench", "--config", (d / "bench.json").string()});
  REQUIRE(a.code == 0);
  CHECK(lines(a.out).size() == 4);
  const auto b = cli({"bench", "--config", (d / "bench.json").string(), "--factors", "2"});
  REQUIRE(b.code == 0);
  CHECK(lines(b.out).size() == 2);

  write_text_file(d / "bad.json", R"({"factorz": [2]})");
  CHECK(cli({"bench", "--config", (d / "bad.json").string()}).code == 2);
  write_text_file(d / "broken.json", "{");
  CHECK(cli({"bench", "--config", (d / "broken.json").string()}).code == 3);

  write_text_file(d / "synth.json", R"({"grid": "1x2", "per-class": "1,1,1", "length": 512, "snr": 5})");
  const auto s = cli({"synth", "--config", (d / "synth.json").string(), "--out", (d / "ds").string()});
  REQUIRE(s.code == 0);
  CHECK(s.out.find("train: 2 frames") != std::string::npos);
  fs::remove_all(d);
}
