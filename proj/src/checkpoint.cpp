#include "fmpnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fmpnet/errors.hpp"

namespace fmpnet {
namespace {

static_assert(std::endian::native == std::endian::little, "FMCK1 I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* field) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw FormatError(std::string("FMCK1: truncated stream while reading ") + field);
  return v;
}

void put_floats(std::ostream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void get_floats(std::istream& is, std::vector<float>& v, const std::string& what) {
  if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float))))
    throw FormatError("FMCK1: truncated blob for " + what);
}

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  const auto params = ck.model.parameters();
  os.write("FMCK", 4);
  put<std::uint16_t>(os, kFmckVersion);
  put<std::uint16_t>(os, static_cast<std::uint16_t>(ck.model.num_classes()));
  put<std::uint8_t>(os, static_cast<std::uint8_t>(ck.spec.method));
  put<std::uint8_t>(os, static_cast<std::uint8_t>(ck.spec.axis));
  put<std::uint16_t>(os, static_cast<std::uint16_t>(ck.spec.factor));
  put<std::uint16_t>(os, static_cast<std::uint16_t>(ck.fft_size));
  put<std::uint16_t>(os, ck.optimizer ? 1 : 0);
  put<std::uint16_t>(os, static_cast<std::uint16_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(p.tensor->rank()));
    for (int d : p.tensor->shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  for (const auto& p : params) put_floats(os, p.tensor->values);
  if (ck.optimizer) {
    const auto& st = *ck.optimizer;
    if (st.m.size() != params.size()) throw ArgumentError("FMCK1: optimizer state does not match model");
    put<std::int64_t>(os, st.step);
    for (double v : {st.config.lr, st.config.beta1, st.config.beta2, st.config.eps, st.config.weight_decay})
      put<double>(os, v);
    for (const auto& m : st.m) put_floats(os, m);
    for (const auto& v : st.v) put_floats(os, v);
  }
  if (!os) throw IoError("FMCK1: write failed");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, ck);
}

Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FMCK", 4) != 0)
    throw FormatError("FMCK1: bad magic (expected \"FMCK\")");
  const auto version = get<std::uint16_t>(is, "version");
  if (version != kFmckVersion) throw FormatError("FMCK1: unsupported version " + std::to_string(version));
  const int classes = get<std::uint16_t>(is, "C");
  if (classes < 2) throw FormatError("FMCK1: header field C must be >= 2");

  Checkpoint ck;
  const auto method = get<std::uint8_t>(is, "method");
  if (method > static_cast<std::uint8_t>(Method::amd)) throw FormatError("FMCK1: invalid method field");
  const auto axis = get<std::uint8_t>(is, "axis");
  if (axis > 1) throw FormatError("FMCK1: invalid axis field");
  ck.spec.method = static_cast<Method>(method);
  ck.spec.axis = static_cast<Axis>(axis);
  ck.spec.factor = get<std::uint16_t>(is, "factor");
  ck.fft_size = get<std::uint16_t>(is, "fft_size");
  try {
    validate(ck.spec);
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("FMCK1: ") + e.what());
  }
  const auto flags = get<std::uint16_t>(is, "flags");
  const auto count = get<std::uint16_t>(is, "tensor count");

  ck.model = PnetLite<float>(classes, 0);
  auto params = ck.model.parameters();
  if (count != params.size()) throw FormatError("FMCK1: layer table has " + std::to_string(count) + " entries");
  for (auto& p : params) {
    const auto len = get<std::uint16_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("FMCK1: truncated layer name");
    if (name != p.name) throw FormatError("FMCK1: expected layer " + p.name + ", found " + name);
    const int rank = get<std::uint8_t>(is, "rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get<std::uint32_t>(is, "dim"));
    if (shape != p.tensor->shape)
      throw FormatError("FMCK1: layer " + name + " has shape " + shape_string(shape) + ", expected " +
                        shape_string(p.tensor->shape));
  }
  for (auto& p : params) get_floats(is, p.tensor->values, p.name);
  if (flags & 1) {
    AdamWState<float> st;
    st.step = get<std::int64_t>(is, "optimizer step");
    st.config.lr = get<double>(is, "lr");
    st.config.beta1 = get<double>(is, "beta1");
    st.config.beta2 = get<double>(is, "beta2");
    st.config.eps = get<double>(is, "eps");
    st.config.weight_decay = get<double>(is, "weight_decay");
    for (auto& p : params) get_floats(is, st.m.emplace_back(p.tensor->size()), p.name + " (m)");
    for (auto& p : params) get_floats(is, st.v.emplace_back(p.tensor->size()), p.name + " (v)");
    ck.optimizer = std::move(st);
  }
  return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace fmpnet
