#include "densepillars/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "densepillars/errors.hpp"

namespace dpp {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'P', 'P', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& p) : out_(p, std::ios::binary), path_(p) {
    if (!out_) throw IoError("cannot write checkpoint " + p.string());
  }
  template <typename V>
  void pod(const V& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint64_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    str(name);
    pod(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) pod(static_cast<std::int64_t>(d));
    out_.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("failed writing checkpoint " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& p) : in_(p, std::ios::binary), path_(p) {
    if (!in_) throw IoError("cannot open checkpoint " + p.string());
  }
  template <typename V>
  V pod() {
    V v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in_) fail("truncated");
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 32)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated");
    return s;
  }
  std::pair<std::string, Tensor<float>> tensor() {
    std::string name = str();
    const auto rank = pod<std::uint32_t>();
    if (rank > 8) fail("implausible tensor rank for " + name);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = pod<std::int64_t>();
      if (d < 0 || d > (1LL << 32)) fail("bad dimension for " + name);
      shape.push_back(d);
    }
    Tensor<float> t(shape);
    in_.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in_) fail("truncated tensor " + name);
    return {std::move(name), std::move(t)};
  }
  void header() {
    char magic[8];
    in_.read(magic, 8);
    if (!in_ || std::memcmp(magic, kMagic, 8) != 0) fail("not a checkpoint file");
    const auto version = pod<std::uint32_t>();
    if (version != kCheckpointVersion) fail("unsupported version " + std::to_string(version));
  }
  [[noreturn]] void fail(const std::string& why) { throw FormatError("checkpoint " + path_.string() + ": " + why); }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, ParameterSet<float>& params, const OptimizerState<float>& opt,
                     const std::string& config_text) {
  Writer w(path);
  w.pod(kMagic);
  w.pod(kCheckpointVersion);
  w.str(config_text);
  w.pod(static_cast<std::int64_t>(opt.step));
  w.pod(opt.options.lr);
  w.pod(opt.options.beta1);
  w.pod(opt.options.beta2);
  w.pod(opt.options.eps);
  w.pod(opt.options.weight_decay);
  const bool moments = !opt.first_moment.empty();
  if (moments && (opt.first_moment.size() != params.params.size() || opt.second_moment.size() != params.params.size()))
    throw InvariantError("checkpoint: optimizer state does not match the parameter list");
  const std::uint32_t count = static_cast<std::uint32_t>(params.params.size() * (moments ? 3 : 1) + params.buffers.size());
  w.pod(count);
  for (std::size_t i = 0; i < params.params.size(); ++i) {
    w.tensor("param:" + params.params[i].name, params.params[i].var.value());
    if (moments) {
      w.tensor("adam_m:" + params.params[i].name, opt.first_moment[i]);
      w.tensor("adam_v:" + params.params[i].name, opt.second_moment[i]);
    }
  }
  for (const auto& b : params.buffers) w.tensor("buffer:" + b.name, *b.tensor);
  w.finish();
}

std::string read_checkpoint_config(const std::filesystem::path& path) {
  Reader r(path);
  r.header();
  return r.str();
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, ParameterSet<float>& params) {
  Reader r(path);
  r.header();
  LoadedCheckpoint out;
  out.config_text = r.str();
  out.optimizer.step = r.pod<std::int64_t>();
  out.optimizer.options.lr = r.pod<double>();
  out.optimizer.options.beta1 = r.pod<double>();
  out.optimizer.options.beta2 = r.pod<double>();
  out.optimizer.options.eps = r.pod<double>();
  out.optimizer.options.weight_decay = r.pod<double>();
  const auto count = r.pod<std::uint32_t>();
  std::map<std::string, Tensor<float>> stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    if (!stored.emplace(std::move(name), std::move(t)).second) r.fail("duplicate entry");
  }
  auto take = [&](const std::string& key, const Shape& shape) -> Tensor<float>& {
    auto it = stored.find(key);
    if (it == stored.end()) r.fail("missing " + key);
    if (it->second.shape() != shape)
      r.fail(key + " has shape " + shape_str(it->second.shape()) + ", model expects " + shape_str(shape));
    return it->second;
  };
  const bool moments = stored.count("adam_m:" + (params.params.empty() ? std::string() : params.params[0].name)) > 0;
  for (auto& p : params.params) {
    p.var.mutable_value() = take("param:" + p.name, p.var.shape());
    if (moments) {
      out.optimizer.first_moment.push_back(take("adam_m:" + p.name, p.var.shape()));
      out.optimizer.second_moment.push_back(take("adam_v:" + p.name, p.var.shape()));
    }
  }
  for (auto& b : params.buffers) *b.tensor = take("buffer:" + b.name, b.tensor->shape());
  return out;
}

}  // namespace dpp
