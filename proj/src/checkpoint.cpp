#include "xnet/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace xnet {

namespace {

constexpr char kMagic[8] = {'X', 'N', 'E', 'T', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <typename U>
  void uint(U v) {
    for (std::size_t b = 0; b < sizeof(U); ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    uint<std::uint64_t>(s.size());
    out_ += s;
  }
  void floats(const Tensor<float>& t) {
    for (float v : t.data()) f32(v);
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(static_cast<unsigned char>(in_[pos_ + b])) << (8 * b);
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str() {
    const auto n = uint<std::uint64_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Tensor<float> floats(const Shape& shape) {
    Tensor<float> t(shape);
    need(t.numel() * 4);
    for (float& v : t.data()) v = f32();
    return t;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  if (c.adam_m.size() != c.params.size() || c.adam_v.size() != c.params.size()) {
    throw std::invalid_argument("checkpoint optimizer state does not match its parameters");
  }
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.uint(Checkpoint::kVersion);
  w.str(c.config_json);
  w.uint(c.epoch);
  w.uint(c.step);
  w.str(c.rng_state);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(c.params.size()));
  for (const NamedTensor& p : c.params) {
    w.str(p.name);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.uint<std::uint64_t>(d);
    w.floats(p.value);
  }
  w.uint(c.adam_steps);
  w.f64(c.lr);
  for (std::size_t k = 0; k < c.params.size(); ++k) {
    require_shape(c.adam_m[k].shape(), c.params[k].value.shape(), "checkpoint adam m");
    w.floats(c.adam_m[k]);
  }
  for (std::size_t k = 0; k < c.params.size(); ++k) {
    require_shape(c.adam_v[k].shape(), c.params[k].value.shape(), "checkpoint adam v");
    w.floats(c.adam_v[k]);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint (bad magic)");
  }
  Reader r(bytes);
  for (std::size_t k = 0; k < sizeof(kMagic); ++k) r.uint<std::uint8_t>();
  const auto version = r.uint<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.config_json = r.str();
  c.epoch = r.uint<std::uint64_t>();
  c.step = r.uint<std::uint64_t>();
  c.rng_state = r.str();
  const auto count = r.uint<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor p;
    p.name = r.str();
    const auto rank = r.uint<std::uint32_t>();
    if (rank > 8) throw std::runtime_error("checkpoint tensor " + p.name + " has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.uint<std::uint64_t>();
    p.value = r.floats(shape);
    c.params.push_back(std::move(p));
  }
  c.adam_steps = r.uint<std::uint64_t>();
  c.lr = r.f64();
  for (const NamedTensor& p : c.params) c.adam_m.push_back(r.floats(p.value.shape()));
  for (const NamedTensor& p : c.params) c.adam_v.push_back(r.floats(p.value.shape()));
  if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot move checkpoint to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

template <typename T>
void capture(Checkpoint& ckpt, const std::vector<NamedParam<T>>& params, const Adam<T>* adam) {
  ckpt.params.clear();
  ckpt.adam_m.clear();
  ckpt.adam_v.clear();
  for (const NamedParam<T>& p : params) ckpt.params.push_back({p.name, p.var.value().template cast<float>()});
  if (adam) {
    ckpt.adam_steps = adam->steps();
    ckpt.lr = adam->lr();
    for (const auto& m : adam->first_moments()) ckpt.adam_m.push_back(m.template cast<float>());
    for (const auto& v : adam->second_moments()) ckpt.adam_v.push_back(v.template cast<float>());
  } else {
    ckpt.adam_steps = 0;
    for (const NamedParam<T>& p : params) {
      ckpt.adam_m.emplace_back(p.var.shape());
      ckpt.adam_v.emplace_back(p.var.shape());
    }
  }
}

template <typename T>
void restore(const Checkpoint& ckpt, const std::vector<NamedParam<T>>& params, Adam<T>* adam) {
  if (ckpt.params.size() != params.size()) {
    throw ShapeError("params", "checkpoint has " + std::to_string(ckpt.params.size()) + " tensors, model has " +
                                   std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (ckpt.params[k].name != params[k].name) {
      throw ShapeError("params", "checkpoint tensor " + std::to_string(k) + " is '" + ckpt.params[k].name +
                                     "', model expects '" + params[k].name + "'");
    }
    require_shape(ckpt.params[k].value.shape(), params[k].var.shape(), "checkpoint tensor " + params[k].name);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var<T> var = params[k].var;
    var.mutable_value() = ckpt.params[k].value.template cast<T>();
  }
  if (adam) {
    std::vector<Tensor<T>> m, v;
    for (const auto& t : ckpt.adam_m) m.push_back(t.template cast<T>());
    for (const auto& t : ckpt.adam_v) v.push_back(t.template cast<T>());
    adam->load_state(ckpt.adam_steps, std::move(m), std::move(v));
    adam->set_lr(ckpt.lr);
  }
}

template void capture<float>(Checkpoint&, const std::vector<NamedParam<float>>&, const Adam<float>*);
template void capture<double>(Checkpoint&, const std::vector<NamedParam<double>>&, const Adam<double>*);
template void restore<float>(const Checkpoint&, const std::vector<NamedParam<float>>&, Adam<float>*);
template void restore<double>(const Checkpoint&, const std::vector<NamedParam<double>>&, Adam<double>*);

}  // namespace xnet
