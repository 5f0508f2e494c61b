#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xnet/optim.hpp"
#include "xnet/tensor.hpp"

namespace xnet {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

// Little-endian container:
//   "XNETCKPT" u32 version
//   str config_json, u64 epoch, u64 step, str rng_state
//   u32 count, count x {str name, u32 rank, u64 dims[rank], f32 data[]}
//   u64 adam_steps, f64 lr, count x {f32 m[]}, count x {f32 v[]}
// str = u64 length + bytes. Moments share the shapes of their parameters.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_json;
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;   // completed optimizer steps
  std::string rng_state;    // textual std::mt19937_64 state
  std::vector<NamedTensor> params;
  std::uint64_t adam_steps = 0;
  double lr = 0.0;
  std::vector<Tensor<float>> adam_m;
  std::vector<Tensor<float>> adam_v;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws std::runtime_error on a bad magic, version or truncated data.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies parameter values and Adam state out of / into live objects.
// restore() matches parameters by name and shape, in order.
template <typename T>
void capture(Checkpoint& ckpt, const std::vector<NamedParam<T>>& params, const Adam<T>* adam);
template <typename T>
void restore(const Checkpoint& ckpt, const std::vector<NamedParam<T>>& params, Adam<T>* adam);

}  // namespace xnet
