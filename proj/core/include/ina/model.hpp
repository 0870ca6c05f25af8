#pragma once
// Model intermediate representation: an ordered layer list with real-valued
// weight tensors, plus symmetric per-tensor int8 quantization and a simple
// on-disk format (JSON manifest + raw little-endian float64 blob).
//
// Layer conventions:
//   - activations move as (length, channels) maps; Dense applies per position
//   - Conv1D weights are stored pre-unrolled as (kernel*in_ch, out_ch) with
//     tap-major rows, i.e. already in matmul form
//   - Attention is single-head: WQ/WK/WV are (d_model, d_head); the block
//     computes softmax(Q K^T / sqrt(d_head)) V and yields (seq_len, d_head)
//   - no bias terms anywhere (all lowered tasks are pure matmuls)

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "ina/common.hpp"

namespace ina::model {

struct Dense {
  unsigned in = 0, out = 0;
};
struct Conv1D {
  unsigned kernel = 0, in_ch = 1, out_ch = 0, stride = 1;
  enum class Pad : std::uint8_t { Valid, Same } pad = Pad::Valid;
};
struct MaxPool1D {
  unsigned stride = 2;  // ceil mode: a trailing lone element pools with itself
};
enum class ActKind : std::uint8_t { Relu, Gelu, Softmax };
struct Activation {
  ActKind kind = ActKind::Relu;
};
struct Attention {
  unsigned seq_len = 0, d_model = 0, d_head = 0;
};
struct Flatten {};

using Layer = std::variant<Dense, Conv1D, MaxPool1D, Activation, Attention, Flatten>;

struct Tensor {
  std::vector<unsigned> shape;  // row-major
  std::vector<double> v;
  std::size_t elems() const;
};

struct QuantTensor {
  std::vector<unsigned> shape;
  std::vector<std::int8_t> v;
  double scale = 1.0;  // real = int8 * scale
};

struct ModelIR {
  std::string name;
  unsigned input_len = 1;
  unsigned input_ch = 1;
  std::vector<Layer> layers;
  /// One entry per parametric layer in order (Dense: 1, Attention: 3 as
  /// WQ, WK, WV; Conv1D: 1).
  std::vector<Tensor> weights;
};

struct ShapeInfo {
  unsigned len = 0, ch = 0;
};

/// Propagate (length, channels) through all layers, validating composition
/// and weight-tensor shapes. Returns the shape after each layer (index 0 =
/// input shape). Throws ShapeError / UnsupportedLayer.
std::vector<ShapeInfo> infer_shapes(const ModelIR& ir);

/// Number of weight tensors a layer consumes (0 for shape-only layers).
unsigned weight_count(const Layer& l);

/// Symmetric per-tensor quantization: scale = max|x|/127 (1 when all zero),
/// round half to even, clamp to [-127, 127].
QuantTensor quantize(const Tensor& t);

/// Closed-form architecture-class estimates (documentation/sanity only):
/// vector engines scale delay with log2(m/2)/n, systolic arrays with sqrt(m)/n.
double vector_delay_estimate(unsigned m, unsigned n);
double vector_throughput_estimate(unsigned m, unsigned n);
double systolic_delay_estimate(unsigned m, unsigned n);
double systolic_throughput_estimate(unsigned m, unsigned n);

// -- on-disk format ---------------------------------------------------------

/// Writes `<dir>/<name>.json` (manifest) and `<dir>/<name>.bin` (weight blob).
void save(const ModelIR& ir, const std::string& dir);

/// Loads a manifest (blob resolved relative to the manifest's directory).
ModelIR load(const std::string& manifest_path);

// -- seeded use-case model builders ----------------------------------------

/// Per-packet MLP on six extracted features: 6 -> 12 -> 6 -> 3 -> 2, relu
/// between hidden layers.
ModelIR make_usecase1(std::uint64_t seed);

/// Flow CNN on a 20-sample interval vector: three same-padded conv(3)+relu+
/// pool(2) stages (32 channels), flatten, 96 -> 128 -> 162.
ModelIR make_usecase2(std::uint64_t seed);

/// Flow transformer on a 15 x 16 payload matrix: single-head attention
/// (d_head 64), then per-token MLP 64 -> 128 (gelu) -> 64.
ModelIR make_usecase3(std::uint64_t seed);

}  // namespace ina::model
