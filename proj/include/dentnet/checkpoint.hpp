#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/network.hpp"

namespace dentnet {

// "DNET" checkpoint container. Little-endian throughout; doubles are stored
// as raw IEEE-754 bit patterns so a save/load round trip is bit exact.
//
//   magic "DNET", version u32
//   file kind u8: 'F' full network | 'S' pretraining stage
//   'F': input rank u32 + dims, class count u32
//   'S': stage index u32
//   layer count u32, then per layer: kind tag (u8 length + bytes),
//   kind-specific config, and each parameter tensor as rank u32 + dims +
//   f64 payload.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

inline void put_tag(std::ostream& os, const std::string& s) {
  os.put(static_cast<char>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_tag(std::istream& is) {
  const int n = is.get();
  if (n < 0) throw std::runtime_error("checkpoint: truncated file");
  std::string s(static_cast<std::size_t>(n), '\0');
  if (!is.read(s.data(), n)) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

inline void put_tensor(std::ostream& os, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(os, t[i]);
}

inline Tensor get_tensor(std::istream& is) {
  const std::uint32_t rank = get_u32(is);
  Shape shape(rank);
  for (auto& d : shape) d = get_u32(is);
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f64(is);
  return t;
}

inline void put_layer(std::ostream& os, Layer& layer) {
  put_tag(os, layer.kind());
  if (auto* conv = dynamic_cast<Conv2dLayer*>(&layer)) {
    put_u32(os, static_cast<std::uint32_t>(conv->kernel()));
    put_u32(os, static_cast<std::uint32_t>(conv->in_channels()));
    put_u32(os, static_cast<std::uint32_t>(conv->filters()));
    put_u32(os, static_cast<std::uint32_t>(conv->stride()));
    os.put(conv->padding() == Padding::Same ? 1 : 0);
  } else if (auto* pool = dynamic_cast<MaxPoolLayer*>(&layer)) {
    put_u32(os, static_cast<std::uint32_t>(pool->window()));
    put_u32(os, static_cast<std::uint32_t>(pool->stride()));
  } else if (auto* fc = dynamic_cast<DenseLayer*>(&layer)) {
    put_u32(os, static_cast<std::uint32_t>(fc->in_features()));
    put_u32(os, static_cast<std::uint32_t>(fc->out_features()));
  } else if (auto* drop = dynamic_cast<DropoutLayer*>(&layer)) {
    put_f64(os, drop->rate());
  }
  for (auto& p : layer.params()) put_tensor(os, *p.value);
}

inline std::unique_ptr<Layer> get_layer(std::istream& is) {
  const std::string kind = get_tag(is);
  std::unique_ptr<Layer> layer;
  if (kind == "conv") {
    const std::uint32_t k = get_u32(is), c = get_u32(is), f = get_u32(is), s = get_u32(is);
    const int pad = is.get();
    layer = std::make_unique<Conv2dLayer>(k, c, f, s, pad ? Padding::Same : Padding::Valid);
  } else if (kind == "maxpool") {
    const std::uint32_t w = get_u32(is), s = get_u32(is);
    layer = std::make_unique<MaxPoolLayer>(w, s);
  } else if (kind == "fc") {
    const std::uint32_t in = get_u32(is), out = get_u32(is);
    layer = std::make_unique<DenseLayer>(in, out);
  } else if (kind == "dropout") {
    layer = std::make_unique<DropoutLayer>(get_f64(is));
  } else if (kind == "relu") {
    layer = std::make_unique<ReluLayer>();
  } else if (kind == "softmax") {
    layer = std::make_unique<SoftmaxLayer>();
  } else {
    throw std::runtime_error("checkpoint: unknown layer kind '" + kind + "'");
  }
  for (auto& p : layer->params()) {
    Tensor t = get_tensor(is);
    if (!t.same_shape(*p.value))
      throw std::runtime_error("checkpoint: parameter shape " + shape_str(t.shape()) +
                               " does not match layer config " + shape_str(p.value->shape()));
    *p.value = std::move(t);
  }
  return layer;
}

inline void check_magic(std::istream& is, const char* path) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "DNET")
    throw std::runtime_error(std::string("checkpoint: bad magic in ") + path);
  const std::uint32_t version = get_u32(is);
  if (version != 1)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));
}

}  // namespace detail

inline void save_network(Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write("DNET", 4);
  detail::put_u32(os, 1);
  os.put('F');
  detail::put_u32(os, static_cast<std::uint32_t>(net.input_shape().size()));
  for (std::size_t d : net.input_shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
  detail::put_u32(os, static_cast<std::uint32_t>(net.class_count()));
  detail::put_u32(os, static_cast<std::uint32_t>(net.layers().size()));
  for (auto& l : net.layers()) detail::put_layer(os, *l);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Network load_network(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  detail::check_magic(is, path.c_str());
  const int kind = is.get();
  if (kind != 'F')
    throw std::runtime_error("checkpoint: " + path + " is not a full network file");
  const std::uint32_t rank = detail::get_u32(is);
  Shape input(rank);
  for (auto& d : input) d = detail::get_u32(is);
  const std::uint32_t classes = detail::get_u32(is);
  Network net(input, classes);
  const std::uint32_t n = detail::get_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) net.add(detail::get_layer(is));
  return net;
}

// Pretraining stage checkpoint: the stage's encoder convolution only.
struct StageCheckpoint {
  std::size_t stage_index = 0;
  std::unique_ptr<Conv2dLayer> conv;
};

inline void save_stage(Conv2dLayer& conv, std::size_t stage_index, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write("DNET", 4);
  detail::put_u32(os, 1);
  os.put('S');
  detail::put_u32(os, static_cast<std::uint32_t>(stage_index));
  detail::put_u32(os, 1);
  detail::put_layer(os, conv);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline StageCheckpoint load_stage(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  detail::check_magic(is, path.c_str());
  const int kind = is.get();
  if (kind != 'S') throw std::runtime_error("checkpoint: " + path + " is not a stage file");
  StageCheckpoint out;
  out.stage_index = detail::get_u32(is);
  const std::uint32_t n = detail::get_u32(is);
  if (n != 1) throw std::runtime_error("checkpoint: stage file must hold exactly one layer");
  auto layer = detail::get_layer(is);
  auto* conv = dynamic_cast<Conv2dLayer*>(layer.get());
  if (!conv) throw std::runtime_error("checkpoint: stage layer is not a convolution");
  layer.release();
  out.conv.reset(conv);
  return out;
}

}  // namespace dentnet
