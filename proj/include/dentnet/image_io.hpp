#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/tensor.hpp"

namespace dentnet {

// Binary PPM (P6) and PGM (P5) with maxval 255 only. Pixels map to doubles
// in [0,1] as byte/255, so 8-bit data round-trips exactly.

namespace pnm_detail {

inline int next_header_token(std::istream& is, std::string& token) {
  token.clear();
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      if (!token.empty()) return c;
    } else {
      token.push_back(static_cast<char>(c));
    }
    c = is.get();
  }
  return EOF;
}

inline std::size_t parse_dim(const std::string& token, const std::string& path,
                             const char* what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(token, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != token.size() || token.empty())
    throw std::runtime_error(path + ": bad " + what + " '" + token + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace pnm_detail

// channels = 0 keeps the file's native depth; a PGM read with channels = 3
// replicates gray into each channel. Narrowing a PPM is not supported.
inline Tensor read_image(const std::string& path, std::size_t channels = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path + ": cannot open");
  std::string tok;
  pnm_detail::next_header_token(is, tok);
  std::size_t native = 0;
  if (tok == "P6")
    native = 3;
  else if (tok == "P5")
    native = 1;
  else
    throw std::runtime_error(path + ": bad magic '" + tok + "', want P6 or P5");

  pnm_detail::next_header_token(is, tok);
  const std::size_t w = pnm_detail::parse_dim(tok, path, "width");
  pnm_detail::next_header_token(is, tok);
  const std::size_t h = pnm_detail::parse_dim(tok, path, "height");
  pnm_detail::next_header_token(is, tok);
  const std::size_t maxval = pnm_detail::parse_dim(tok, path, "maxval");
  if (maxval != 255)
    throw std::runtime_error(path + ": maxval " + std::to_string(maxval) + ", only 255 handled");
  if (w == 0 || h == 0) throw std::runtime_error(path + ": zero image dimension");

  std::vector<unsigned char> bytes(h * w * native);
  if (!is.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size())))
    throw std::runtime_error(path + ": truncated pixel payload");

  const std::size_t out_c = channels == 0 ? native : channels;
  if (out_c != native && !(native == 1 && out_c > 1))
    throw std::runtime_error(path + ": cannot read " + std::to_string(native) +
                             "-channel file as " + std::to_string(out_c) + " channels");
  Tensor img({h, w, out_c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < out_c; ++c) {
        const std::size_t src = native == 1 ? 0 : c;
        img(y, x, c) = static_cast<double>(bytes[(y * w + x) * native + src]) / 255.0;
      }
  return img;
}

inline unsigned char quantize_byte(double v) {
  if (v <= 0.0) return 0;
  if (v >= 1.0) return 255;
  return static_cast<unsigned char>(std::lround(v * 255.0));
}

// Writes P6 for 3-channel input, P5 for 1-channel.
inline void write_image(const std::string& path, const Tensor& img) {
  if (img.rank() != 3)
    throw std::invalid_argument("write_image: image must be HxWxC, got " +
                                shape_str(img.shape()));
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (c != 1 && c != 3)
    throw std::invalid_argument("write_image: " + std::to_string(c) +
                                " channels, only 1 or 3 writable");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os << (c == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(h * w * c);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize_byte(img[i]);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error(path + ": write failed");
}

}  // namespace dentnet
