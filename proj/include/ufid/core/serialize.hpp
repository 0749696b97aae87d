#pragma once

// Raw image byte format:
//
//   offset  size  field
//   0       4     magic "UFIM"
//   4       4     height    (uint32, little-endian)
//   8       4     width     (uint32, little-endian)
//   12      4     channels  (uint32, little-endian)
//   16      1     kind      (0 = pixel, 1 = noise)
//   17      3     reserved, zero
//   20      4*N   payload: float32 little-endian, row-major, channels innermost
//
// The wire protocol carries only the payload (base64) and puts shape and kind
// in JSON fields.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>

#include "ufid/core/error.hpp"
#include "ufid/core/image.hpp"

namespace ufid {

inline constexpr std::size_t kImageHeaderSize = 20;
inline constexpr std::string_view kImageMagic = "UFIM";

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string serialize_payload(const Image& img) {
  std::string out;
  out.reserve(img.size() * 4);
  for (float v : img.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Image deserialize_payload(std::string_view payload, Shape shape, ImageKind kind) {
  require(payload.size() == shape.size() * 4, ErrorCode::protocol,
          "payload has " + std::to_string(payload.size()) + " bytes, shape " + to_string(shape) + " needs " +
              std::to_string(shape.size() * 4));
  std::vector<float> data(shape.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<float>(detail::get_u32(payload, 4 * i));
  return Image(shape, kind, std::move(data));
}

inline std::string serialize_image(const Image& img) {
  std::string out(kImageMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(img.shape().height));
  detail::put_u32(out, static_cast<std::uint32_t>(img.shape().width));
  detail::put_u32(out, static_cast<std::uint32_t>(img.shape().channels));
  out.push_back(img.kind() == ImageKind::pixel ? 0 : 1);
  out.append(3, '\0');
  out += serialize_payload(img);
  return out;
}

inline Image deserialize_image(std::string_view bytes) {
  require(bytes.size() >= kImageHeaderSize && bytes.substr(0, 4) == kImageMagic, ErrorCode::protocol,
          "not a serialized image");
  const Shape shape{detail::get_u32(bytes, 4), detail::get_u32(bytes, 8), detail::get_u32(bytes, 12)};
  const auto kind_byte = static_cast<unsigned char>(bytes[16]);
  require(kind_byte <= 1, ErrorCode::protocol, "bad image kind byte");
  return deserialize_payload(bytes.substr(kImageHeaderSize), shape,
                             kind_byte == 0 ? ImageKind::pixel : ImageKind::noise);
}

inline Image read_image_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open image file " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_image(bytes);
}

inline void write_image_file(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::missing_file, "cannot write image file " + path);
  const std::string bytes = serialize_image(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// RFC 4648 base64 with padding.
inline std::string base64_encode(std::string_view in) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t n = (static_cast<unsigned char>(in[i]) << 16) |
                            (static_cast<unsigned char>(in[i + 1]) << 8) | static_cast<unsigned char>(in[i + 2]);
    out.push_back(kAlphabet[(n >> 18) & 63]);
    out.push_back(kAlphabet[(n >> 12) & 63]);
    out.push_back(kAlphabet[(n >> 6) & 63]);
    out.push_back(kAlphabet[n & 63]);
  }
  if (const std::size_t rest = in.size() - i; rest > 0) {
    std::uint32_t n = static_cast<unsigned char>(in[i]) << 16;
    if (rest == 2) n |= static_cast<unsigned char>(in[i + 1]) << 8;
    out.push_back(kAlphabet[(n >> 18) & 63]);
    out.push_back(kAlphabet[(n >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(n >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

inline std::string base64_decode(std::string_view in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  require(in.size() % 4 == 0, ErrorCode::protocol, "base64 length not a multiple of 4");
  std::string out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = in[i + k];
      if (c == '=' && i + 4 == in.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        require(pad == 0, ErrorCode::protocol, "base64 padding in the middle");
        v[k] = value(c);
        require(v[k] >= 0, ErrorCode::protocol, "invalid base64 character");
      }
    }
    const std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<char>((n >> 16) & 0xFF));
    if (pad < 2) out.push_back(static_cast<char>((n >> 8) & 0xFF));
    if (pad < 1) out.push_back(static_cast<char>(n & 0xFF));
  }
  return out;
}

}  // namespace ufid
