#pragma once

#include <array>
#include <bit>
#include <cctype>
#include <concepts>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "chipqa/core.hpp"

namespace chipqa {

static_assert(std::endian::native == std::endian::little, "chipqa assumes a little-endian host");

enum class PixelFormat { yuv420, yuv422, yuv444, gray };

inline const char* to_string(PixelFormat f) {
  switch (f) {
    case PixelFormat::yuv420: return "yuv420p";
    case PixelFormat::yuv422: return "yuv422p";
    case PixelFormat::yuv444: return "yuv444p";
    case PixelFormat::gray: return "gray";
  }
  return "?";
}

inline PixelFormat parse_pixel_format(const std::string& s) {
  if (s == "yuv420p" || s == "420" || s == "i420") return PixelFormat::yuv420;
  if (s == "yuv422p" || s == "422") return PixelFormat::yuv422;
  if (s == "yuv444p" || s == "444") return PixelFormat::yuv444;
  if (s == "gray" || s == "mono") return PixelFormat::gray;
  throw Error(ErrorCode::InvalidArgument, "unknown pixel format '" + s + "'");
}

struct Rational {
  int num = 30;
  int den = 1;
};

struct Geometry {
  int width = 0;
  int height = 0;
  PixelFormat format = PixelFormat::yuv420;
  int bit_depth = 8;
};

// One luma plane at time index `index`. Samples hold integer code values as doubles.
struct Frame {
  Image luma;
  int index = 0;
  int bit_depth = 8;

  int width() const { return luma.width(); }
  int height() const { return luma.height(); }
  double max_code() const { return std::ldexp(1.0, bit_depth) - 1.0; }
};

inline int bytes_per_sample(int bit_depth) { return bit_depth > 8 ? 2 : 1; }

inline std::size_t luma_bytes(const Geometry& g) {
  return static_cast<std::size_t>(g.width) * g.height * bytes_per_sample(g.bit_depth);
}

inline std::size_t frame_payload_bytes(const Geometry& g) {
  const std::size_t bps = bytes_per_sample(g.bit_depth);
  const std::size_t luma = static_cast<std::size_t>(g.width) * g.height;
  std::size_t cw = 0, ch = 0;
  switch (g.format) {
    case PixelFormat::yuv420: cw = (g.width + 1) / 2; ch = (g.height + 1) / 2; break;
    case PixelFormat::yuv422: cw = (g.width + 1) / 2; ch = g.height; break;
    case PixelFormat::yuv444: cw = g.width; ch = g.height; break;
    case PixelFormat::gray: break;
  }
  return (luma + 2 * cw * ch) * bps;
}

struct VideoSource {
  std::string path;
  Geometry geometry;
  Rational frame_rate;
  int frame_count = 0;
  bool is_y4m = false;
  std::size_t trailing_bytes = 0;      // bytes of an incomplete last frame, excluded from frame_count
  std::vector<std::uint64_t> offsets;  // byte offset of each frame's luma plane

  int width() const { return geometry.width; }
  int height() const { return geometry.height; }
  int bit_depth() const { return geometry.bit_depth; }
};

struct OpenOptions {
  std::optional<Geometry> explicit_geometry;
  bool strict = false;  // throw TruncatedPayload instead of silently dropping a partial frame
};

namespace detail {

inline void parse_y4m_colorspace(const std::string& tag, Geometry& g) {
  // C420jpeg, C420paldv, C420mpeg2, C420, C422, C444, C420p10, C444p10, Cmono ...
  g.bit_depth = 8;
  std::string base = tag;
  for (std::size_t p = 1; p + 1 < tag.size(); ++p) {
    if (tag[p] == 'p' && std::isdigit(static_cast<unsigned char>(tag[p + 1]))) {
      base = tag.substr(0, p);
      g.bit_depth = std::stoi(tag.substr(p + 1));
      break;
    }
  }
  if (base.rfind("420", 0) == 0) g.format = PixelFormat::yuv420;
  else if (base.rfind("422", 0) == 0) g.format = PixelFormat::yuv422;
  else if (base.rfind("444", 0) == 0) g.format = PixelFormat::yuv444;
  else if (base.rfind("mono", 0) == 0) {
    g.format = PixelFormat::gray;
    if (base.size() > 4) g.bit_depth = std::stoi(base.substr(4));
  } else {
    throw Error(ErrorCode::MalformedHeader, "unsupported Y4M colorspace C" + tag);
  }
  if (g.bit_depth != 8 && g.bit_depth != 10)
    throw Error(ErrorCode::MalformedHeader, "unsupported bit depth " + std::to_string(g.bit_depth));
}

inline void check_geometry(const Geometry& g) {
  if (g.width <= 0 || g.height <= 0)
    throw Error(ErrorCode::MalformedHeader, "non-positive frame dimensions");
  if (g.bit_depth != 8 && g.bit_depth != 10)
    throw Error(ErrorCode::InvalidArgument, "bit depth must be 8 or 10");
}

inline void finish_count(VideoSource& src, std::size_t partial, bool strict) {
  src.trailing_bytes = partial;
  if (partial != 0 && strict)
    throw Error(ErrorCode::TruncatedPayload, src.path + ": trailing partial frame of " +
                                                 std::to_string(partial) + " bytes (" +
                                                 std::to_string(src.frame_count) + " complete frames)");
}

}  // namespace detail

inline VideoSource open_source(const std::string& path, const OpenOptions& opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  const auto file_size = static_cast<std::uint64_t>(std::filesystem::file_size(path));

  VideoSource src;
  src.path = path;

  std::array<char, 10> magic{};
  in.read(magic.data(), magic.size());
  const bool y4m = in.gcount() == 10 && std::string(magic.data(), 9) == "YUV4MPEG2";

  if (!y4m) {
    // A file that starts like Y4M but has a damaged signature is a header error, not raw data.
    if (in.gcount() >= 4 && std::string(magic.data(), 4) == "YUV4")
      throw Error(ErrorCode::MalformedHeader, path + ": bad YUV4MPEG2 signature");
    if (!opts.explicit_geometry)
      throw Error(ErrorCode::GeometryRequired, path + ": raw YUV needs --width --height --pix-fmt --bit-depth");
    src.geometry = *opts.explicit_geometry;
    detail::check_geometry(src.geometry);
    const std::uint64_t bpf = frame_payload_bytes(src.geometry);
    src.frame_count = static_cast<int>(file_size / bpf);
    for (int t = 0; t < src.frame_count; ++t) src.offsets.push_back(bpf * t);
    detail::finish_count(src, static_cast<std::size_t>(file_size % bpf), opts.strict);
    return src;
  }

  src.is_y4m = true;
  if (opts.explicit_geometry) src.geometry = *opts.explicit_geometry;
  src.geometry.format = PixelFormat::yuv420;
  src.geometry.bit_depth = 8;
  in.seekg(0);
  std::string header;
  if (!std::getline(in, header)) throw Error(ErrorCode::MalformedHeader, path + ": missing header line");
  std::istringstream tokens(header);
  std::string tok;
  tokens >> tok;  // signature
  bool have_w = false, have_h = false;
  while (tokens >> tok) {
    const char key = tok[0];
    const std::string val = tok.substr(1);
    try {
      switch (key) {
        case 'W': src.geometry.width = std::stoi(val); have_w = true; break;
        case 'H': src.geometry.height = std::stoi(val); have_h = true; break;
        case 'F': {
          const auto colon = val.find(':');
          if (colon == std::string::npos) throw Error(ErrorCode::MalformedHeader, "bad frame rate " + val);
          src.frame_rate = {std::stoi(val.substr(0, colon)), std::stoi(val.substr(colon + 1))};
          break;
        }
        case 'C': detail::parse_y4m_colorspace(val, src.geometry); break;
        default: break;  // I, A, X: interlacing, aspect, extensions are ignored
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::MalformedHeader, path + ": bad header token '" + tok + "'");
    }
  }
  if (!have_w || !have_h) throw Error(ErrorCode::MalformedHeader, path + ": header lacks W or H");
  detail::check_geometry(src.geometry);

  const std::uint64_t bpf = frame_payload_bytes(src.geometry);
  std::uint64_t pos = static_cast<std::uint64_t>(in.tellg());
  std::string frame_header;
  while (pos < file_size) {
    in.seekg(static_cast<std::streamoff>(pos));
    if (!std::getline(in, frame_header) || frame_header.rfind("FRAME", 0) != 0) {
      if (in.eof()) {
        detail::finish_count(src, static_cast<std::size_t>(file_size - pos), opts.strict);
        return src;
      }
      throw Error(ErrorCode::MalformedHeader, path + ": expected FRAME marker at byte " + std::to_string(pos));
    }
    const std::uint64_t payload = pos + frame_header.size() + 1;
    if (payload + bpf > file_size) {
      detail::finish_count(src, static_cast<std::size_t>(file_size - pos), opts.strict);
      return src;
    }
    src.offsets.push_back(payload);
    ++src.frame_count;
    pos = payload + bpf;
  }
  detail::finish_count(src, 0, opts.strict);
  return src;
}

// Decodes the luma plane of frame t. Opens its own stream, so concurrent calls are safe.
inline Frame read_luma(const VideoSource& src, int t) {
  if (t < 0 || t >= src.frame_count)
    throw Error(ErrorCode::IndexOutOfRange,
                "frame " + std::to_string(t) + " outside [0, " + std::to_string(src.frame_count) + ")");
  std::ifstream in(src.path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + src.path + "'");
  in.seekg(static_cast<std::streamoff>(src.offsets[static_cast<std::size_t>(t)]));
  const Geometry& g = src.geometry;
  std::vector<unsigned char> buf(luma_bytes(g));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw Error(ErrorCode::TruncatedPayload, src.path + ": short read at frame " + std::to_string(t));

  Frame f{Image(g.width, g.height), t, g.bit_depth};
  auto& out = f.luma.storage();
  if (g.bit_depth == 8) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i];
  } else {
    const double max_code = f.max_code();
    for (std::size_t i = 0; i < out.size(); ++i) {
      const unsigned v = buf[2 * i] | (static_cast<unsigned>(buf[2 * i + 1]) << 8);
      out[i] = std::min(static_cast<double>(v), max_code);
    }
  }
  return f;
}

// Separable 5x5 Gaussian (sigma 1, unit sum) with reflect-101 borders, then keep even rows/cols.
inline Frame downsample2(const Frame& f) {
  const int w = f.width(), h = f.height();
  if (w < 2 || h < 2) throw Error(ErrorCode::FrameTooSmall, "downsample2 needs at least 2x2");
  std::array<double, 5> k{};
  double sum = 0.0;
  for (int i = -2; i <= 2; ++i) sum += k[i + 2] = std::exp(-0.5 * i * i);
  for (double& v : k) v /= sum;

  const int ow = w / 2, oh = h / 2;
  // Horizontal pass only at the even columns that survive decimation.
  Image tmp(ow, h);
  for (int y = 0; y < h; ++y) {
    const double* src = f.luma.row(y);
    double* dst = tmp.row(y);
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * src[reflect101(2 * x + i, w)];
      dst[x] = acc;
    }
  }
  Frame out{Image(ow, oh), f.index, f.bit_depth};
  for (int y = 0; y < oh; ++y) {
    double* dst = out.luma.row(y);
    for (int i = -2; i <= 2; ++i) {
      const double* src = tmp.row(reflect101(2 * y + i, h));
      const double kw = k[i + 2];
      for (int x = 0; x < ow; ++x) dst[x] += kw * src[x];
    }
  }
  return out;
}

// Sequential writer for Y4M or raw planar output. Chroma planes are written as mid-grey.
class VideoWriter {
 public:
  VideoWriter(const std::string& path, Geometry g, Rational rate, bool y4m)
      : out_(path, std::ios::binary), g_(g), y4m_(y4m) {
    if (!out_) throw Error(ErrorCode::IoError, "cannot create '" + path + "'");
    detail::check_geometry(g_);
    if (y4m_) {
      out_ << "YUV4MPEG2 W" << g.width << " H" << g.height << " F" << rate.num << ':' << rate.den
           << " Ip A1:1 C";
      switch (g.format) {
        case PixelFormat::yuv420: out_ << "420"; break;
        case PixelFormat::yuv422: out_ << "422"; break;
        case PixelFormat::yuv444: out_ << "444"; break;
        case PixelFormat::gray: out_ << "mono"; break;
      }
      if (g.bit_depth != 8) out_ << 'p' << g.bit_depth;
      else if (g.format == PixelFormat::yuv420) out_ << "jpeg";
      out_ << '\n';
    }
  }

  void write(const Frame& f) {
    if (f.width() != g_.width || f.height() != g_.height)
      throw Error(ErrorCode::DimensionMismatch, "frame size differs from writer geometry");
    if (y4m_) out_ << "FRAME\n";
    const double max_code = std::ldexp(1.0, g_.bit_depth) - 1.0;
    const int bps = bytes_per_sample(g_.bit_depth);
    std::vector<unsigned char> buf(frame_payload_bytes(g_));
    const auto& luma = f.luma.storage();
    for (std::size_t i = 0; i < luma.size(); ++i) {
      const auto v = static_cast<unsigned>(std::clamp(std::lround(luma[i]), 0L, static_cast<long>(max_code)));
      if (bps == 1) buf[i] = static_cast<unsigned char>(v);
      else {
        buf[2 * i] = static_cast<unsigned char>(v & 0xff);
        buf[2 * i + 1] = static_cast<unsigned char>(v >> 8);
      }
    }
    const unsigned mid = 1u << (g_.bit_depth - 1);
    for (std::size_t i = luma.size(); i < buf.size() / bps; ++i) {
      if (bps == 1) buf[i] = static_cast<unsigned char>(mid);
      else {
        buf[2 * i] = static_cast<unsigned char>(mid & 0xff);
        buf[2 * i + 1] = static_cast<unsigned char>(mid >> 8);
      }
    }
    out_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out_) throw Error(ErrorCode::IoError, "write failed");
  }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
  Geometry g_;
  bool y4m_;
};

inline void write_video(const std::string& path, const std::vector<Frame>& frames, Rational rate,
                        bool y4m, PixelFormat format = PixelFormat::yuv420) {
  if (frames.empty()) throw Error(ErrorCode::EmptyInput, "no frames to write");
  VideoWriter w(path, {frames[0].width(), frames[0].height(), format, frames[0].bit_depth}, rate, y4m);
  for (const auto& f : frames) w.write(f);
  w.close();
}

// Random-access luma source: anything with frame_count() and read(t).
template <typename S>
concept FrameSource = requires(const S& s, int t) {
  { s.frame_count() } -> std::convertible_to<int>;
  { s.read(t) } -> std::same_as<Frame>;
};

class FileFrames {
 public:
  explicit FileFrames(VideoSource src) : src_(std::move(src)) {}
  int frame_count() const { return src_.frame_count; }
  Frame read(int t) const { return read_luma(src_, t); }
  const VideoSource& source() const { return src_; }

 private:
  VideoSource src_;
};

class MemoryFrames {
 public:
  explicit MemoryFrames(std::vector<Frame> frames) : frames_(std::move(frames)) {}
  int frame_count() const { return static_cast<int>(frames_.size()); }
  Frame read(int t) const {
    if (t < 0 || t >= frame_count()) throw Error(ErrorCode::IndexOutOfRange, "frame " + std::to_string(t));
    return frames_[static_cast<std::size_t>(t)];
  }
  const std::vector<Frame>& frames() const { return frames_; }

 private:
  std::vector<Frame> frames_;
};

inline std::vector<Frame> read_all(const VideoSource& src) {
  std::vector<Frame> out;
  out.reserve(static_cast<std::size_t>(src.frame_count));
  for (int t = 0; t < src.frame_count; ++t) out.push_back(read_luma(src, t));
  return out;
}

}  // namespace chipqa
