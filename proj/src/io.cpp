#include "flowforge/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace flowforge {

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename V>
V take(const std::vector<char>& buf, std::size_t& at, const std::filesystem::path& path, const char* what) {
  if (buf.size() - at < sizeof(V) || at > buf.size()) {
    std::ostringstream msg;
    msg << path.string() << ": truncated " << what << " at byte offset " << at << " (file has " << buf.size()
        << " bytes)";
    throw IoError(msg.str());
  }
  V v;
  std::memcpy(&v, buf.data() + at, sizeof(V));
  at += sizeof(V);
  return v;
}

}  // namespace

void write_flo(const std::filesystem::path& path, const Tensor<float>& flow) {
  const Shape s = flow.shape();
  if (s.n != 1 || s.c != 2) throw ShapeError("write_flo: expected (1, 2, H, W), got " + s.str());
  std::vector<float> body(2 * s.plane());
  const float* u = flow.plane(0, 0);
  const float* v = flow.plane(0, 1);
  for (std::size_t i = 0; i < s.plane(); ++i) {
    body[2 * i] = u[i];
    body[2 * i + 1] = v[i];
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::int32_t w = s.w, h = s.h;
  out.write(reinterpret_cast<const char*>(&kFloMagic), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size() * 4));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Tensor<float> read_flo(const std::filesystem::path& path) {
  const std::vector<char> buf = slurp(path);
  std::size_t at = 0;
  const float magic = take<float>(buf, at, path, "header");
  if (magic != kFloMagic) {
    std::ostringstream msg;
    msg << path.string() << ": bad magic " << magic << " at byte offset 0 (expected " << kFloMagic << ")";
    throw IoError(msg.str());
  }
  const auto w = take<std::int32_t>(buf, at, path, "width");
  const auto h = take<std::int32_t>(buf, at, path, "height");
  if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16)) {
    std::ostringstream msg;
    msg << path.string() << ": implausible size " << w << "x" << h << " at byte offset 4";
    throw IoError(msg.str());
  }
  Tensor<float> flow(Shape{1, 2, h, w});
  float* u = flow.plane(0, 0);
  float* v = flow.plane(0, 1);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (buf.size() - at < 8 * n) {
    std::ostringstream msg;
    msg << path.string() << ": truncated flow data at byte offset " << buf.size() << " (expected "
        << at + 8 * n << " bytes)";
    throw IoError(msg.str());
  }
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = take<float>(buf, at, path, "flow data");
    v[i] = take<float>(buf, at, path, "flow data");
  }
  if (at != buf.size()) {
    std::ostringstream msg;
    msg << path.string() << ": " << buf.size() - at << " trailing bytes at byte offset " << at;
    throw IoError(msg.str());
  }
  return flow;
}

const std::vector<std::array<std::uint8_t, 3>>& color_wheel() {
  static const std::vector<std::array<std::uint8_t, 3>> wheel = [] {
    constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<std::uint8_t, 3>> w;
    auto ramp = [](int i, int n) { return static_cast<std::uint8_t>(255 * i / n); };
    for (int i = 0; i < RY; ++i) w.push_back({255, ramp(i, RY), 0});
    for (int i = 0; i < YG; ++i) w.push_back({static_cast<std::uint8_t>(255 - ramp(i, YG)), 255, 0});
    for (int i = 0; i < GC; ++i) w.push_back({0, 255, ramp(i, GC)});
    for (int i = 0; i < CB; ++i) w.push_back({0, static_cast<std::uint8_t>(255 - ramp(i, CB)), 255});
    for (int i = 0; i < BM; ++i) w.push_back({ramp(i, BM), 0, 255});
    for (int i = 0; i < MR; ++i) w.push_back({255, 0, static_cast<std::uint8_t>(255 - ramp(i, MR))});
    return w;
  }();
  return wheel;
}

std::vector<std::uint8_t> flow_to_rgb(const Tensor<float>& flow, double max_mag) {
  const Shape s = flow.shape();
  if (s.n != 1 || s.c != 2) throw ShapeError("flow_to_rgb: expected (1, 2, H, W), got " + s.str());
  const float* u = flow.plane(0, 0);
  const float* v = flow.plane(0, 1);
  const std::size_t n = s.plane();
  auto unknown = [](float a, float b) { return !std::isfinite(a) || !std::isfinite(b) || std::abs(a) > 1e9f || std::abs(b) > 1e9f; };

  if (max_mag <= 0) {
    std::vector<double> mags;
    mags.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      if (!unknown(u[i], v[i])) mags.push_back(std::hypot(static_cast<double>(u[i]), static_cast<double>(v[i])));
    if (!mags.empty()) {
      const auto k = static_cast<std::ptrdiff_t>(0.99 * static_cast<double>(mags.size() - 1));
      std::nth_element(mags.begin(), mags.begin() + k, mags.end());
      max_mag = mags[k];
    }
    if (max_mag <= 0) max_mag = 1;
  }

  const auto& wheel = color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  std::vector<std::uint8_t> rgb(3 * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (unknown(u[i], v[i])) continue;
    const double fx = u[i] / max_mag, fy = v[i] / max_mag;
    const double rad = std::sqrt(fx * fx + fy * fy);
    const double a = std::atan2(-fy, -fx) / M_PI;
    const double fk = (a + 1.0) / 2.0 * (ncols - 1);
    const int k0 = static_cast<int>(fk);
    const int k1 = (k0 + 1) % ncols;
    const double f = fk - k0;
    for (int c = 0; c < 3; ++c) {
      double col = (1 - f) * wheel[k0][c] / 255.0 + f * wheel[k1][c] / 255.0;
      if (rad <= 1)
        col = 1 - rad * (1 - col);
      else
        col *= 0.75;
      rgb[3 * i + c] = static_cast<std::uint8_t>(255.0 * col);
    }
  }
  return rgb;
}

namespace {

void write_png_raw(const std::filesystem::path& path, const std::uint8_t* pixels, int height, int width,
                   bool color) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, pixels, 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot write PNG '" + path.string() + "': " + msg);
  }
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) throw ShapeError("write_png: expected (1, 1|3, H, W), got " + s.str());
  std::vector<std::uint8_t> px(s.plane() * s.c);
  for (int c = 0; c < s.c; ++c) {
    const float* p = image.plane(0, c);
    for (std::size_t i = 0; i < s.plane(); ++i) px[i * s.c + c] = to_byte(p[i]);
  }
  write_png_raw(path, px.data(), s.h, s.w, s.c == 3);
}

void write_png_rgb(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, int height, int width) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3)
    throw ShapeError("write_png_rgb: buffer size does not match " + std::to_string(width) + "x" +
                     std::to_string(height));
  write_png_raw(path, rgb.data(), height, width, true);
}

void write_flow_png(const std::filesystem::path& path, const Tensor<float>& flow, double max_mag) {
  write_png_rgb(path, flow_to_rgb(flow, max_mag), flow.shape().h, flow.shape().w);
}

void write_mask_png(const std::filesystem::path& path, const Tensor<float>& mask) {
  if (mask.shape().c != 1) throw ShapeError("write_mask_png: expected one channel, got " + mask.shape().str());
  write_png(path, mask);
}

Tensor<float> read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw IoError("cannot read PNG '" + path.string() + "': " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  Tensor<float> out(Shape{1, 3, h, w});
  for (int c = 0; c < 3; ++c) {
    float* p = out.plane(0, c);
    for (std::size_t i = 0; i < out.shape().plane(); ++i) p[i] = px[3 * i + c] / 255.0f;
  }
  return out;
}

}  // namespace flowforge
