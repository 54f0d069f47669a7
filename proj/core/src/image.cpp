#include "ipose/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "ipose/error.hpp"

namespace ipose {

namespace {

// Reads the next whitespace-separated header token, skipping '#' comments.
std::size_t header_value(std::istream& in, const std::string& path) {
  int ch = in.get();
  while (in) {
    if (ch == '#') {
      while (in && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  std::string token;
  while (in && std::isdigit(ch)) {
    token.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  if (token.empty() || !std::isspace(ch)) throw DataError("malformed netpbm header in '" + path + "'");
  return std::stoul(token);
}

}  // namespace

Image Image::blank(std::size_t width, std::size_t height, std::size_t channels, double value) {
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(width * height * channels, value);
  return img;
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image '" + path.string() + "'");
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw DataError("'" + path.string() + "' is not a binary PGM/PPM image");
  }
  const std::size_t channels = magic[1] == '5' ? 1 : 3;
  const std::size_t width = header_value(in, path.string());
  const std::size_t height = header_value(in, path.string());
  const std::size_t maxval = header_value(in, path.string());
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
    throw DataError("unsupported netpbm geometry in '" + path.string() + "'");
  }
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(width * height * channels * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw DataError("image '" + path.string() + "' is truncated");
  }
  Image img = Image::blank(width, height, channels);
  const auto scale = static_cast<double>(maxval);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = ((y * width + x) * channels + c) * bytes_per;
        const std::size_t v = bytes_per == 2 ? (std::size_t{raw[i]} << 8) | raw[i + 1] : raw[i];
        img.at(c, y, x) = static_cast<double>(v) / scale;
      }
    }
  }
  return img;
}

void write_image(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) {
    throw DataError("write_image: only 1 or 3 channels are supported");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << (image.channels == 1 ? "P5" : "P6") << '\n'
      << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.width * image.height * image.channels);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        raw[(y * image.width + x) * image.channels + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("failed writing image '" + path.string() + "'");
}

void quantize_8bit(Image& image) {
  for (auto& v : image.pixels) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
      }
    }
  }
  return out;
}

Image flip_vertical(const Image& image) {
  Image out = image;
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        out.at(c, y, x) = image.at(c, image.height - 1 - y, x);
      }
    }
  }
  return out;
}

Point scale_point(Point p, ImageSize from, ImageSize to) {
  const double sx = static_cast<double>(to.width) / static_cast<double>(from.width);
  const double sy = static_cast<double>(to.height) / static_cast<double>(from.height);
  return {(p.x + 0.5) * sx - 0.5, (p.y + 0.5) * sy - 0.5};
}

Image resize_bilinear(const Image& image, ImageSize size) {
  if (size.width == 0 || size.height == 0) throw ConfigError("resize: empty target size");
  Image out = Image::blank(size.width, size.height, image.channels);
  const double sx = static_cast<double>(image.width) / static_cast<double>(size.width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(size.height);
  const auto max_x = static_cast<double>(image.width - 1);
  const auto max_y = static_cast<double>(image.height - 1);
  for (std::size_t y = 0; y < size.height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < size.width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = image.at(c, y0, x0) * (1 - wx) + image.at(c, y0, x1) * wx;
        const double bottom = image.at(c, y1, x0) * (1 - wx) + image.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

Image convert_channels(const Image& image, std::size_t channels) {
  if (image.channels == channels) return image;
  Image out = Image::blank(image.width, image.height, channels);
  if (image.channels == 1 && channels == 3) {
    for (std::size_t c = 0; c < 3; ++c) {
      std::copy(image.pixels.begin(), image.pixels.end(),
                out.pixels.begin() + static_cast<std::ptrdiff_t>(c * image.width * image.height));
    }
    return out;
  }
  if (image.channels == 3 && channels == 1) {
    const std::size_t plane = image.width * image.height;
    for (std::size_t i = 0; i < plane; ++i) {
      out.pixels[i] = (image.pixels[i] + image.pixels[plane + i] + image.pixels[2 * plane + i]) / 3.0;
    }
    return out;
  }
  throw DataError("cannot convert " + std::to_string(image.channels) + "-channel image to " +
                  std::to_string(channels) + " channels");
}

void draw_disc(Image& image, Point centre, double radius, const Rgb& colour) {
  if (image.channels != 3) throw DataError("draw_disc: RGB image required");
  const auto lo_x = static_cast<long>(std::floor(centre.x - radius));
  const auto hi_x = static_cast<long>(std::ceil(centre.x + radius));
  const auto lo_y = static_cast<long>(std::floor(centre.y - radius));
  const auto hi_y = static_cast<long>(std::ceil(centre.y + radius));
  for (long y = lo_y; y <= hi_y; ++y) {
    for (long x = lo_x; x <= hi_x; ++x) {
      if (x < 0 || y < 0 || x >= static_cast<long>(image.width) || y >= static_cast<long>(image.height)) continue;
      const double dx = static_cast<double>(x) - centre.x, dy = static_cast<double>(y) - centre.y;
      if (dx * dx + dy * dy > radius * radius) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        image.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = colour[c];
      }
    }
  }
}

void draw_line(Image& image, Point a, Point b, const Rgb& colour) {
  if (image.channels != 3) throw DataError("draw_line: RGB image required");
  const double len = std::max(std::abs(b.x - a.x), std::abs(b.y - a.y));
  const auto steps = static_cast<long>(std::ceil(len)) + 1;
  for (long i = 0; i <= steps; ++i) {
    const double t = steps ? static_cast<double>(i) / static_cast<double>(steps) : 0.0;
    const auto x = std::lround(a.x + t * (b.x - a.x));
    const auto y = std::lround(a.y + t * (b.y - a.y));
    if (x < 0 || y < 0 || x >= static_cast<long>(image.width) || y >= static_cast<long>(image.height)) continue;
    for (std::size_t c = 0; c < 3; ++c) {
      image.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = colour[c];
    }
  }
}

}  // namespace ipose
