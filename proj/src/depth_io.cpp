#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "pmslam/error.hpp"
#include "pmslam/provider.hpp"

namespace pmslam {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Grid<std::uint16_t> read_png16(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kIo, "libpng initialisation failed");
  }
  Grid<std::uint16_t> image;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kParse, "corrupt PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || (depth != 16 && depth != 8)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kParse, "expected single-channel 8/16-bit PNG: " + path.string());
  }
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  image = Grid<std::uint16_t>(height, width, 0);
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  for (int r = 0; r < height; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int c = 0; c < width; ++c) {
      if (depth == 16) {
        std::uint16_t v;
        std::memcpy(&v, row.data() + 2 * c, 2);
        image(r, c) = v;
      } else {
        image(r, c) = row[static_cast<std::size_t>(c)];
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

Grid<std::uint16_t> read_pgm16(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  auto skip_comments = [&in] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  in >> magic;
  skip_comments();
  in >> width;
  skip_comments();
  in >> height;
  skip_comments();
  in >> maxval;
  if (magic != "P5" || width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
    throw Error(ErrorCode::kParse, "malformed PGM header: " + path.string());
  }
  in.get();
  Grid<std::uint16_t> image(height, width, 0);
  const bool wide = maxval > 255;
  for (std::size_t i = 0; i < image.size(); ++i) {
    unsigned char b[2] = {0, 0};
    in.read(reinterpret_cast<char*>(b), wide ? 2 : 1);
    if (!in) throw Error(ErrorCode::kParse, "truncated PGM: " + path.string());
    image[i] = wide ? static_cast<std::uint16_t>((b[0] << 8) | b[1]) : b[0];
  }
  return image;
}

}  // namespace

Grid<std::uint16_t> read_depth_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw Error(ErrorCode::kIo, "cannot open depth image " + path.string());
  char head[2] = {0, 0};
  probe.read(head, 2);
  if (head[0] == 'P' && head[1] == '5') return read_pgm16(path);
  return read_png16(path);
}

void write_depth_png(const std::filesystem::path& path, const Grid<std::uint16_t>& image) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "PNG write failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()),
               16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(2 * static_cast<std::size_t>(image.width()));
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      const std::uint16_t v = image(r, c);
      row[2 * c] = static_cast<png_byte>(v >> 8);
      row[2 * c + 1] = static_cast<png_byte>(v & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_depth_pgm(const std::filesystem::path& path, const Grid<std::uint16_t>& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "P5\n" << image.width() << ' ' << image.height() << "\n65535\n";
  for (std::size_t i = 0; i < image.size(); ++i) {
    const unsigned char b[2] = {static_cast<unsigned char>(image[i] >> 8),
                                static_cast<unsigned char>(image[i] & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 2);
  }
}

}  // namespace pmslam
