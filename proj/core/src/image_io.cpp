#include "misclass/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "misclass/common.hpp"

namespace misclass::image_io {

namespace {

png_uint_32 png_format_for(std::size_t channels) {
  if (channels == 1) return PNG_FORMAT_GRAY;
  if (channels == 3) return PNG_FORMAT_RGB;
  throw Error(Errc::invalid_argument, "png: unsupported channel count " + std::to_string(channels));
}

void check_shape(const Image8& image) {
  if (image.width == 0 || image.height == 0 ||
      image.data.size() != image.width * image.height * image.channels) {
    throw Error(Errc::shape_mismatch, "image buffer does not match its dimensions");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image8& image) {
  check_shape(image);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = png_format_for(image.channels);

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.data.data(), 0, nullptr)) {
    throw Error(Errc::io, std::string("png encode: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.data.data(), 0, nullptr)) {
    throw Error(Errc::io, std::string("png encode: ") + png.message);
  }
  out.resize(size);
  return out;
}

Image8 decode_png(std::span<const std::uint8_t> bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw Error(Errc::io, std::string("png decode: ") + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;

  Image8 out;
  out.width = png.width;
  out.height = png.height;
  out.channels = gray ? 1 : 3;
  out.data.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&png);
    throw Error(Errc::io, std::string("png decode: ") + png.message);
  }
  return out;
}

std::vector<std::uint8_t> encode_pnm(const Image8& image) {
  check_shape(image);
  if (image.channels != 1 && image.channels != 3) {
    throw Error(Errc::invalid_argument, "pnm: unsupported channel count");
  }
  std::ostringstream header;
  header << (image.channels == 3 ? "P6" : "P5") << "\n"
         << image.width << " " << image.height << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.insert(out.end(), image.data.begin(), image.data.end());
  return out;
}

Image8 decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_token = [&] {
    skip_space();
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    return tok;
  };
  auto read_number = [&] {
    const std::string tok = read_token();
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
      throw Error(Errc::io, "pnm: malformed header");
    }
    return static_cast<std::size_t>(std::stoul(tok));
  };

  const std::string magic = read_token();
  Image8 out;
  if (magic == "P6") {
    out.channels = 3;
  } else if (magic == "P5") {
    out.channels = 1;
  } else {
    throw Error(Errc::io, "pnm: unsupported magic '" + magic + "'");
  }
  out.width = read_number();
  out.height = read_number();
  if (read_number() != 255) throw Error(Errc::io, "pnm: only maxval 255 is supported");
  ++pos;  // single whitespace before raster
  const std::size_t n = out.width * out.height * out.channels;
  if (pos + n > bytes.size()) throw Error(Errc::truncated_file, "pnm raster is short");
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                  bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io, "write failed for '" + path.string() + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  static constexpr char table[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.push_back(table[(v >> 6) & 63]);
    out.push_back(table[v & 63]);
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    std::uint32_t v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.push_back(rest == 2 ? table[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

}  // namespace misclass::image_io
