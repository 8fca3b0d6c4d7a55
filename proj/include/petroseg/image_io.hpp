#pragma once

#include <png.h>
#include <tiffio.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "petroseg/raster.hpp"

namespace petroseg {

enum class MaskMode { Indexed, Palette };

/// Raw 8-bit image as decoded from disk.
struct DecodedImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1, 3 or 4
  std::vector<std::uint8_t> bytes;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

struct PngHeader {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int bit_depth = 0;
  int color_type = 0;
};

// Kept free of objects with non-trivial destructors between setjmp and the
// libpng calls so a longjmp out of an error callback is well-defined.
inline bool png_decode(std::FILE* fp, PngHeader& header,
                       std::vector<std::uint8_t>& out, std::string& err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "libpng init failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    err = "libpng init failed";
    return false;
  }
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    err = "corrupt or truncated PNG";
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_get_IHDR(png, info, &header.width, &header.height, &header.bit_depth,
               &header.color_type, nullptr, nullptr, nullptr);
  if (header.bit_depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    return true;  // caller reports the unsupported depth
  }
  const png_size_t rowbytes = png_get_rowbytes(png, info);
  out.assign(rowbytes * header.height, 0);
  rows.resize(header.height);
  for (png_uint_32 y = 0; y < header.height; ++y) rows[y] = out.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline DecodedImage read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw input_error("cannot open image file '" + path.string() + "'");
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw input_error("'" + path.string() + "' is not a PNG file");
  }
  std::rewind(fp.get());
  PngHeader header;
  std::vector<std::uint8_t> bytes;
  std::string err;
  if (!png_decode(fp.get(), header, bytes, err)) {
    throw input_error("'" + path.string() + "': " + err);
  }
  if (header.bit_depth != 8) {
    throw input_error("'" + path.string() + "': unsupported color model (" +
                      std::to_string(header.bit_depth) + "-bit samples)");
  }
  DecodedImage img;
  img.width = static_cast<int>(header.width);
  img.height = static_cast<int>(header.height);
  switch (header.color_type) {
    case PNG_COLOR_TYPE_GRAY:
    case PNG_COLOR_TYPE_PALETTE:
      img.channels = 1;
      break;
    case PNG_COLOR_TYPE_RGB:
      img.channels = 3;
      break;
    case PNG_COLOR_TYPE_RGB_ALPHA:
      img.channels = 4;
      break;
    default:
      throw input_error("'" + path.string() + "': unsupported color model (PNG color type " +
                        std::to_string(header.color_type) + ")");
  }
  img.bytes = std::move(bytes);
  return img;
}

struct TiffCloser {
  void operator()(TIFF* t) const {
    if (t) TIFFClose(t);
  }
};

inline DecodedImage read_tiff(const std::filesystem::path& path) {
  TIFFSetWarningHandler(nullptr);
  TIFFSetErrorHandler(nullptr);
  std::unique_ptr<TIFF, TiffCloser> tif(TIFFOpen(path.string().c_str(), "r"));
  if (!tif) throw input_error("cannot open TIFF file '" + path.string() + "'");
  std::uint32_t w = 0, h = 0;
  std::uint16_t bits = 0, spp = 0, photometric = 0, planar = PLANARCONFIG_CONTIG;
  TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &w);
  TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &h);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_BITSPERSAMPLE, &bits);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &spp);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_PLANARCONFIG, &planar);
  TIFFGetField(tif.get(), TIFFTAG_PHOTOMETRIC, &photometric);
  if (bits != 8) {
    throw input_error("'" + path.string() + "': unsupported color model (" +
                      std::to_string(bits) + "-bit samples)");
  }
  const bool gray = (photometric == PHOTOMETRIC_MINISBLACK && spp == 1);
  const bool rgb = (photometric == PHOTOMETRIC_RGB && (spp == 3 || spp == 4));
  if (!(gray || rgb) || planar != PLANARCONFIG_CONTIG) {
    throw input_error("'" + path.string() + "': unsupported color model");
  }
  DecodedImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.channels = spp;
  img.bytes.resize(static_cast<std::size_t>(w) * h * spp);
  const tmsize_t line = TIFFScanlineSize(tif.get());
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(line));
  for (std::uint32_t y = 0; y < h; ++y) {
    if (TIFFReadScanline(tif.get(), buf.data(), y, 0) < 0) {
      throw input_error("'" + path.string() + "': corrupt TIFF scanline " + std::to_string(y));
    }
    std::memcpy(img.bytes.data() + static_cast<std::size_t>(y) * w * spp, buf.data(),
                static_cast<std::size_t>(w) * spp);
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, int width, int height,
                      int channels, const std::uint8_t* data) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, data, 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw input_error("cannot write '" + path.string() + "': " + msg);
  }
}

}  // namespace detail

inline DecodedImage read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw input_error("file not found: '" + path.string() + "'");
  }
  const auto ext = detail::lower_extension(path);
  if (ext == ".tif" || ext == ".tiff") return detail::read_tiff(path);
  return detail::read_png(path);
}

/// Loads an 8-bit RGB or RGBA image (alpha dropped) as a Scan.
inline Scan load_scan(const std::filesystem::path& path, double pitch_um = kDefaultPitchUm) {
  if (!(pitch_um > 0.0)) {
    throw input_error("pixel pitch must be positive, got " + std::to_string(pitch_um));
  }
  DecodedImage img = read_image(path);
  if (img.channels != 3 && img.channels != 4) {
    throw input_error("'" + path.string() + "': unsupported color model (scans must be RGB)");
  }
  std::vector<Rgb> px(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const std::uint8_t* p = img.bytes.data() + i * img.channels;
    px[i] = {p[0], p[1], p[2]};
  }
  return Scan(path.stem().string(), img.width, img.height, pitch_um, std::move(px));
}

/// Loads a single-channel mask whose byte values are phase codes.
inline PhaseMask load_mask(const std::filesystem::path& path, double pitch_um = kDefaultPitchUm) {
  DecodedImage img = read_image(path);
  if (img.channels != 1) {
    throw input_error("'" + path.string() +
                      "': unsupported color model (masks must be single-channel)");
  }
  std::vector<PhaseLabel> labels(img.bytes.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::uint8_t code = img.bytes[i];
    if (!is_valid_label_code(code)) {
      throw input_error("'" + path.string() + "': invalid phase code " +
                        std::to_string(code) + " at pixel (" +
                        std::to_string(i % img.width) + ", " +
                        std::to_string(i / img.width) + ")");
    }
    labels[i] = static_cast<PhaseLabel>(code);
  }
  return PhaseMask(img.width, img.height, pitch_um, std::move(labels));
}

/// Inverse palette: re-ingests a palette render. Unknown colours are errors.
inline PhaseMask load_palette_mask(const std::filesystem::path& path,
                                   double pitch_um = kDefaultPitchUm) {
  DecodedImage img = read_image(path);
  if (img.channels != 3 && img.channels != 4) {
    throw input_error("'" + path.string() + "': palette masks must be RGB");
  }
  std::vector<PhaseLabel> labels(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::uint8_t* p = img.bytes.data() + i * img.channels;
    auto l = label_from_palette({p[0], p[1], p[2]});
    if (!l) {
      throw input_error("'" + path.string() + "': colour outside the phase palette at pixel (" +
                        std::to_string(i % img.width) + ", " + std::to_string(i / img.width) + ")");
    }
    labels[i] = *l;
  }
  return PhaseMask(img.width, img.height, pitch_um, std::move(labels));
}

inline std::vector<std::uint8_t> render_palette(const PhaseMask& mask) {
  std::vector<std::uint8_t> rgb;
  rgb.reserve(mask.labels().size() * 3);
  for (PhaseLabel l : mask.labels()) {
    Rgb c = palette_color(l);
    rgb.insert(rgb.end(), {c.r, c.g, c.b});
  }
  return rgb;
}

inline void save_mask(const PhaseMask& mask, const std::filesystem::path& path,
                      MaskMode mode = MaskMode::Indexed) {
  if (mode == MaskMode::Indexed) {
    std::vector<std::uint8_t> codes(mask.labels().size());
    for (std::size_t i = 0; i < codes.size(); ++i) {
      codes[i] = static_cast<std::uint8_t>(mask.labels()[i]);
    }
    detail::write_png(path, mask.width(), mask.height(), 1, codes.data());
  } else {
    auto rgb = render_palette(mask);
    detail::write_png(path, mask.width(), mask.height(), 3, rgb.data());
  }
}

inline void save_scan(const Scan& scan, const std::filesystem::path& path) {
  static_assert(sizeof(Rgb) == 3);
  detail::write_png(path, scan.width(), scan.height(), 3,
                    reinterpret_cast<const std::uint8_t*>(scan.pixels().data()));
}

/// Lossless PNG encoding into memory (gray or RGB).
inline std::vector<std::uint8_t> encode_png(int width, int height, int channels,
                                            const std::uint8_t* data) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, data, 0, nullptr)) {
    throw internal_error(std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, data, 0, nullptr)) {
    throw internal_error(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

}  // namespace petroseg
