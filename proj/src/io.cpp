#include "octaquant/io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstring>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>

namespace octaquant::io {
namespace {

std::function<void(const std::filesystem::path&)>& commit_hook() {
  static std::function<void(const std::filesystem::path&)> hook;
  return hook;
}

class NetpbmParser {
 public:
  NetpbmParser(std::span<const char> bytes, std::size_t base = 0) : bytes_(bytes), base_(base) {}

  std::size_t offset() const { return pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("image parse error at byte " + std::to_string(base_ + pos_) + ": " + what);
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int integer(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') ++pos_;
    if (start == pos_) {
      pos_ = start;
      fail(std::string("expected ") + field);
    }
    int v = 0;
    const auto res = std::from_chars(bytes_.data() + start, bytes_.data() + pos_, v);
    if (res.ec != std::errc{}) {
      pos_ = start;
      fail(std::string(field) + " out of range");
    }
    return v;
  }

  void single_whitespace() {
    if (pos_ >= bytes_.size()) fail("missing whitespace after header");
    const char c = bytes_[pos_];
    if (!(c == ' ' || c == '\t' || c == '\n' || c == '\r')) fail("expected whitespace after header");
    ++pos_;
  }

  std::uint8_t raw_byte() {
    if (pos_ >= bytes_.size()) fail("pixel data truncated");
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  std::size_t size() const { return bytes_.size(); }

 private:
  std::span<const char> bytes_;
  std::size_t base_ = 0;
  std::size_t pos_ = 0;
};

std::uint8_t luminance(int r, int g, int b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::lround(std::min(255.0, std::max(0.0, y))));
}

std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  const std::filesystem::path parent = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  std::random_device rd;
  const std::filesystem::path tmp = parent / ("." + path.filename().string() + ".tmp" + std::to_string(rd()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for '" + tmp.string() + "'");
    }
  }
  if (commit_hook()) commit_hook()(path);
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename temporary file onto '" + path.string() + "'");
  }
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

void set_commit_hook(std::function<void(const std::filesystem::path&)> hook) { commit_hook() = std::move(hook); }

namespace {

bool is_png(std::span<const char> bytes) {
  static constexpr unsigned char kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kSig, 8) == 0;
}

bool wants_png(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

GrayImage decode_png(std::span<const char> bytes, bool* converted) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw FormatError(std::string("png parse error: ") + png.message);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int rows = static_cast<int>(png.height);
  const int cols = static_cast<int>(png.width);
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw FormatError("png decode error: " + msg);
  }
  GrayImage img(rows, cols);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = color ? luminance(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]) : buf[i];
  }
  if (converted) *converted = color;
  return img;
}

std::vector<char> encode_png(const std::uint8_t* pixels, int rows, int cols, bool color) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(cols);
  png.height = static_cast<png_uint_32>(rows);
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw IoError(std::string("png encode error: ") + png.message);
  }
  std::vector<char> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw IoError(std::string("png encode error: ") + png.message);
  }
  out.resize(size);
  return out;
}

}  // namespace

GrayImage decode_image(std::span<const char> bytes, bool* converted) {
  if (is_png(bytes)) return decode_png(bytes, converted);
  NetpbmParser p(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P') p.fail("missing Netpbm magic");
  const char kind = bytes[1];
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    p.fail(std::string("unsupported Netpbm type P") + kind);
  }
  NetpbmParser header(bytes.subspan(2), 2);
  const int width = header.integer("width");
  const int height = header.integer("height");
  const int maxval = header.integer("maxval");
  std::size_t pos = 2 + header.offset();
  auto fail_at = [&](std::size_t at, const std::string& what) -> void {
    throw FormatError("image parse error at byte " + std::to_string(at) + ": " + what);
  };
  if (width <= 0 || height <= 0) fail_at(pos, "non-positive extents");
  if (maxval <= 0 || maxval > 255) fail_at(pos, "maxval " + std::to_string(maxval) + " unsupported (1..255)");
  const bool color = kind == '3' || kind == '6';
  const bool binary = kind == '5' || kind == '6';
  const std::size_t channels = color ? 3 : 1;
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;

  std::vector<int> samples(count);
  NetpbmParser body(bytes.subspan(pos), pos);
  if (binary) {
    body.single_whitespace();
    if (body.size() - body.offset() < count) {
      fail_at(pos + body.size(), "pixel data truncated: need " + std::to_string(count) + " bytes, have " +
                                     std::to_string(body.size() - body.offset()));
    }
    for (int& s : samples) s = body.raw_byte();
  } else {
    for (int& s : samples) {
      s = body.integer("pixel value");
    }
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (samples[i] > maxval) fail_at(pos, "sample " + std::to_string(samples[i]) + " exceeds maxval");
    if (maxval != 255) samples[i] = static_cast<int>(std::lround(samples[i] * 255.0 / maxval));
  }

  GrayImage img(height, width);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = color ? luminance(samples[3 * i], samples[3 * i + 1], samples[3 * i + 2])
                   : static_cast<std::uint8_t>(samples[i]);
  }
  if (converted) *converted = color;
  return img;
}

GrayImage load_image(const std::filesystem::path& path, bool* converted) {
  const std::vector<char> bytes = read_file(path);
  try {
    return decode_image(bytes, converted);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<char> encode_pgm(const GrayImage& image) {
  const std::string header = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  std::vector<char> out(header.begin(), header.end());
  for (std::uint8_t v : image.pixels()) out.push_back(static_cast<char>(v));
  return out;
}

std::vector<char> encode_ppm(const RgbImage& image) {
  const std::string header = "P6\n" + std::to_string(image.cols) + " " + std::to_string(image.rows) + "\n255\n";
  std::vector<char> out(header.begin(), header.end());
  for (std::uint8_t v : image.rgb) out.push_back(static_cast<char>(v));
  return out;
}

std::vector<char> encode_png(const GrayImage& image) {
  return encode_png(image.pixels().data(), image.rows(), image.cols(), false);
}

std::vector<char> encode_png(const RgbImage& image) { return encode_png(image.rgb.data(), image.rows, image.cols, true); }

void save_image(const GrayImage& image, const std::filesystem::path& path) {
  write_file_atomic(path, wants_png(path) ? encode_png(image) : encode_pgm(image));
}

GrayImage mask_to_image(const BinaryMask& mask) {
  GrayImage img(mask.rows(), mask.cols());
  for (std::size_t i = 0; i < mask.size(); ++i) img[i] = mask[i] ? 255 : 0;
  return img;
}

BinaryMask image_to_mask(const GrayImage& image) {
  BinaryMask mask(image.rows(), image.cols());
  for (std::size_t i = 0; i < image.size(); ++i) mask[i] = image[i] ? 1 : 0;
  return mask;
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) { save_image(mask_to_image(mask), path); }

BinaryMask load_mask(const std::filesystem::path& path) { return image_to_mask(load_image(path)); }

void save_overlay(const RgbImage& overlay, const std::filesystem::path& path) {
  write_file_atomic(path, wants_png(path) ? encode_png(overlay) : encode_ppm(overlay));
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) {
    throw ShapeError("csv row has " + std::to_string(row.size()) + " cells, header has " +
                     std::to_string(header_.size()));
  }
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(cells[i]);
    }
    out += '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

void save_csv(const CsvTable& table, const std::filesystem::path& path) { write_text_atomic(path, table.str()); }

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace octaquant::io
