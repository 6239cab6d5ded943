#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "octaquant/raster.hpp"

namespace octaquant::io {

std::vector<char> read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so a
/// reader never observes a partially written artifact.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

/// Called after every temporary file is complete and before the rename.
/// Tests use it to simulate a crash between the two steps.
void set_commit_hook(std::function<void(const std::filesystem::path& final_path)> hook);

/// 8-bit RGB raster, interleaved.
struct RgbImage {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> rgb;
  RgbImage() = default;
  RgbImage(int r, int c) : rows(r), cols(c), rgb(static_cast<std::size_t>(r) * c * 3, 0) {}
  std::uint8_t* at(int r, int c) { return rgb.data() + (static_cast<std::size_t>(r) * cols + c) * 3; }
  const std::uint8_t* at(int r, int c) const { return rgb.data() + (static_cast<std::size_t>(r) * cols + c) * 3; }
};

/// Netpbm (P2/P5 graymaps, P3/P6 pixmaps, maxval <= 255) or PNG, chosen by
/// signature. Color input is converted by Rec. 601 luminance and
/// `converted` is set. Malformed Netpbm input raises FormatError carrying
/// the byte offset.
GrayImage decode_image(std::span<const char> bytes, bool* converted = nullptr);
GrayImage load_image(const std::filesystem::path& path, bool* converted = nullptr);

std::vector<char> encode_pgm(const GrayImage& image);
std::vector<char> encode_ppm(const RgbImage& image);
std::vector<char> encode_png(const GrayImage& image);
std::vector<char> encode_png(const RgbImage& image);

/// The writers pick PNG for a ".png" extension and Netpbm otherwise.
void save_image(const GrayImage& image, const std::filesystem::path& path);

/// Masks are stored as 8-bit rasters with 0/255 pixels; loading accepts
/// any nonzero value as vessel.
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);
GrayImage mask_to_image(const BinaryMask& mask);
BinaryMask image_to_mask(const GrayImage& image);

void save_overlay(const RgbImage& overlay, const std::filesystem::path& path);

/// Minimal CSV table with a fixed header.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
  void add_row(std::vector<std::string> row);
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

void save_csv(const CsvTable& table, const std::filesystem::path& path);

/// Shortest round-trip decimal text for a double.
std::string format_number(double v);

}  // namespace octaquant::io
