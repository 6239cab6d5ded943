#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "octaquant/training.hpp"

namespace octaquant::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitCompute = 4,
};

/// Training manifest: one item per line, "image mask tag", whitespace
/// separated, '#' starts a comment. Relative paths resolve against the
/// manifest's directory.
struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path mask;
  training::SourceTag tag = training::SourceTag::manual;
};
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
/// Paths are written relative to the manifest directory when possible.
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);
training::LabeledSet load_labeled_set(std::span<const ManifestEntry> entries);

/// Pair manifest for pseudo-labeling: "single averaged" per line.
struct PairEntry {
  std::filesystem::path single;
  std::filesystem::path averaged;
};
std::vector<PairEntry> read_pair_manifest(const std::filesystem::path& path);
void write_pair_manifest(const std::filesystem::path& path, std::span<const PairEntry> entries);

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. The first failing
/// index's exception is rethrown after all workers finish.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

/// Entry point without the program name. Writes results to `out`, logs and
/// errors to `err`, and returns an ExitCode.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace octaquant::cli
