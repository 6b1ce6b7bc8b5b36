#pragma once

#include <filesystem>
#include <stdexcept>

#include "decoysh/shell/vfs.hpp"

namespace decoysh::shell {

class SeedImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Built-in Ubuntu 20.04 style tree: FHS skeleton, account databases, release
/// files, a few logs and dotfiles.
const VfsNode& default_seed_image();

/// Reads a manifest written by save_seed_image. One tab-separated record per
/// line: kind(d|f) mode(octal) owner group mtime path content-file, where
/// content-file is relative to the manifest's directory or "-" for none.
VfsNode load_seed_image(const std::filesystem::path& manifest);

/// Writes manifest.tsv plus a files/ tree under dir.
void save_seed_image(const VfsNode& root, const std::filesystem::path& dir);

}  // namespace decoysh::shell
