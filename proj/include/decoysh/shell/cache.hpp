#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "decoysh/shell/vfs.hpp"

namespace decoysh::shell {

class CacheError : public std::runtime_error {
 public:
  CacheError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Canned answers keyed by normalised command line. Templates may use
/// {user}, {hostname} and {cwd}.
struct DictionaryCache {
  std::map<std::string, std::string> entries;
  bool operator==(const DictionaryCache&) const = default;
};

/// Trims and collapses runs of blanks to one space.
std::string normalize_command(std::string_view raw);

std::string render_template(std::string_view tmpl, const VfsState& state);

std::optional<std::string> lookup_cache(const DictionaryCache& cache, const VfsState& state,
                                        std::string_view raw);

/// The shipped 25-entry cache.
const DictionaryCache& default_cache();

/// File format: first line "# decoysh command cache v1", then one
/// "<command>\t<template>" record per line. Templates escape newline, tab and
/// backslash as \n, \t and \\. Blank lines and lines starting with '#' are skipped.
DictionaryCache parse_cache(std::string_view text);
DictionaryCache load_cache(const std::filesystem::path& path);
std::string serialize_cache(const DictionaryCache& cache);

}  // namespace decoysh::shell
