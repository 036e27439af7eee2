#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

namespace emo::cli {

/// Runs one subcommand (split, export, train-head, infer, eval, compare).
/// Returns the process exit code; errors are reported on `err` as
/// `error[<category>]: <message>`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Exit code for an error category name; 0 is success.
int exit_code_for(std::string_view category);

/// SHA-1 of "blob <size>\0<content>", hex encoded (same as `git hash-object`).
std::string git_blob_hash(std::string_view content);
std::string git_blob_hash_file(const std::filesystem::path& path);

}  // namespace emo::cli
