#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace lumisplit::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kDataError = 3, kCheckpointError = 4 };

/// Runs one command. `args` excludes the program name. Errors are written to
/// `err` as a single JSON line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Keeps large scratch buffers on the heap between training steps instead of
/// mapping fresh pages each time. No-op outside glibc.
void tune_allocator();

/// Git-style content hash: SHA-1 over the sorted list of (relative path,
/// blob hash) entries of every regular file under the given paths.
std::string content_hash(const std::vector<std::filesystem::path>& inputs);

}  // namespace lumisplit::cli
