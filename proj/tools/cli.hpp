#pragma once

namespace smoothlab::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;   // bad flags, invalid configuration, empty inputs
inline constexpr int kIo = 3;      // unreadable or unwritable files, bad formats
inline constexpr int kSolver = 4;  // solver or training failure

int run(int argc, char** argv);

}  // namespace smoothlab::cli
