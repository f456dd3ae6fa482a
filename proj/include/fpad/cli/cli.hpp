#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

#include "fpad/common/kv_text.hpp"

// Command-line driver: gen, train, sweep, eval and report. Each command
// resolves its configuration (built-in defaults, then --config file, then
// flags), writes it to <out>/run.txt before doing any work and echoes it.
namespace fpad::cli {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int internal = 1;
inline constexpr int usage = 2;
inline constexpr int protocol = 3;
inline constexpr int io = 4;
inline constexpr int numeric = 5;
}  // namespace exit_code

// Maps a library exception onto the exit code contract.
int exit_code_for(const std::exception& e);

// `args` excludes the program name. Diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Every key a config file may set, with its built-in default.
KeyValues default_config();

}  // namespace fpad::cli
