#pragma once

#include <cstdint>
#include <ostream>
#include <string>

namespace bware {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitInternal = 3;

struct CliConfig {
  std::string subcommand;
  std::string input;
  std::string output;
  std::string spec;
  std::uint32_t tile_rows = 16384;
  std::size_t threads = 0;
  std::uint64_t seed = 7;
  // text | json
  std::string format = "text";
};

// Entry point of the bware tool; argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bware
