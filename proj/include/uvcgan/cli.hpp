#pragma once

#include <string>
#include <vector>

namespace uvcgan {

// Name of the environment variable that enables deterministic mode: one
// intra-op thread and wall-clock fields written as 0.
inline constexpr const char* kDeterministicEnv = "UVCGAN_DETERMINISTIC";

bool deterministic_mode();

// Exit codes: 0 success, 2 configuration error, 3 runtime error.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace uvcgan
