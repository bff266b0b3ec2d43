#pragma once

#include <string>
#include <vector>

namespace afford3d::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

// Entry point of the `afford3d` tool. args excludes the program name.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

// Blue (p = 0) to red (p = 1) color for a probability, 8-bit channels.
struct Rgb {
  int r, g, b;
};
Rgb heat_color(double p);

}  // namespace afford3d::cli
