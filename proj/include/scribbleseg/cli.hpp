#pragma once

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "scribbleseg/config.hpp"

namespace scribbleseg {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `scribbleseg` tool. Subcommands: train, eval, predict,
/// make-prompts, synth-data. Logs go to stderr, data to stdout and files.
int run_cli(int argc, const char* const* argv);
/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
            std::ostream& err = std::cerr);

/// `--key-name` spelling of a config key.
std::string flag_for_key(const std::string& key);

/// Config stored inside a checkpoint.
Config read_checkpoint_config(const std::filesystem::path& checkpoint);

}  // namespace scribbleseg
