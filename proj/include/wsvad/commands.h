#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "wsvad/run_config.h"

namespace wsvad {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;    // bad flags, config or inputs; nothing written
inline constexpr int kExitRuntime = 3;  // failure after outputs started

int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_pseudo(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err);
/// synth, then train, then eval with the same configuration.
int cmd_pipeline(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Full command line (without the program name), e.g. {"train", "--config", "run.json"}.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wsvad
