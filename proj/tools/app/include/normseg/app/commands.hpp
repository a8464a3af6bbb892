#pragma once

// File-based subcommands. Each returns a process exit code; exceptions are
// mapped to codes by `exit_code_for`.

#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "normseg/app/config.hpp"

namespace normseg::app {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitIo = 2, kExitGate = 3 };

struct CommandOptions {
  RunConfig config = default_config();
  std::optional<std::filesystem::path> out;
  bool emit_intermediates = false;
};

int cmd_phantom(const CommandOptions& opt, std::ostream& log);
int cmd_synth(const CommandOptions& opt, std::ostream& log);
int cmd_train(const CommandOptions& opt, std::ostream& log);
int cmd_testset(const CommandOptions& opt, std::ostream& log);
/// `volume` is raw HU or windowed intensities; `lung` the lung mask.
int cmd_infer(const CommandOptions& opt, const std::filesystem::path& volume, const std::filesystem::path& lung,
              const std::string& case_id, std::ostream& log);
/// Scores `<id>_pred.vol3` in `predictions` against `<id>_lesion.vol3` in `truth`.
int cmd_eval(const CommandOptions& opt, const std::filesystem::path& truth, const std::filesystem::path& predictions,
             std::ostream& log);
int cmd_pipeline(const CommandOptions& opt, const std::optional<std::filesystem::path>& healthy, std::ostream& log);

int exit_code_for(const std::exception& e);

}  // namespace normseg::app
