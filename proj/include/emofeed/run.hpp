#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "emofeed/run_config.hpp"

namespace emofeed {

enum class Command { kBuildDataset, kTrain, kFeedback, kEval, kRewardCheck };

std::string_view to_string(Command command);
Command parse_command(std::string_view name);

/// Exit status for an exception escaping a command: 1 validation, 2 numeric,
/// 3 remote. Anything else counts as a validation failure.
int exit_code_for(const std::exception& error);

/// Exclusive owner of a run directory for the lifetime of the object.
/// Refuses a non-empty directory unless `force`, in which case the old
/// contents are removed.
class RunDirectory {
 public:
  RunDirectory(std::filesystem::path root, bool force);
  ~RunDirectory();
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& name) const { return root_ / name; }
  /// Writes through a temporary file and renames it into place.
  std::filesystem::path write(const std::string& name, const std::string& content) const;

 private:
  std::filesystem::path root_;
  int lock_fd_ = -1;
};

struct RunReport {
  std::string run_id;
  Command command = Command::kTrain;
  std::string started;
  std::string finished;
  int exit_code = 0;
  std::string error;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  std::vector<std::string> artifacts;  ///< relative to the run directory

  nlohmann::ordered_json to_json() const;
};

/// Runs one command against a fully resolved config. Human-readable progress
/// goes to `out` and to run.log; errors go to `err`. Returns the exit code.
int execute(Command command, const RunConfig& config, bool force, std::ostream& out,
            std::ostream& err);

}  // namespace emofeed
