#include <iostream>
#include <map>

#include "CLI11.hpp"

#include "emofeed/run.hpp"

namespace {

std::string flag_name(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace emofeed;
  CLI::App app{"emotion-conditioned generation: dataset, training, feedback refinement"};
  app.require_subcommand(1);

  struct Selected {
    std::string config_file;
    bool force = false;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
  };
  std::map<std::string, Selected> per_command;

  const std::vector<std::pair<Command, std::string>> commands = {
      {Command::kBuildDataset, "build the emotion dataset from a lexicon and captions"},
      {Command::kTrain, "train the toy generator with GRPO"},
      {Command::kFeedback, "run the evaluate/refine loop on a trained generator"},
      {Command::kEval, "report V-Error and A-Error of a checkpoint"},
      {Command::kRewardCheck, "score a transcript corpus against a ground-truth sidecar"},
  };
  for (const auto& [command, help] : commands) {
    const std::string name(to_string(command));
    Selected& sel = per_command[name];
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", sel.config_file, "key = value file applied before flags");
    sub->add_flag("--force", sel.force, "overwrite a non-empty run directory");
    for (const auto& [key, key_help] : RunConfig::keys()) {
      if (key == "plot") {
        sel.options[key] = sub->add_flag_callback(
            flag_name(key), [&sel] { sel.values["plot"] = "true"; }, key_help);
      } else {
        sel.options[key] = sub->add_option(flag_name(key), sel.values[key], key_help);
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (const auto& [command, help] : commands) {
    const std::string name(to_string(command));
    if (!app.got_subcommand(name)) continue;
    const Selected& sel = per_command[name];
    RunConfig config;
    try {
      if (!sel.config_file.empty()) config.apply_file(sel.config_file);
      for (const auto& [key, option] : sel.options) {
        if (option->count() > 0) config.set(key, sel.values.at(key));
      }
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return exit_code_for(e);
    }
    return execute(command, config, sel.force, std::cout, std::cerr);
  }
  return 1;
}
