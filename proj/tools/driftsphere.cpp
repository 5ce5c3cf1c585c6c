#include "driftsphere/cli/commands.hpp"
#include "driftsphere/cli/config.hpp"
#include "driftsphere/errors.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>

using namespace driftsphere;

int main(int argc, char** argv) {
  CLI::App app{"Thp spherical alignment, KNN OOD detection and drift simulation"};
  std::string command, config_path, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss;
  app.add_option("command", command, "gen | pretrain | finetune | eval-align | eval-ood | drift-sim | ablate-kappa")
      ->required()
      ->check(CLI::IsMember(cli::command_names()));
  app.add_option("--config", config_path, "JSON run configuration")->required();
  app.add_option("--seed", seed, "override the global seed");
  app.add_option("--out", out, "override the output directory");
  app.add_option("--loss", loss, "pre-training logits")->check(CLI::IsMember({"thp", "cosine", "vmf"}));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kConfigError;
  }

  try {
    cli::RunConfig cfg = cli::load_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.gen.seed = *seed;
    }
    if (!out.empty()) cfg.out = out;
    if (loss) cfg.pretrain.loss = parse_logit_kind(*loss);
    cfg.validate();
    cli::run_command(command, cfg, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "driftsphere " << command << ": " << e.what() << "\n";
    return cli::exit_code_for(e);
  }
  return cli::kOk;
}
