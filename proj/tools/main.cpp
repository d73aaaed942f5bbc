#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "missmod/errors.hpp"
#include "missmod/experiment.hpp"

using namespace missmod;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitInput = 2;

struct Common {
  std::string config;
  std::string seeds;
  std::string out;
  std::vector<std::string> overrides;
  std::size_t workers = 0;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  try {
    if (text.find(',') == std::string::npos) {
      const auto n = std::stoull(text);
      if (n == 0) throw ConfigError("--seeds needs at least one seed");
      for (std::uint64_t s = 0; s < n; ++s) out.push_back(s);
      return out;
    }
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(std::stoull(item));
  } catch (const std::logic_error&) {
    throw ConfigError("--seeds expects a count or a comma-separated list, got '" + text + "'");
  }
  return out;
}

ExperimentConfig load(const Common& c) {
  auto overrides = c.overrides;
  if (!c.out.empty()) overrides.push_back("output.dir=\"" + c.out + "\"");
  if (c.workers) overrides.push_back("run.workers=" + std::to_string(c.workers));
  auto cfg = c.config.empty() ? parse_experiment_config("{}", overrides) : load_experiment_config(c.config, overrides);
  if (!c.seeds.empty()) {
    cfg.seeds = parse_seeds(c.seeds);
    cfg.validate();
  }
  return cfg;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON experiment config (flat dotted keys)");
  cmd->add_option("--seeds", c.seeds, "number of seeds (0..N-1) or a comma-separated list");
  cmd->add_option("--out", c.out, "output directory (overrides output.dir)");
  cmd->add_option("--override", c.overrides, "key=value applied on top of the config")->take_all();
  cmd->add_option("--workers", c.workers, "parallel training jobs");
}

void print_table(const ExperimentResult& r) {
  std::printf("%-9s %-8s %-8s %-9s %8s %8s\n", "method", "train", "test", "metric", "mean", "std");
  for (const auto& s : r.summary) {
    std::printf("%-9s %-8s %-8s %-9s %8.4f ", s.method.c_str(), s.train_pattern.c_str(), s.test_pattern.c_str(),
                s.metric.c_str(), s.mean);
    if (s.std) std::printf("%8.4f\n", *s.std);
    else std::printf("%8s\n", "-");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"missing-modality multimodal experiments on synthetic data"};
  app.require_subcommand(1);

  Common run_opts;
  auto* run = app.add_subcommand("run", "train and evaluate a config over its seeds and test grid");
  add_common(run, run_opts);

  Common ablate_opts;
  std::string dimension;
  auto* ablate = app.add_subcommand("ablate", "vary one dimension of a config over its grid");
  add_common(ablate, ablate_opts);
  ablate->add_option("dimension", dimension, "prompt_len | masking | peft | vicreg_terms | predictor_variant | coefficients")
      ->required();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "summarise a result directory");
  report->add_option("dir", report_dir, "directory written by run or ablate")->required();

  Common show_opts;
  auto* show = app.add_subcommand("config", "print the effective config (defaults resolved)");
  add_common(show, show_opts);

  auto* schema = app.add_subcommand("schema", "list config keys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*run) {
      const auto cfg = load(run_opts);
      const auto result = run_experiment(cfg, std::filesystem::path(cfg.output_dir));
      print_table(result);
      std::printf("wrote %s (config %s)\n", cfg.output_dir.c_str(), result.config_hash.c_str());
    } else if (*ablate) {
      const auto cfg = load(ablate_opts);
      (void)ablation_grid(dimension);  // reject unknown dimensions before any work
      const auto rows = run_ablation(cfg, dimension, std::filesystem::path(cfg.output_dir));
      std::printf("%-18s %-8s %-8s %8s %8s %10s\n", "variant", "train", "test", "mean", "std", "encoder%");
      for (const auto& r : rows) {
        std::printf("%-18s %-8s %-8s %8.4f ", r.variant.c_str(), r.cell.train_pattern.c_str(),
                    r.cell.test_pattern.c_str(), r.cell.mean);
        if (r.cell.std) std::printf("%8.4f", *r.cell.std);
        else std::printf("%8s", "-");
        std::printf(" %10.3f\n", r.trainable_percent);
      }
      std::printf("wrote %s/ablation_%s.csv\n", cfg.output_dir.c_str(), dimension.c_str());
    } else if (*report) {
      std::cout << report_text(report_dir);
    } else if (*show) {
      std::cout << to_json_text(load(show_opts));
    } else if (*schema) {
      for (const auto& e : experiment_schema()) {
        std::printf("%-32s %-8s %s\n", e.key.c_str(), e.type.c_str(), e.help.c_str());
      }
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitInput;
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
