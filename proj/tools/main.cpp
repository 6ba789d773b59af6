// scabi: simulate / train / evaluate / compare / all for one experiment config.

#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "scabi/pipeline.hpp"

namespace {

using namespace scabi;
namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string checkpoint;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::vector<std::string> reports;  // compare: two report.json files
};

void log_line(const std::string& msg) { std::fprintf(stderr, "[scabi] %s\n", msg.c_str()); }

pipeline::ExperimentConfig load(const Options& o) {
  auto cfg = pipeline::load_config(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  cfg.validate();
  return cfg;
}

// With --checkpoint, a single (seed, variant) run is addressed; the seed and
// variant come from the config (one of each) or, for evaluate, the header.
std::pair<std::uint64_t, training::Variant> single_run(const pipeline::ExperimentConfig& cfg, const Options& o,
                                                       bool from_header) {
  if (from_header && fs::exists(o.checkpoint)) {
    const auto h = training::read_checkpoint_header(o.checkpoint);
    return {h.at("seed").get<std::uint64_t>(), training::variant_from_string(h.at("variant").get<std::string>())};
  }
  if (cfg.seeds.size() != 1 || cfg.variants.size() != 1) {
    throw ConfigError("--checkpoint needs exactly one seed and one variant (use --seed-override)");
  }
  return {cfg.seeds.front(), cfg.variants.front()};
}

int run(const std::string& command, const Options& o) {
  Eigen::setNbThreads(o.threads);
  if (command == "compare" && !o.reports.empty()) {
    if (o.reports.size() != 2) throw ConfigError("compare takes exactly two report files");
    const auto result = pipeline::compare_reports(o.reports[0], o.reports[1], o.out, log_line);
    nlohmann::json brief = result.at("metrics");
    for (auto& m : brief) m.erase("deltas");
    std::cout << brief.dump(2) << "\n";
    return 0;
  }
  if (o.config.empty()) throw ConfigError("--config is required");
  const auto cfg = load(o);
  const pipeline::Layout layout{o.out};
  pipeline::write_resolved_config(cfg, layout);
  const bool single = !o.checkpoint.empty();
  if (command == "simulate") {
    pipeline::simulate(cfg, layout, log_line);
  } else if (command == "train") {
    if (single) {
      const auto [seed, variant] = single_run(cfg, o, false);
      pipeline::train_run(cfg, layout, seed, variant, log_line, fs::path(o.checkpoint));
    } else {
      pipeline::train(cfg, layout, log_line);
    }
  } else if (command == "evaluate") {
    if (single) {
      const auto [seed, variant] = single_run(cfg, o, true);
      const auto task = simulators::make_task(cfg.task);
      const auto bed = pipeline::make_test_bed(cfg, *task, seed);
      pipeline::evaluate_run(cfg, layout, seed, variant, bed, log_line, fs::path(o.checkpoint));
    } else {
      pipeline::evaluate(cfg, layout, log_line);
    }
  } else if (command == "compare") {
    const auto result = pipeline::compare(cfg, layout, log_line);
    std::cout << result.at("summary").dump(2) << "\n";
  } else {
    pipeline::run_all(cfg, layout, log_line);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortized Bayesian inference with self-consistency losses"};
  app.require_subcommand(1);
  Options opts;
  std::string command;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"simulate", "Simulate training and validation sets"},
      {"train", "Train every (seed, variant) run"},
      {"evaluate", "Evaluate trained runs and write reports"},
      {"compare", "Compare each variant with its self-consistent counterpart, or two given reports"},
      {"all", "simulate, train, evaluate and compare"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    if (name == "compare") sub->add_option("reports", opts.reports, "Two report.json files (A B) to compare directly");
    sub->add_option("--checkpoint", opts.checkpoint, "Checkpoint file for a single run");
    sub->add_option("--out", opts.out, "Output directory")->capture_default_str();
    sub->add_option("--seed-override", opts.seed, "Replace the config seeds with this one");
    sub->add_option("--threads", opts.threads, "Eigen worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    sub->callback([&command, name = name] { command = name; });
  }
  CLI11_PARSE(app, argc, argv);
  try {
    return run(command, opts);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
