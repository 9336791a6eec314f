#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "goatlab/costmodel.hpp"
#include "goatlab/errors.hpp"
#include "goatlab/runconfig.hpp"
#include "goatlab/trainer.hpp"
#include "goatlab/verify.hpp"

namespace {

namespace fs = std::filesystem;
using goatlab::RunConfig;
using goatlab::TrainConfig;
using goatlab::TrainResult;

int run_verify(const std::string& suite, std::uint64_t seed) {
  std::vector<goatlab::SuiteResult> results;
  if (suite == "cost") {
    results.push_back(goatlab::verify_cost_suite());
  } else if (suite == "lemmas") {
    results.push_back(goatlab::verify_lemmas_suite(seed));
  } else if (suite == "gradients") {
    results.push_back(goatlab::verify_gradients_suite(seed));
  } else if (suite == "alignment") {
    results.push_back(goatlab::verify_alignment_suite(seed));
  } else if (suite == "all") {
    results = goatlab::verify_all_suites(seed);
  } else {
    std::cerr << "unknown suite '" << suite
              << "' (expected lemmas, gradients, alignment, cost or all)\n";
    return 2;
  }
  bool ok = true;
  for (const goatlab::SuiteResult& result : results) {
    goatlab::print_suite(std::cout, result);
    ok = ok && result.all_passed();
  }
  std::cout << (ok ? "all checks passed" : "some checks FAILED") << "\n";
  return ok ? 0 : 1;
}

nlohmann::json run_summary(const TrainResult& result, const TrainConfig& config) {
  nlohmann::json summary;
  summary["variant"] = to_string(config.variant);
  summary["seed"] = config.seed;
  summary["steps"] = config.steps;
  summary["final_loss"] = result.final_loss();
  summary["final_balance_loss"] = result.metrics.back().balance;
  summary["final_loads"] = result.metrics.back().loads;
  summary["final_weight_gap"] = result.metrics.back().weight_gap;
  if (result.diverged_at) summary["diverged_at"] = *result.diverged_at;
  return summary;
}

TrainResult execute_single(const TrainConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  TrainResult result = goatlab::train_run(config);
  {
    std::ofstream metrics(dir / "metrics.csv");
    goatlab::write_metrics_csv(metrics, result.metrics, result.expert_count);
  }
  {
    std::ofstream summary(dir / "summary.json");
    summary << run_summary(result, config).dump(2) << "\n";
  }
  if (result.layer) {
    goatlab::save_layer(dir / "snapshot", *result.layer, config.seed);
  }
  return result;
}

int run_train(const std::string& config_path) {
  const RunConfig config = goatlab::load_run_config(config_path);
  if (config.output_dir.empty()) {
    throw goatlab::config_error("train requires 'output_dir' in the config");
  }
  const fs::path out(config.output_dir);
  fs::create_directories(out);
  {
    std::ofstream copy(out / "config.json");
    copy << goatlab::run_config_to_json(config) << "\n";
  }

  const bool paired = !config.compare_with.empty() || config.num_seeds > 1;
  if (!paired) {
    const TrainResult result = execute_single(config.train, out);
    if (result.diverged_at) {
      std::cerr << "run diverged at step " << *result.diverged_at
                << "; partial metrics retained\n";
      return 1;
    }
    std::cout << "final loss " << std::setprecision(10) << result.final_loss() << "\n";
    return 0;
  }

  std::vector<goatlab::TrainVariant> variants = {config.train.variant};
  if (!config.compare_with.empty()) {
    variants.push_back(goatlab::train_variant_from_string(config.compare_with));
  }
  nlohmann::json summary;
  bool diverged = false;
  for (goatlab::TrainVariant variant : variants) {
    std::vector<double> finals;
    nlohmann::json per_seed = nlohmann::json::array();
    for (std::size_t i = 0; i < config.num_seeds; ++i) {
      TrainConfig train = config.train;
      train.variant = variant;
      train.seed = config.train.seed + i;
      std::ostringstream leaf;
      leaf << to_string(variant) << "-seed" << train.seed;
      const TrainResult result = execute_single(train, out / leaf.str());
      diverged = diverged || result.diverged_at.has_value();
      finals.push_back(result.final_loss());
      per_seed.push_back(run_summary(result, train));
    }
    std::vector<double> sorted = finals;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    nlohmann::json block;
    block["median_final_loss"] = median;
    block["final_losses"] = finals;
    block["runs"] = per_seed;
    summary[to_string(variant)] = block;
    std::cout << to_string(variant) << " median final loss " << std::setprecision(10) << median
              << "\n";
  }
  if (variants.size() == 2) {
    const double primary = summary[to_string(variants[0])]["median_final_loss"].get<double>();
    const double baseline = summary[to_string(variants[1])]["median_final_loss"].get<double>();
    summary["comparison"] = {{"primary", to_string(variants[0])},
                             {"baseline", to_string(variants[1])},
                             {"primary_beats_baseline", primary <= baseline}};
  }
  std::ofstream file(out / "summary.json");
  file << summary.dump(2) << "\n";
  return diverged ? 1 : 0;
}

int run_inspect_init(const std::string& config_path) {
  const RunConfig config = goatlab::load_run_config(config_path);
  const goatlab::SyntheticTask task = goatlab::make_task(config.train);
  const goatlab::GoatLayer layer = goatlab::build_layer(config.train, task);
  const goatlab::SvdFactors factors = goatlab::svd(task.w0);

  std::cout << "variant " << to_string(config.train.variant) << ", strategy "
            << to_string(config.train.strategy) << ", E=" << layer.experts.size()
            << ", k=" << layer.router.k << ", rho=" << layer.rho << "\n";
  std::cout << std::left << std::setw(8) << "expert" << std::setw(8) << "start" << std::setw(8)
            << "width" << std::setw(16) << "sigma_sum" << std::setw(16) << "|b_i a_i|_F"
            << std::setw(12) << "scale" << "\n";
  std::cout << std::setprecision(6) << std::fixed;
  for (std::size_t i = 0; i < layer.experts.size(); ++i) {
    const goatlab::ExpertPair& expert = layer.experts[i];
    double sigma_sum = 0.0;
    std::size_t start = 0, width = 0;
    if (expert.source) {
      start = expert.source->start;
      width = expert.source->width;
      sigma_sum = goatlab::segment_sigma_sum(factors, start, width);
    }
    const double ba_norm = goatlab::frobenius_norm(goatlab::matmul(expert.b, expert.a));
    std::cout << std::left << std::setw(8) << (i + 1) << std::setw(8) << start << std::setw(8)
              << width << std::setw(16) << sigma_sum << std::setw(16) << ba_norm << std::setw(12)
              << layer.scales[i] << "\n";
  }
  const goatlab::Matrix residual =
      layer.w_base + goatlab::compute_w_res(layer.experts, layer.scales) - task.w0;
  std::cout.unsetf(std::ios::fixed);
  std::cout << "alignment residual " << std::setprecision(6) << goatlab::frobenius_norm(residual)
            << ", w_res norm "
            << goatlab::frobenius_norm(goatlab::compute_w_res(layer.experts, layer.scales))
            << "\n";
  return 0;
}

void print_cost_row(const goatlab::BackboneSpec& spec, goatlab::CostMethod method) {
  const goatlab::CostReport report = goatlab::param_count(spec, method);
  std::cout << std::left << std::setw(14) << to_string(method) << std::right << std::setw(16)
            << std::setprecision(12) << report.trainable_params << std::setw(10)
            << goatlab::format_proportion(report) << "%";
  if (report.flops > 0.0) {
    std::cout << "  flops=" << std::setprecision(6) << report.flops;
  }
  std::cout << "\n";
}

int run_cost(const std::string& backbone_name, const std::string& method_name, bool table) {
  const goatlab::Backbone backbone = goatlab::backbone_from_string(backbone_name);
  const goatlab::BackboneSpec spec = goatlab::default_backbone(backbone);
  if (table) {
    std::cout << "backbone " << spec.name << " (H=" << spec.hidden << ", L=" << spec.layers
              << ", r=" << spec.rank << ", e=" << spec.experts << ", k=" << spec.active << ")\n";
    std::cout << std::left << std::setw(14) << "method" << std::right << std::setw(16) << "trainable"
              << std::setw(11) << "percent" << "\n";
    for (goatlab::CostMethod method : goatlab::methods_for(backbone)) {
      print_cost_row(spec, method);
    }
    return 0;
  }
  print_cost_row(spec, goatlab::cost_method_from_string(method_name));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"goatlab: segment-initialized adapter mixtures, verification and cost tools"};
  app.require_subcommand(1);

  std::string suite = "all";
  std::uint64_t seed = 1234;
  CLI::App* verify = app.add_subcommand("verify", "run a verification suite");
  verify->add_option("suite", suite, "lemmas | gradients | alignment | cost | all");
  verify->add_option("--seed", seed, "seed for the randomized checks");

  std::string train_config;
  CLI::App* train = app.add_subcommand("train", "train on a synthetic task from a JSON config");
  train->add_option("--config", train_config, "path to the run config")->required();

  std::string inspect_config;
  CLI::App* inspect = app.add_subcommand("inspect-init", "report the configured initialization");
  inspect->add_option("--config", inspect_config, "path to the run config")->required();

  std::string backbone, method;
  bool table = false;
  CLI::App* cost = app.add_subcommand("cost", "parameter and FLOPs estimates");
  cost->add_option("backbone", backbone, "roberta-large | vit-base | llama2-7b")->required();
  cost->add_option("method", method, "cost method name (see --table for the list)");
  cost->add_flag("--table", table, "print every method for the backbone");

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) return run_verify(suite, seed);
    if (train->parsed()) return run_train(train_config);
    if (inspect->parsed()) return run_inspect_init(inspect_config);
    if (cost->parsed()) {
      if (!table && method.empty()) {
        std::cerr << "cost: give a method name or --table\n";
        return 2;
      }
      return run_cost(backbone, method, table);
    }
  } catch (const goatlab::config_error& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
